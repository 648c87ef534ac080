"""Codec for the small Bitcoin wire-message subset a network census needs.

Covers message framing plus the ``version``, ``verack``, ``getaddr``,
``addr``, ``ping`` and ``pong`` payloads.

Frame layout (24-byte header followed by the payload)::

    magic(4) | command(12, NUL-padded ASCII) | length(4, LE) | checksum(4)

``checksum`` is the first four bytes of SHA-256(SHA-256(payload)).  Integers
inside payloads are little-endian, except ports, which ride big-endian inside
26/30-byte network-address records (IPv4 stored as v4-mapped IPv6).
Variable-length counts use Bitcoin's CompactSize encoding; non-canonical
encodings are rejected on decode and never emitted.

Everything here is a pure function over byte sequences: no sockets, no
clocks, no shared state, safe from any number of threads.  Decoders either
return a value or raise a :class:`CodecError` subclass; they never raise
anything else, regardless of input bytes.
"""

from __future__ import annotations

import hashlib
import ipaddress
import struct
from dataclasses import dataclass

MAINNET_MAGIC = b"\xf9\xbe\xb4\xd9"
SIMNET_MAGIC = b"\xfa\xce\xb0\x0c"

HEADER_SIZE = 24
MAX_PAYLOAD_SIZE = 4 * 1024 * 1024
MAX_COMMAND_SIZE = 12
MAX_ADDR_ENTRIES = 1000
MAX_USER_AGENT_BYTES = 256

# Modal protocol version on the measured network; what we speak when probing.
PROTOCOL_VERSION = 70015
DEFAULT_PORT = 8333

NODE_NETWORK = 1 << 0
NODE_BLOOM = 1 << 2
NODE_WITNESS = 1 << 3
NODE_NETWORK_LIMITED = 1 << 10


class CodecError(Exception):
    """Base class for every wire decode/encode failure."""


class BadMagicError(CodecError):
    pass


class BadChecksumError(CodecError):
    pass


class TruncatedError(CodecError):
    pass


class TrailingDataError(CodecError):
    """Bytes left over after a complete, valid structure."""


class OversizedPayloadError(CodecError):
    pass


class CommandTooLongError(CodecError):
    pass


class BadCommandError(CodecError):
    """Command field is not printable ASCII followed by NUL padding."""


class NonCanonicalError(CodecError):
    """CompactSize value encoded wider than necessary."""


class TooManyAddrEntriesError(CodecError):
    pass


class UserAgentTooLongError(CodecError):
    pass


def checksum(payload: bytes) -> bytes:
    """First 4 bytes of double SHA-256 of the payload."""
    return hashlib.sha256(hashlib.sha256(payload).digest()).digest()[:4]


# --- CompactSize ---------------------------------------------------------


def encode_varint(value: int) -> bytes:
    if value < 0:
        raise ValueError("CompactSize encodes unsigned values only")
    if value < 0xFD:
        return struct.pack("<B", value)
    if value <= 0xFFFF:
        return struct.pack("<BH", 0xFD, value)
    if value <= 0xFFFFFFFF:
        return struct.pack("<BI", 0xFE, value)
    if value <= 0xFFFFFFFFFFFFFFFF:
        return struct.pack("<BQ", 0xFF, value)
    raise ValueError("value exceeds 64 bits")


def decode_varint(data: bytes, offset: int = 0) -> tuple[int, int]:
    """Decode a CompactSize at ``offset``; returns (value, bytes consumed).

    Raises :class:`NonCanonicalError` when the value was encoded wider than
    the rules require, so decode(encode(n)) is the only accepted form.
    """
    if offset >= len(data):
        raise TruncatedError("empty CompactSize")
    first = data[offset]
    if first < 0xFD:
        return first, 1
    widths = {0xFD: (2, 0xFD), 0xFE: (4, 0x10000), 0xFF: (8, 0x100000000)}
    width, minimum = widths[first]
    end = offset + 1 + width
    if end > len(data):
        raise TruncatedError("CompactSize body cut short")
    value = int.from_bytes(data[offset + 1 : end], "little")
    if value < minimum:
        raise NonCanonicalError(f"{value} encoded with {width}-byte CompactSize")
    return value, 1 + width


# --- IP helpers ----------------------------------------------------------


def ip_to_bytes16(ip: str) -> bytes:
    """Pack an IPv4/IPv6 text address into the 16-byte wire form."""
    addr = ipaddress.ip_address(ip)
    if addr.version == 4:
        return b"\x00" * 10 + b"\xff\xff" + addr.packed
    return addr.packed


def bytes16_to_ip(data: bytes) -> str:
    """Unpack a 16-byte wire address to canonical text (v4-mapped -> dotted)."""
    if len(data) != 16:
        raise TruncatedError("IP field must be 16 bytes")
    addr = ipaddress.IPv6Address(data)
    mapped = addr.ipv4_mapped
    return str(mapped) if mapped is not None else str(addr)


def canonical_ip(ip: str) -> str:
    """Canonical text form: v4-mapped IPv6 becomes dotted quad, IPv6 compressed."""
    return bytes16_to_ip(ip_to_bytes16(ip))


# --- message framing -----------------------------------------------------


def _encode_command(command: str) -> bytes:
    try:
        raw = command.encode("ascii")
    except UnicodeEncodeError as exc:
        raise BadCommandError(f"non-ASCII command {command!r}") from exc
    if len(raw) > MAX_COMMAND_SIZE:
        raise CommandTooLongError(command)
    if any(b < 0x20 or b > 0x7E for b in raw):
        raise BadCommandError(f"unprintable byte in command {command!r}")
    return raw.ljust(MAX_COMMAND_SIZE, b"\x00")


def _decode_command(field: bytes) -> str:
    name, _, padding = field.partition(b"\x00")
    if padding.strip(b"\x00"):
        raise BadCommandError("bytes after first NUL must be NUL")
    if any(b < 0x20 or b > 0x7E for b in name):
        raise BadCommandError("unprintable byte in command")
    return name.decode("ascii")


def encode_message(command: str, payload: bytes, magic: bytes) -> bytes:
    """Wrap ``payload`` in a framed message: header + payload."""
    if len(payload) > MAX_PAYLOAD_SIZE:
        raise OversizedPayloadError(f"{len(payload)} byte payload")
    header = magic + _encode_command(command)
    header += struct.pack("<I", len(payload)) + checksum(payload)
    return header + payload


def decode_message_prefix(data: bytes, magic: bytes) -> tuple[str, bytes, int] | None:
    """Try to decode one frame from the front of ``data``.

    Returns ``(command, payload, bytes_consumed)``, or None when more bytes
    are needed.  Errors that are already decidable from the available prefix
    (wrong magic, oversized length, bad checksum) raise immediately, which
    lets stream readers fail fast instead of buffering garbage.
    """
    if len(data) >= 4 and data[:4] != magic:
        raise BadMagicError(data[:4].hex())
    if len(data) < HEADER_SIZE:
        return None
    command = _decode_command(data[4:16])
    (length,) = struct.unpack("<I", data[16:20])
    if length > MAX_PAYLOAD_SIZE:
        raise OversizedPayloadError(f"declared payload of {length} bytes")
    end = HEADER_SIZE + length
    if len(data) < end:
        return None
    payload = bytes(data[HEADER_SIZE:end])
    if checksum(payload) != data[20:24]:
        raise BadChecksumError(command or "<empty>")
    return command, payload, end


def decode_message(data: bytes, magic: bytes) -> tuple[str, bytes]:
    """Decode exactly one complete frame; reject partial or trailing bytes."""
    result = decode_message_prefix(data, magic)
    if result is None:
        raise TruncatedError(f"{len(data)} bytes is not a complete frame")
    command, payload, consumed = result
    if consumed != len(data):
        raise TrailingDataError(f"{len(data) - consumed} bytes after frame")
    return command, payload


# --- payload structures --------------------------------------------------


@dataclass(frozen=True)
class NetAddress:
    """26-byte network-address record as used inside ``version``."""

    services: int
    ip: str
    port: int

    def encode(self) -> bytes:
        return struct.pack("<Q", self.services) + ip_to_bytes16(self.ip) + struct.pack(">H", self.port)

    @classmethod
    def decode(cls, data: bytes, offset: int = 0) -> tuple["NetAddress", int]:
        if offset + 26 > len(data):
            raise TruncatedError("network address record cut short")
        (services,) = struct.unpack_from("<Q", data, offset)
        ip = bytes16_to_ip(data[offset + 8 : offset + 24])
        (port,) = struct.unpack_from(">H", data, offset + 24)
        return cls(services, ip, port), 26


NULL_ADDRESS = NetAddress(0, "::", 0)


@dataclass(frozen=True)
class AddrEntry:
    """One gossiped peer inside an ``addr`` message (30 bytes on the wire)."""

    last_seen: int
    services: int
    ip: str
    port: int

    def encode(self) -> bytes:
        return (
            struct.pack("<IQ", self.last_seen, self.services)
            + ip_to_bytes16(self.ip)
            + struct.pack(">H", self.port)
        )

    @classmethod
    def decode(cls, data: bytes, offset: int = 0) -> tuple["AddrEntry", int]:
        if offset + 30 > len(data):
            raise TruncatedError("addr entry cut short")
        last_seen, services = struct.unpack_from("<IQ", data, offset)
        ip = bytes16_to_ip(data[offset + 12 : offset + 28])
        (port,) = struct.unpack_from(">H", data, offset + 28)
        return cls(last_seen, services, ip, port), 30


@dataclass(frozen=True)
class VersionPayload:
    """Handshake metadata a peer advertises about itself.

    ``start_height`` may be negative on the wire; the decoder carries the
    value through and leaves judging it to the caller.
    """

    protocol_version: int
    services: int
    timestamp: int
    receiver: NetAddress
    sender: NetAddress
    nonce: int
    user_agent: str
    start_height: int
    relay: bool = False


def encode_version(payload: VersionPayload) -> bytes:
    ua = payload.user_agent.encode("utf-8")
    if len(ua) > MAX_USER_AGENT_BYTES:
        raise UserAgentTooLongError(f"{len(ua)} bytes")
    out = struct.pack("<iQq", payload.protocol_version, payload.services, payload.timestamp)
    out += payload.receiver.encode()
    out += payload.sender.encode()
    out += struct.pack("<Q", payload.nonce)
    out += encode_varint(len(ua)) + ua
    out += struct.pack("<i", payload.start_height)
    out += struct.pack("<B", 1 if payload.relay else 0)
    return out


def decode_version(data: bytes) -> VersionPayload:
    """Decode a ``version`` payload.

    Trailing bytes beyond the relay flag are tolerated: newer protocol
    revisions append fields there and we only need the common prefix.
    """
    if len(data) < 20:
        raise TruncatedError("version payload cut short")
    protocol_version, services, timestamp = struct.unpack_from("<iQq", data, 0)
    offset = 20
    receiver, used = NetAddress.decode(data, offset)
    offset += used
    sender, used = NetAddress.decode(data, offset)
    offset += used
    if offset + 8 > len(data):
        raise TruncatedError("version nonce cut short")
    (nonce,) = struct.unpack_from("<Q", data, offset)
    offset += 8
    ua_len, used = decode_varint(data, offset)
    if ua_len > MAX_USER_AGENT_BYTES:
        raise UserAgentTooLongError(f"{ua_len} bytes")
    offset += used
    if offset + ua_len > len(data):
        raise TruncatedError("user agent cut short")
    user_agent = data[offset : offset + ua_len].decode("utf-8", errors="replace")
    offset += ua_len
    if offset + 4 > len(data):
        raise TruncatedError("start height cut short")
    (start_height,) = struct.unpack_from("<i", data, offset)
    offset += 4
    relay = offset < len(data) and data[offset] != 0
    return VersionPayload(
        protocol_version=protocol_version,
        services=services,
        timestamp=timestamp,
        receiver=receiver,
        sender=sender,
        nonce=nonce,
        user_agent=user_agent,
        start_height=start_height,
        relay=relay,
    )


def encode_addr(entries: list[AddrEntry] | tuple[AddrEntry, ...]) -> bytes:
    if len(entries) > MAX_ADDR_ENTRIES:
        raise TooManyAddrEntriesError(str(len(entries)))
    return encode_varint(len(entries)) + b"".join(e.encode() for e in entries)


def decode_addr(data: bytes) -> list[AddrEntry]:
    count, offset = decode_varint(data, 0)
    if count > MAX_ADDR_ENTRIES:
        raise TooManyAddrEntriesError(str(count))
    entries = []
    for _ in range(count):
        entry, used = AddrEntry.decode(data, offset)
        entries.append(entry)
        offset += used
    if offset != len(data):
        raise TrailingDataError(f"{len(data) - offset} bytes after addr entries")
    return entries


def encode_ping(nonce: int) -> bytes:
    return struct.pack("<Q", nonce)


def decode_ping(data: bytes) -> int:
    if len(data) < 8:
        raise TruncatedError("ping nonce cut short")
    if len(data) > 8:
        raise TrailingDataError("ping payload longer than 8 bytes")
    return struct.unpack("<Q", data)[0]


# pong is byte-identical to ping: an echoed 64-bit nonce.
encode_pong = encode_ping
decode_pong = decode_ping
