"""A walk through the wire codec: frames, checksums, CompactSize, payloads.

Run: python3 demos/01_wire_messages.py
"""

from chainobs import wirecodec as wc


def dump(label, data):
    print(f"{label:>22}: {data.hex(' ')}")


print("== Message framing ==")
print("A frame is a 24-byte header followed by the payload:")
print("magic(4) | command(12, NUL-padded) | length(4, LE) | checksum(4)\n")

frame = wc.encode_message("verack", b"", wc.MAINNET_MAGIC)
dump("verack frame", frame)
dump("magic", frame[:4])
dump("command", frame[4:16])
dump("checksum", frame[20:24])
print("The checksum of an empty payload is the first 4 bytes of")
print("SHA-256(SHA-256(b'')), which is always 5d f6 e0 e2.\n")

command, payload = wc.decode_message(frame, wc.MAINNET_MAGIC)
print(f"decode_message round-trips to: command={command!r}, payload={payload!r}\n")

print("Tampering with a single byte is caught by the checksum:")
broken = bytearray(wc.encode_message("ping", wc.encode_ping(42), wc.MAINNET_MAGIC))
broken[-1] ^= 0xFF
try:
    wc.decode_message(bytes(broken), wc.MAINNET_MAGIC)
except wc.BadChecksumError as exc:
    print(f"  BadChecksumError: {exc}\n")

print("== CompactSize ==")
print("Variable-length counts use 1, 3, 5, or 9 bytes depending on the value:")
for value in (0, 252, 253, 65535, 65536, 2**32):
    dump(f"{value}", wc.encode_varint(value))
print("Decoding rejects values encoded wider than necessary:")
try:
    wc.decode_varint(bytes.fromhex("fd1000"))  # 16 doesn't need 3 bytes
except wc.NonCanonicalError as exc:
    print(f"  NonCanonicalError: {exc}\n")

print("== version payload ==")
version = wc.VersionPayload(
    protocol_version=wc.PROTOCOL_VERSION,
    services=wc.NODE_NETWORK | wc.NODE_WITNESS,
    timestamp=1_557_200_000,
    receiver=wc.NetAddress(0, "93.184.216.34", 8333),
    sender=wc.NULL_ADDRESS,
    nonce=0xDEADBEEF,
    user_agent="/demo:0.1/",
    start_height=575_000,
)
encoded = wc.encode_version(version)
print(f"encoded length: {len(encoded)} bytes")
decoded = wc.decode_version(encoded)
print(f"round-trip user agent: {decoded.user_agent}, height: {decoded.start_height}\n")

print("== addr payload ==")
entries = [
    wc.AddrEntry(1_557_200_000, wc.NODE_NETWORK, "10.0.0.1", 8333),
    wc.AddrEntry(1_557_200_000, wc.NODE_NETWORK, "2001:db8::7", 8333),
]
addr_payload = wc.encode_addr(entries)
print(f"{len(entries)} entries -> {len(addr_payload)} bytes (CompactSize count + 30 bytes each)")
print("IPv4 rides inside 16-byte fields as v4-mapped IPv6:")
dump("10.0.0.1 as bytes16", wc.ip_to_bytes16("10.0.0.1"))
for entry in wc.decode_addr(addr_payload):
    print(f"  decoded entry: {entry.ip}:{entry.port} services={entry.services}")
