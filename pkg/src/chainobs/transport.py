"""Byte-stream transport abstraction shared by the crawler and the simnet.

A transport connects to an endpoint and returns a connection object with
four capabilities: send bytes, receive an exact number of bytes under a
timeout, close, and read a connection-local monotonic clock.  The clock is
what makes latency measurement uniform: the TCP transport reports wall
monotonic time, the simulated network reports virtual time, and the crawler
never needs to know which one it got.
"""

from __future__ import annotations

import socket
import time
from dataclasses import dataclass
from typing import Protocol

from .wirecodec import DEFAULT_PORT, canonical_ip


class TransportError(Exception):
    """Base class for connection-level failures."""


class ConnectError(TransportError):
    """Endpoint refused, unreachable, or timed out during connect."""


class RecvTimeoutError(TransportError):
    pass


class ConnectionClosedError(TransportError):
    pass


@dataclass(frozen=True, order=True)
class Endpoint:
    """Canonical (ip, port) key for one network endpoint.

    IPv4-mapped IPv6 input is normalized to dotted-quad text; IPv6 keeps
    its compressed form, which also covers OnionCat-encoded onion peers.
    """

    ip: str
    port: int

    def __str__(self) -> str:
        if ":" in self.ip:
            return f"[{self.ip}]:{self.port}"
        return f"{self.ip}:{self.port}"

    @classmethod
    def make(cls, ip: str, port: int = DEFAULT_PORT) -> "Endpoint":
        return cls(canonical_ip(ip), int(port))

    @classmethod
    def parse(cls, text: str, default_port: int = DEFAULT_PORT) -> "Endpoint":
        """Parse ``ip``, ``ip:port``, ``[v6]`` or ``[v6]:port``."""
        text = text.strip()
        if not text:
            raise ValueError("empty endpoint")
        if text.startswith("["):
            host, bracket, rest = text[1:].partition("]")
            if not bracket:
                raise ValueError(f"unterminated bracket in {text!r}")
            port = int(rest[1:]) if rest.startswith(":") else default_port
            return cls.make(host, port)
        if text.count(":") == 1:
            host, _, port_text = text.partition(":")
            return cls.make(host, int(port_text))
        # zero colons: bare IPv4; two or more: bare IPv6 without a port
        return cls.make(text, default_port)


class Connection(Protocol):
    def send(self, data: bytes) -> None: ...

    def recv_exact(self, n: int, timeout: float) -> bytes: ...

    def close(self) -> None: ...

    def clock(self) -> float: ...


class Transport(Protocol):
    def connect(self, endpoint: Endpoint, timeout: float) -> Connection: ...


class TcpConnection:
    def __init__(self, sock: socket.socket):
        self._sock = sock

    def send(self, data: bytes) -> None:
        try:
            self._sock.sendall(data)
        except OSError as exc:
            raise ConnectionClosedError(str(exc)) from exc

    def recv_exact(self, n: int, timeout: float) -> bytes:
        deadline = time.monotonic() + timeout
        chunks = bytearray()
        while len(chunks) < n:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise RecvTimeoutError(f"needed {n} bytes, got {len(chunks)}")
            self._sock.settimeout(remaining)
            try:
                chunk = self._sock.recv(n - len(chunks))
            except socket.timeout as exc:
                raise RecvTimeoutError(str(exc)) from exc
            except OSError as exc:
                raise ConnectionClosedError(str(exc)) from exc
            if not chunk:
                raise ConnectionClosedError("peer closed the stream")
            chunks += chunk
        return bytes(chunks)

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass

    def clock(self) -> float:
        return time.monotonic()


class TcpTransport:
    """Plain TCP sockets; the transport used against the real network."""

    def connect(self, endpoint: Endpoint, timeout: float) -> TcpConnection:
        try:
            sock = socket.create_connection((endpoint.ip, endpoint.port), timeout=timeout)
        except OSError as exc:
            raise ConnectError(f"{endpoint}: {exc}") from exc
        sock.settimeout(timeout)
        return TcpConnection(sock)
