"""Endpoint classification and offline country/AS annotation.

Network classes are ``ipv4``, ``ipv6``, and ``tor``; onion peers gossip as
OnionCat-encoded IPv6 inside ``fd87:d87e:eb43::/48``, and membership in a
Tor exit list upgrades any address to ``tor``.

Country/ASN metadata comes from plain CSV mapping files with rows of
``prefix,country,asn,org`` (``#`` comments allowed, no header required).
Lookups are longest-prefix matches, deterministic by construction: within
one prefix length there is at most one entry, and when several files are
loaded the first-listed file wins conflicting prefixes while a disagreement
counter records how often the sources differed.
"""

from __future__ import annotations

import csv
import ipaddress
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, AbstractSet, Iterable

if TYPE_CHECKING:
    from .crawler import Snapshot
    from .transport import Endpoint

log = logging.getLogger(__name__)

NET_IPV4 = "ipv4"
NET_IPV6 = "ipv6"
NET_TOR = "tor"

ONIONCAT_NETWORK = ipaddress.ip_network("fd87:d87e:eb43::/48")

UNKNOWN_BUCKET = "unknown"
TOR_BUCKET = "tor"


def classify_network(address: "str | Endpoint", tor_exits: AbstractSet[str] = frozenset()) -> str:
    """Classify a canonical address as ipv4, ipv6, or tor.

    Raises ValueError for strings that are not IP addresses; canonical
    endpoints never trip that.
    """
    ip_text = address if isinstance(address, str) else address.ip
    ip = ipaddress.ip_address(ip_text)
    if str(ip) in tor_exits:
        return NET_TOR
    if ip.version == 6:
        if ip.ipv4_mapped is not None:
            return NET_IPV4
        if ip in ONIONCAT_NETWORK:
            return NET_TOR
        return NET_IPV6
    return NET_IPV4


def load_tor_exits(path: str | Path) -> frozenset[str]:
    """Read a Tor exit list: one IP per line, ``#`` comments."""
    exits = set()
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            exits.add(str(ipaddress.ip_address(line)))
    return frozenset(exits)


@dataclass(frozen=True)
class IpMetadata:
    country: str
    asn: int
    org: str


class IpMetadataTable:
    """Longest-prefix-match table from CIDR prefixes to (country, asn, org)."""

    def __init__(self, entries: Iterable[tuple[str, str, int, str]] = ()):
        # one dict per (ip version, prefix length): masked network int -> metadata
        self._buckets: dict[tuple[int, int], dict[int, IpMetadata]] = {}
        self._lengths: dict[int, list[int]] = {4: [], 6: []}
        self.disagreements = 0
        self._size = 0
        for prefix, country, asn, org in entries:
            self.add(prefix, country, asn, org)

    def add(self, prefix: str, country: str, asn: int, org: str) -> None:
        network = ipaddress.ip_network(prefix, strict=False)
        key = (network.version, network.prefixlen)
        bucket = self._buckets.setdefault(key, {})
        if key[1] not in self._lengths[network.version]:
            self._lengths[network.version].append(key[1])
            self._lengths[network.version].sort(reverse=True)
        net_int = int(network.network_address)
        new = IpMetadata(country, int(asn), org)
        existing = bucket.get(net_int)
        if existing is not None:
            if existing != new:
                self.disagreements += 1
            return  # first loaded entry wins
        bucket[net_int] = new
        self._size += 1

    @classmethod
    def from_csv(cls, *paths: str | Path) -> "IpMetadataTable":
        table = cls()
        for path in paths:
            with open(path, newline="") as handle:
                for row in csv.reader(handle):
                    if not row or row[0].lstrip().startswith("#"):
                        continue
                    prefix, country, asn, org = (field.strip() for field in row[:4])
                    table.add(prefix, country, int(asn), org)
        return table

    def __len__(self) -> int:
        return self._size

    def lookup(self, address: "str | Endpoint") -> IpMetadata | None:
        ip_text = address if isinstance(address, str) else address.ip
        ip = ipaddress.ip_address(ip_text)
        if ip.version == 6 and ip.ipv4_mapped is not None:
            ip = ip.ipv4_mapped
        ip_int = int(ip)
        bits = ip.max_prefixlen
        for prefixlen in self._lengths[ip.version]:
            masked = ip_int >> (bits - prefixlen) << (bits - prefixlen) if prefixlen else 0
            found = self._buckets[(ip.version, prefixlen)].get(masked)
            if found is not None:
                return found
        return None


@dataclass(frozen=True)
class ShareReport:
    """Per-country and per-organization shares of active nodes.

    Each list is (bucket, share) sorted by descending share; tor-class
    nodes form their own bucket instead of being geolocated, and addresses
    no prefix covers land in ``unknown``.  Shares sum to 1 whenever there
    is at least one active node.
    """

    country: list[tuple[str, float]]
    org: list[tuple[str, float]]
    active_count: int


def aggregate_shares(
    snapshot: "Snapshot",
    table: IpMetadataTable,
    tor_exits: AbstractSet[str] = frozenset(),
) -> ShareReport:
    country_counts: dict[str, int] = {}
    org_counts: dict[str, int] = {}
    active = snapshot.active_records()
    for record in active:
        if classify_network(record.address, tor_exits) == NET_TOR:
            country, org = TOR_BUCKET, TOR_BUCKET
        else:
            meta = table.lookup(record.address)
            country = meta.country if meta else UNKNOWN_BUCKET
            org = meta.org if meta else UNKNOWN_BUCKET
        country_counts[country] = country_counts.get(country, 0) + 1
        org_counts[org] = org_counts.get(org, 0) + 1

    def shares(counts: dict[str, int]) -> list[tuple[str, float]]:
        total = len(active)
        rows = [(name, count / total) for name, count in counts.items()]
        rows.sort(key=lambda row: (-row[1], row[0]))
        return rows

    if not active:
        return ShareReport(country=[], org=[], active_count=0)
    return ShareReport(country=shares(country_counts), org=shares(org_counts), active_count=len(active))
