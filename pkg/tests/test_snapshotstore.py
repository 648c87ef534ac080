"""Persistence round trips, corruption reporting, and snapshot diffs."""

import tempfile
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chainobs import snapshotstore as store
from chainobs.crawler import PeerRecord, STATUS_ACTIVE, STATUS_INACTIVE
from chainobs.transport import Endpoint
from helpers import make_record, make_snapshot


def test_round_trip_identity_small_snapshot(tmp_path):
    snapshot = make_snapshot(
        [
            make_record("10.0.0.1", user_agent="/Sat oshi:0.17/", min_rtt_ms=12.5, addr_count=30),
            make_record("2001:db8::7", status=STATUS_INACTIVE),
            make_record("fd87:d87e:eb43::1234", services=0, min_rtt_ms=None),
        ],
        seeds=[Endpoint.make("10.0.0.1")],
    )
    path = tmp_path / f"one{store.SNAPSHOT_SUFFIX}"
    store.write_snapshot(snapshot, path)
    assert store.read_snapshot(path) == snapshot


def test_records_are_sorted_by_address(tmp_path):
    snapshot = make_snapshot([make_record("10.0.0.9"), make_record("10.0.0.1"), make_record("9.1.1.1")])
    path = tmp_path / f"s{store.SNAPSHOT_SUFFIX}"
    store.write_snapshot(snapshot, path)
    lines = path.read_text().splitlines()[1:]
    addrs = [line.split(" ", 1)[0] for line in lines]
    assert addrs == sorted(addrs)


def test_empty_records_section_is_valid(tmp_path):
    snapshot = make_snapshot([])
    path = tmp_path / f"empty{store.SNAPSHOT_SUFFIX}"
    store.write_snapshot(snapshot, path)
    loaded = store.read_snapshot(path)
    assert loaded.records == {}
    assert loaded == snapshot


def test_corrupt_record_reports_line_number(tmp_path):
    snapshot = make_snapshot([make_record(f"10.0.0.{i}") for i in range(1, 6)])
    path = tmp_path / f"bad{store.SNAPSHOT_SUFFIX}"
    store.write_snapshot(snapshot, path)
    lines = path.read_text().splitlines()
    lines[4] = "addr:10.0.0.9 port:not-a-number status:active first_seen:1 last_seen:1"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(store.CorruptRecordError) as err:
        store.read_snapshot(path)
    assert err.value.line_number == 5


def test_unknown_trailing_fields_ignored(tmp_path):
    snapshot = make_snapshot([make_record("10.0.0.1")])
    path = tmp_path / f"fwd{store.SNAPSHOT_SUFFIX}"
    store.write_snapshot(snapshot, path, extra_fields={Endpoint.make("10.0.0.1"): {"country": "DE", "asn": "64500"}})
    assert "country:DE" in path.read_text()
    assert store.read_snapshot(path) == snapshot


def test_unsupported_schema_version(tmp_path):
    path = tmp_path / f"v2{store.SNAPSHOT_SUFFIX}"
    path.write_text("schema:2 kind:header started_at:1 finished_at:2 seed_count:0 seeds: config: partial:0\n")
    with pytest.raises(store.SchemaVersionUnsupportedError):
        store.read_snapshot(path)


def test_missing_header_is_corrupt(tmp_path):
    path = tmp_path / f"nohdr{store.SNAPSHOT_SUFFIX}"
    path.write_text("addr:10.0.0.1 port:8333 status:active first_seen:1 last_seen:1\n")
    with pytest.raises(store.CorruptRecordError):
        store.read_snapshot(path)


_records = st.builds(
    make_record,
    ip=st.one_of(st.ip_addresses(v=4).map(str), st.ip_addresses(v=6).map(str)),
    port=st.integers(min_value=1, max_value=65535),
    status=st.sampled_from([STATUS_ACTIVE, STATUS_INACTIVE]),
    services=st.integers(min_value=0, max_value=2**64 - 1),
    protocol_version=st.integers(min_value=0, max_value=2**31 - 1),
    user_agent=st.text(max_size=40),
    start_height=st.integers(min_value=-10, max_value=2**31 - 1),
    min_rtt_ms=st.one_of(st.none(), st.floats(min_value=0.001, max_value=1e6, allow_nan=False)),
    ts=st.integers(min_value=0, max_value=2**32),
    addr_count=st.integers(min_value=0, max_value=5000),
)


_property_dir = tempfile.mkdtemp(prefix="snapstore-prop-")


@settings(max_examples=150)
@given(records=st.lists(_records, max_size=12), started=st.integers(min_value=0, max_value=2**32))
def test_round_trip_identity_property(records, started):
    unique = list({r.address: r for r in records}.values())
    snapshot = make_snapshot(unique, started_at=started)
    path = Path(_property_dir) / f"p{store.SNAPSHOT_SUFFIX}"
    store.write_snapshot(snapshot, path)
    assert store.read_snapshot(path) == snapshot


def test_load_series_sorted_by_start_time(tmp_path):
    for start in (300, 100, 200):
        store.write_snapshot(
            make_snapshot([make_record("10.0.0.1")], started_at=start),
            tmp_path / f"{start}{store.SNAPSHOT_SUFFIX}",
        )
    series = store.load_series(tmp_path)
    assert [s.started_at for s in series] == [100, 200, 300]


# --- diff --------------------------------------------------------------------


def _snap(active_ips, inactive_ips=(), started=1000):
    records = [make_record(ip) for ip in active_ips]
    records += [make_record(ip, status=STATUS_INACTIVE) for ip in inactive_ips]
    return make_snapshot(records, started_at=started)


def test_diff_identical_snapshots():
    a = _snap(["10.0.0.1", "10.0.0.2"])
    b = _snap(["10.0.0.1", "10.0.0.2"], started=2000)
    result = store.diff(a, b)
    assert result.joined == frozenset() and result.left == frozenset()
    assert result.stayed == a.active_addresses()


def test_diff_set_algebra():
    a = _snap(["10.0.0.1", "10.0.0.2"])  # X, Y
    b = _snap(["10.0.0.2", "10.0.0.3"], started=2000)  # Y, Z
    result = store.diff(a, b)
    assert result.joined == {Endpoint.make("10.0.0.3")}
    assert result.left == {Endpoint.make("10.0.0.1")}
    assert result.stayed == {Endpoint.make("10.0.0.2")}
    assert result.joined & result.left == frozenset()


def test_diff_all_nodes_leaving():
    a = _snap(["10.0.0.1", "10.0.0.2"])
    b = _snap([], inactive_ips=["10.0.0.1"], started=2000)
    assert store.diff(a, b).left == a.active_addresses()


def test_diff_out_of_order_rejected():
    with pytest.raises(store.OutOfOrderError):
        store.diff(_snap([], started=2000), _snap([], started=1000))


@settings(max_examples=80)
@given(
    a_ips=st.sets(st.integers(min_value=1, max_value=30), max_size=15),
    b_ips=st.sets(st.integers(min_value=1, max_value=30), max_size=15),
)
def test_diff_antisymmetry_property(a_ips, b_ips):
    a = _snap([f"10.0.0.{i}" for i in a_ips], started=1)
    b = _snap([f"10.0.0.{i}" for i in b_ips], started=2)
    forward = store.diff(a, b)
    backward = store.diff(
        make_snapshot(list(b.records.values()), started_at=1),
        make_snapshot(list(a.records.values()), started_at=2),
    )
    assert forward.joined == backward.left
    assert forward.left == backward.joined
