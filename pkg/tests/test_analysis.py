import io
import logging
from importlib import resources

import pytest
from hypothesis import given, settings, strategies as st

from iapscan.addr import parse_address, parse_prefix
from iapscan.analysis import (
    UNREGISTERED, HitlistTooSmall, NotEui64, aggregate_hitlist, classify_iids, compute_pr,
    compute_pr_by_range, extract_eui48, format_mac, hitlist_from_prefixes, iid_byte_histogram,
    load_oui_table, lookup_vendor, sample_probe_targets, scan_stats, vendor_counts,
)
from iapscan.engine import RangeResult, ResponseRecord
from iapscan.schedule import anycast_range

import oracles

NET = parse_address("2001:db8:1:2::")


def test_aggregate():
    addrs = [parse_address(a) for a in ("2001:db8:1::1", "2001:db8:1:ff::1", "2001:db8:2::1")]
    h = aggregate_hitlist(addrs, 48)
    assert [str(p) for p in h] == ["2001:db8:1::/48", "2001:db8:2::/48"]
    assert len(aggregate_hitlist(addrs, 64)) == 3
    with pytest.raises(ValueError):
        aggregate_hitlist(addrs, 0)
    with pytest.raises(ValueError):
        hitlist_from_prefixes([parse_prefix("2001:db8::/48"), parse_prefix("2001:db8::/56")])


def test_classify_small():
    iids = [
        0x02040EFFFE123456,  # eui-64
        0x0000000000000001,  # leading zeros
        0x000CAFE000000001,  # leading zeros
        0x1034567890ABCDEF,  # u/l clear
        0x3234567890ABCDEF,  # u/l set
    ]
    b = classify_iids(NET | i for i in iids + iids)  # duplicates count once
    assert (b.total, b.eui64, b.leading_zero12, b.remainder, b.ul_set) == (5, 1, 2, 2, 1)
    assert b.estimates == {"manual_dhcp": 2, "modified_eui64": 1,
                           "semantically_opaque": 2, "privacy_extensions": 0}
    assert not b.clamped
    assert b.to_json()["iids_seen"] == 5


def test_classify_clamps(caplog):
    with caplog.at_level(logging.WARNING):
        b = classify_iids([NET | 0x3234567890ABCDEF, NET | 0x3234567890ABCDEE])
    assert b.clamped and b.estimates["privacy_extensions"] == 0
    assert "clamped" in caplog.text


@given(st.lists(st.integers(0, 2**64 - 1), max_size=200))
def test_classify_partition(iids):
    b = classify_iids(NET | i for i in iids)
    assert b.total == len(set(iids))
    assert b.eui64 + b.leading_zero12 + b.remainder == b.total
    assert b.estimates["semantically_opaque"] == 2 * b.ul_set
    if not b.clamped:
        assert sum(b.estimates.values()) == b.total


def test_eui48_and_vendors():
    iid = 0x02040EFFFE123456
    assert format_mac(extract_eui48(iid)) == "00:04:0e:12:34:56"
    with pytest.raises(NotEui64):
        extract_eui48(0x1234)
    table = load_oui_table(io.StringIO(
        resources.files("iapscan.data").joinpath("oui_sample.tsv").read_text()))
    assert lookup_vendor(0x000EF4000001, table) == "Example Duplicate First"
    assert lookup_vendor(0xFEFEFE000001, table) == UNREGISTERED
    counts = vendor_counts([NET | iid, NET | 0x1234], table)
    assert sum(counts.values()) == 1
    with pytest.raises(ValueError):
        load_oui_table(io.StringIO("00040E AVM\n"))


def test_byte_histogram():
    iids = [0x0200000000000000, 0x0000000000000000, 0x02FF000000000000]
    h = iid_byte_histogram(iids, 0)
    assert h[2] == 2 and h[0] == 1
    hs = iid_byte_histogram(iids, 1, split_by_ul=True)
    assert hs.shape == (2, 256) and hs[1, 0xFF] == 1 and hs[0, 0] == 1
    with pytest.raises(ValueError):
        iid_byte_histogram(iids, 8)


def test_sample_probe_targets():
    h = hitlist_from_prefixes(parse_prefix(f"2001:db8:{i:x}::/48") for i in range(40))
    rs = sample_probe_targets(h, 32, 52, 64, seed=3)
    assert len(rs) == 32 and all(r.size == 4096 and r.prefix.length == 52 for r in rs)
    assert len({r.prefix for r in rs}) == 32
    assert all(any(r.prefix.address in p for p in h) for r in rs)
    assert rs == sample_probe_targets(h, 32, 52, 64, seed=3)
    with pytest.raises(HitlistTooSmall):
        sample_probe_targets(h, 41, 52, 64, seed=3)
    with pytest.raises(ValueError):
        sample_probe_targets(h, 4, 44, 64, seed=3)


pr_cases = st.lists(
    st.tuples(st.integers(0, 255), st.integers(0, 63)), min_size=1, max_size=200)


@settings(max_examples=200)
@given(pr_cases)
def test_pr_matches_oracle(pairs):
    under = parse_prefix("2001:db8:1:100::/56")
    recs = [ResponseRecord(under.address | (sub << 64), 0xA000 + who, 129, 0) for sub, who in pairs]
    got = compute_pr(recs, under)
    want = oracles.brute_force_pr([(r.target, r.responder) for r in recs], under.address, 56)
    assert set(got.responsibilities) | got.discarded == set(want)
    for responder, w in want.items():
        if w is None:
            assert responder in got.discarded
        else:
            p = got.responsibilities[responder]
            assert (p.length, p.address) == w


def test_pr_basics():
    under = parse_prefix("2001:db8::/48")
    base = under.address
    recs = [ResponseRecord(base | (k << 64), 1, 129, 0) for k in range(256)]  # /56
    recs += [ResponseRecord(base | (0x100 << 64), 2, 129, 0)]  # single /64
    recs += [ResponseRecord(base | (0x0 << 64), 9, 3, 0), ResponseRecord(base | (0xFFFF << 64), 9, 3, 0)]
    recs += [ResponseRecord(parse_address("2001:db9::"), 3, 129, 0)]  # outside
    pr = compute_pr(recs, under)
    assert str(pr.responsibilities[1]) == "2001:db8::/56"
    assert str(pr.responsibilities[2]) == "2001:db8:0:100::/64"
    assert pr.discarded == {9}
    assert dict(pr.histogram) == {56: 1, 64: 1}
    assert pr.mode == 56  # ties go to the shorter length


def test_pr_by_range_and_stats():
    ranges = [anycast_range(parse_prefix("2001:db8::/60"), 64),
              anycast_range(parse_prefix("2001:db8:1::/60"), 64)]
    a, b = ranges[0].prefix.address, ranges[1].prefix.address
    results = [
        RangeResult(0, {"probes_sent": 16}, [ResponseRecord(a | (k << 64), 1, 129, 0) for k in range(4)]),
        RangeResult(1, {"probes_sent": 16}, [ResponseRecord(b, 0x02040EFFFE000001, 129, 0)]),
    ]
    pr = compute_pr_by_range(ranges, results)
    assert dict(pr.histogram) == {62: 1, 64: 1}
    assert scan_stats(results) == {"probes_sent": 32, "responses": 5,
                                   "unique_responders": 2, "responders_with_eui64": 1}
