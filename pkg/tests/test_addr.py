import io

import pytest
from hypothesis import given, strategies as st

from iapscan.addr import (
    EmptySet, MalformedAddress, MalformedPrefix, NonzeroHostBits, Prefix, format_address,
    longest_common_prefix, netmask, parse_address, parse_prefix, prefix_contains,
    prefix_contains_prefix, read_address_list, read_prefix_list, truncate,
)

from oracles import common_prefix_len

addresses = st.integers(0, 2**128 - 1)
lengths = st.integers(0, 128)


@pytest.mark.parametrize("text,value", [
    ("::", 0),
    ("::1", 1),
    ("2001:db8::1", 0x20010DB8000000000000000000000001),
    ("2003:D7:C700::", 0x200300D7C70000000000000000000000),
    ("ffff:ffff:ffff:ffff:ffff:ffff:ffff:ffff", 2**128 - 1),
])
def test_parse_address(text, value):
    assert parse_address(text) == value


@pytest.mark.parametrize("text", ["", "1::2::3", "2001:db8::g", "::ffff:1.2.3.4", "fe80::1%eth0",
                                  "2001:db8::/64", "1:2:3:4:5:6:7:8:9"])
def test_parse_address_rejects(text):
    with pytest.raises(MalformedAddress):
        parse_address(text)


def test_format_modes():
    a = parse_address("2001:db8::1")
    assert format_address(a) == "2001:db8::1"
    assert format_address(a, "exploded") == "2001:0db8:0000:0000:0000:0000:0000:0001"
    # a single zero group is not compressed
    assert format_address(parse_address("2001:db8:0:1:1:1:1:1")) == "2001:db8:0:1:1:1:1:1"


@given(addresses)
def test_format_parse_roundtrip(a):
    assert parse_address(format_address(a)) == a
    assert parse_address(format_address(a, "exploded")) == a


def test_prefix_strict_and_lenient():
    with pytest.raises(NonzeroHostBits):
        parse_prefix("2001:db8::1/64")
    assert parse_prefix("2001:db8::1/64", strict=False) == parse_prefix("2001:db8::/64")
    for bad in ["2001:db8::/129", "2001:db8::", "2001:db8::/x", "2001:db8::/-1"]:
        with pytest.raises(MalformedPrefix):
            parse_prefix(bad)
    assert str(parse_prefix("2003:d7:c700::/40")) == "2003:d7:c700::/40"


@given(addresses, lengths)
def test_truncate_contains_bounds(a, n):
    p = truncate(a, n)
    assert a in p
    assert prefix_contains(p, p.first) and prefix_contains(p, p.last)
    assert p.last - p.first + 1 == p.size == 2 ** (128 - n)
    assert p.address & ~netmask(n) == 0


@given(addresses, st.integers(0, 128), st.integers(0, 128))
def test_prefix_nesting(a, m, n):
    outer, inner = truncate(a, min(m, n)), truncate(a, max(m, n))
    assert prefix_contains_prefix(outer, inner)
    if m != n:
        assert not prefix_contains_prefix(inner, outer)


@given(st.lists(addresses, min_size=1, max_size=20))
def test_lcp_matches_oracle(addrs):
    p = longest_common_prefix(addrs)
    assert p.length == common_prefix_len(addrs)
    assert all(a in p for a in addrs)


def test_lcp_empty():
    with pytest.raises(EmptySet):
        longest_common_prefix([])


def test_list_readers():
    fh = io.StringIO("# comment\n2001:db8::1\n\n  2001:db8::2  # trailing\n")
    assert list(read_address_list(fh)) == [parse_address("2001:db8::1"), parse_address("2001:db8::2")]
    fh = io.StringIO("2001:db8::/48\n# x\n2001:db8:1::/48\n")
    assert [str(p) for p in read_prefix_list(fh)] == ["2001:db8::/48", "2001:db8:1::/48"]


def test_prefix_ordering_and_hash():
    a, b = parse_prefix("2001:db8::/48"), parse_prefix("2001:db8:1::/48")
    assert sorted([b, a]) == [a, b]
    assert len({a, Prefix(a.address, 48)}) == 1
