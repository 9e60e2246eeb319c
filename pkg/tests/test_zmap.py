import numpy as np
import pytest
from hypothesis import given, strategies as st

from iapscan.addr import parse_prefix, truncate
from iapscan.zmap import (
    InvalidCellLength, address_to_xy, build_heatmap, heatmap_shape, intensities, prefix_to_rect,
    read_pgm, render_heatmap, write_heatmap_csv, xy_to_address,
)

import oracles

addresses = st.integers(0, 2**128 - 1)


@given(addresses)
def test_matches_bitwise_oracle(a):
    assert address_to_xy(a) == oracles.address_to_xy(a)


@given(addresses)
def test_roundtrip(a):
    assert xy_to_address(*address_to_xy(a)) == a


def test_first_bits():
    # bit 1 (MSB) is odd and lands in y, bit 2 lands in x
    assert address_to_xy(1 << 127) == (0, 1 << 63)
    assert address_to_xy(1 << 126) == (1 << 63, 0)


def test_xy_range_check():
    with pytest.raises(ValueError):
        xy_to_address(1 << 64, 0)
    with pytest.raises(ValueError):
        xy_to_address(0, -1)


@given(addresses, st.integers(0, 128))
def test_prefix_is_rectangle(a, n):
    p = truncate(a, n)
    r = prefix_to_rect(p)
    assert (r.x0, r.y0) == address_to_xy(p.first)
    assert (r.x1, r.y1) == address_to_xy(p.last)
    # even lengths give squares, odd ones are twice as wide as tall
    assert r.width == r.height * (1 if n % 2 == 0 else 2)


@given(addresses, st.integers(0, 127), st.integers(1, 128))
def test_nested_prefix_rect_inside(a, n, extra):
    outer = truncate(a, n)
    inner = truncate(a, min(128, n + extra))
    assert prefix_to_rect(outer).contains(prefix_to_rect(inner))


def test_shape():
    assert heatmap_shape(parse_prefix("2003::/19"), 32) == (128, 64)
    assert heatmap_shape(parse_prefix("2003::/16"), 32) == (256, 256)
    assert heatmap_shape(parse_prefix("2003::/16"), 17) == (1, 2)


def _hitlist(*texts):
    return [parse_prefix(t) for t in texts]


def test_heatmap_counts_and_pgm(tmp_path):
    vp = parse_prefix("2001:db8::/32")
    entries = _hitlist("2001:db8::/48", "2001:db8:1::/48", "2001:db8:1::/48",
                       "2001:db8:8000::/48", "2001:db9::/48")
    h = build_heatmap(entries, vp, 34)
    assert (h.width, h.height) == (2, 2)
    assert h.ignored == 1
    # 2001:db8:8000:: has bit 33 (odd, y) set
    assert h.counts.tolist() == [[3, 0], [1, 0]]
    assert h.cell_prefix(0, 1) == parse_prefix("2001:db8:8000::/34")
    px = intensities(h)
    assert px.tolist() == [[255, 0], [85, 0]]
    out = tmp_path / "m.pgm"
    render_heatmap(h, out)
    assert out.read_bytes() == b"P5\n2 2\n255\n" + bytes([255, 0, 85, 0])
    assert np.array_equal(read_pgm(out), px)
    csv_path = tmp_path / "m.csv"
    write_heatmap_csv(h, csv_path)
    assert csv_path.read_text().splitlines() == ["x,y,count", "0,0,3", "0,1,1"]


def test_log_scale():
    vp = parse_prefix("2001:db8::/32")
    h = build_heatmap(_hitlist(*["2001:db8::/48"] * 7, "2001:db8:4000::/48"), vp, 34, log_scale=True)
    # log2(8)=3 -> 255, log2(2)=1 -> 85
    assert intensities(h).tolist() == [[255, 85], [0, 0]]


def test_raster_with_whitespace_bytes(tmp_path):
    # intensity 10 and 32 are whitespace in ASCII and must survive read-back
    vp = parse_prefix("2001:db8::/32")
    h = build_heatmap(_hitlist(*["2001:db8::/48"] * 51, "2001:db8:4000::/48",
                               *["2001:db8:8000::/48"] * 2), vp, 34)
    out = tmp_path / "w.pgm"
    render_heatmap(h, out)
    assert np.array_equal(read_pgm(out), intensities(h))


def test_all_zero_and_errors():
    vp = parse_prefix("2001:db8::/32")
    assert not intensities(build_heatmap([], vp, 40)).any()
    with pytest.raises(InvalidCellLength):
        build_heatmap([], vp, 32)
    with pytest.raises(InvalidCellLength):
        build_heatmap([], vp, 60)
    with pytest.raises(InvalidCellLength):
        build_heatmap(_hitlist("2001:db8::/36"), vp, 40)
