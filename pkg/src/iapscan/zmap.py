"""Z-order mapping of the IPv6 address space onto a 2**64 x 2**64 grid.

The origin is the top-left corner, x grows to the right and y grows
downwards. X is built from the even-numbered address bits (2, 4, ..., 128)
and Y from the odd-numbered bits (1, 3, ..., 127), both MSB-first.
Consequently a prefix of even length is a square and a prefix of odd length
is a rectangle twice as wide as it is tall.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .addr import ADDR_BITS, Prefix, prefix_contains, truncate

MAX_CELL_BITS = 26

_M128 = (1 << 128) - 1


def _rep(pattern: int, width: int) -> int:
    out = 0
    for shift in range(0, 128, width):
        out |= pattern << shift
    return out


# (shift, mask) pairs for squeezing every other bit of a 128-bit word into 64 bits
_COMPACT = [
    (1, _rep(0x3, 4)),
    (2, _rep(0xF, 8)),
    (4, _rep(0xFF, 16)),
    (8, _rep(0xFFFF, 32)),
    (16, _rep(0xFFFFFFFF, 64)),
    (32, (1 << 64) - 1),
]
_EVEN = _rep(0x1, 2)
# spreading undoes each stage with the mask of the stage before it
_SPREAD = list(zip([s for s, _ in reversed(_COMPACT)],
                   reversed([_EVEN] + [m for _, m in _COMPACT[:-1]])))


def _compact(v: int) -> int:
    v &= _EVEN
    for shift, mask in _COMPACT:
        v = (v | (v >> shift)) & mask
    return v


def _spread(v: int) -> int:
    for shift, mask in _SPREAD:
        v = (v | (v << shift)) & mask
    return v


def address_to_xy(addr: int) -> tuple[int, int]:
    return _compact(addr), _compact(addr >> 1)


def xy_to_address(x: int, y: int) -> int:
    if not (0 <= x < 1 << 64 and 0 <= y < 1 << 64):
        raise ValueError("grid coordinates must be 64-bit unsigned")
    return _spread(x) | (_spread(y) << 1)


@dataclass(frozen=True)
class MapRect:
    x0: int
    y0: int
    width: int
    height: int

    @property
    def x1(self) -> int:
        return self.x0 + self.width - 1

    @property
    def y1(self) -> int:
        return self.y0 + self.height - 1

    def contains(self, other: MapRect) -> bool:
        return (self.x0 <= other.x0 and other.x1 <= self.x1
                and self.y0 <= other.y0 and other.y1 <= self.y1)


def _free_split(length: int, upto: int = ADDR_BITS) -> tuple[int, int]:
    """Count even- and odd-numbered bit positions in ``length+1 .. upto``."""
    free = upto - length
    if length % 2 == 0:
        return free // 2, free - free // 2
    return free - free // 2, free // 2


def prefix_to_rect(p: Prefix) -> MapRect:
    x0, y0 = address_to_xy(p.address)
    even, odd = _free_split(p.length)
    return MapRect(x0, y0, 1 << even, 1 << odd)


class InvalidCellLength(ValueError):
    pass


@dataclass
class Heatmap:
    viewport: Prefix
    cell_length: int
    counts: np.ndarray  # indexed [y, x]
    log_scale: bool = False
    ignored: int = 0

    @property
    def width(self) -> int:
        return self.counts.shape[1]

    @property
    def height(self) -> int:
        return self.counts.shape[0]

    def cell_prefix(self, x: int, y: int) -> Prefix:
        vx, vy = address_to_xy(self.viewport.address)
        cell = prefix_to_rect(truncate(self.viewport.address, self.cell_length))
        addr = xy_to_address(vx + x * cell.width, vy + y * cell.height)
        return truncate(addr, self.cell_length)


def heatmap_shape(viewport: Prefix, cell_length: int) -> tuple[int, int]:
    """(width, height) in cells."""
    even, odd = _free_split(viewport.length, cell_length)
    return 1 << even, 1 << odd


def build_heatmap(entries: Iterable[Prefix], viewport: Prefix, cell_length: int,
                  log_scale: bool = False) -> Heatmap:
    if cell_length <= viewport.length or cell_length > ADDR_BITS:
        raise InvalidCellLength(
            f"cell length {cell_length} must be in ({viewport.length}, {ADDR_BITS}]")
    if cell_length - viewport.length > MAX_CELL_BITS:
        raise InvalidCellLength(
            f"at most {MAX_CELL_BITS} bits of subdivision are supported")
    width, height = heatmap_shape(viewport, cell_length)
    counts = np.zeros((height, width), dtype=np.int64)
    vx, vy = address_to_xy(viewport.address)
    cell_even, cell_odd = _free_split(cell_length)
    ignored = 0
    for p in entries:
        if p.length < cell_length:
            raise InvalidCellLength(
                f"entry {p} is shorter than the cell length /{cell_length}")
        if not prefix_contains(viewport, p.address):
            ignored += 1
            continue
        x, y = address_to_xy(p.address)
        counts[(y - vy) >> cell_odd, (x - vx) >> cell_even] += 1
    return Heatmap(viewport, cell_length, counts, log_scale, ignored)


def intensities(h: Heatmap) -> np.ndarray:
    """Map counts to 0..255; zero stays 0 and the largest count becomes 255."""
    counts = h.counts.astype(np.float64)
    top = counts.max() if counts.size else 0.0
    if top <= 0:
        return np.zeros(h.counts.shape, dtype=np.uint8)
    if h.log_scale:
        scaled = np.log2(counts + 1.0) / math.log2(top + 1.0)
    else:
        scaled = counts / top
    return np.rint(scaled * 255.0).astype(np.uint8)


def render_heatmap(h: Heatmap, path: str | Path) -> None:
    pixels = intensities(h)
    header = f"P5\n{h.width} {h.height}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(pixels.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    # exactly one whitespace byte separates the header from the raster
    pos += 1
    if fields[0] != b"P5":
        raise ValueError("not a binary PGM")
    width, height, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise ValueError("only 8-bit PGM is supported")
    return np.frombuffer(data, dtype=np.uint8, count=width * height,
                         offset=pos).reshape(height, width)


def write_heatmap_csv(h: Heatmap, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "count"])
        for y, x in zip(*np.nonzero(h.counts)):
            w.writerow([int(x), int(y), int(h.counts[y, x])])
