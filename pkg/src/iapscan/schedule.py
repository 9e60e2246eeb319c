"""Target ranges, reverse IP-sequential ordering and probe tokens."""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Sequence

from .addr import ADDR_BITS, Prefix, parse_prefix, prefix_contains

TOKEN_BITS = 32


class ValueOutOfWidth(ValueError):
    pass


class IndexOutOfRange(IndexError):
    pass


class TokenOverflow(ValueError):
    pass


def reverse_bits(v: int, width: int) -> int:
    if not 0 <= width <= 64:
        raise ValueOutOfWidth(f"width must be 0..64, got {width}")
    if v < 0 or v >> width:
        raise ValueOutOfWidth(f"{v} does not fit in {width} bits")
    if width == 0:
        return 0
    return int(format(v, f"0{width}b")[::-1], 2)


_REV16: list[int] = []


def _rev16_table() -> list[int]:
    if not _REV16:
        _REV16.extend(int(format(v, "016b")[::-1], 2) for v in range(1 << 16))
    return _REV16


def target_maker(r: TargetRange):
    """Return an unchecked ``index -> address`` function for hot loops."""
    fw, sl = r.free_width, r.suffix_len
    base = r.prefix.address | r.suffix
    if fw > 32:
        return lambda i: base | (reverse_bits(i, fw) << sl)
    table = _rev16_table()
    drop = 32 - fw
    return lambda i: base | ((((table[i & 0xFFFF] << 16) | table[i >> 16]) >> drop) << sl)


@dataclass(frozen=True)
class TargetRange:
    """All addresses that start with ``prefix`` and end with the
    ``suffix_len``-bit string ``suffix``."""

    prefix: Prefix
    suffix: int = 0
    suffix_len: int = 0

    def __post_init__(self):
        if not 0 <= self.suffix_len <= ADDR_BITS - self.prefix.length:
            raise ValueError(
                f"suffix of {self.suffix_len} bits does not fit behind /{self.prefix.length}")
        if self.suffix < 0 or self.suffix >> self.suffix_len:
            raise ValueError(f"suffix {self.suffix:#x} is wider than {self.suffix_len} bits")

    @property
    def free_width(self) -> int:
        return ADDR_BITS - self.prefix.length - self.suffix_len

    @property
    def size(self) -> int:
        return 1 << self.free_width

    def __contains__(self, addr: int) -> bool:
        mask = (1 << self.suffix_len) - 1
        return prefix_contains(self.prefix, addr) and (addr & mask) == self.suffix

    def target(self, index: int) -> int:
        return range_target(self, index)

    def to_json(self) -> dict:
        return {
            "prefix": str(self.prefix),
            "suffix": format(self.suffix, "x") if self.suffix_len else "",
            "suffix_len": self.suffix_len,
        }

    @classmethod
    def from_json(cls, obj: dict) -> TargetRange:
        suffix_len = int(obj.get("suffix_len", 0))
        suffix_text = obj.get("suffix", "") or "0"
        return cls(parse_prefix(obj["prefix"]), int(suffix_text, 16), suffix_len)

    def __str__(self) -> str:
        if not self.suffix_len:
            return str(self.prefix)
        return f"{self.prefix} + {self.suffix_len}-bit suffix {self.suffix:#x}"


def anycast_range(prefix: Prefix, resolution_len: int = 64) -> TargetRange:
    """One subnet-router anycast target per /resolution_len inside ``prefix``."""
    if not prefix.length <= resolution_len <= ADDR_BITS:
        raise ValueError(f"resolution /{resolution_len} is shorter than {prefix}")
    return TargetRange(prefix, 0, ADDR_BITS - resolution_len)


def range_target(r: TargetRange, index: int) -> int:
    fw = r.free_width
    if not 0 <= index < (1 << fw):
        raise IndexOutOfRange(f"index {index} outside range of size 2**{fw}")
    return r.prefix.address | (reverse_bits(index, fw) << r.suffix_len) | r.suffix


def iter_targets(r: TargetRange) -> Iterator[int]:
    for i in range(r.size):
        yield range_target(r, i)


class ScheduleItem(NamedTuple):
    range_index: int
    address_index: int


def token_bits(num_ranges: int) -> int:
    """Bits of the token spent on the range index."""
    if num_ranges < 1:
        raise ValueError("at least one range is required")
    return (num_ranges - 1).bit_length()


def check_schedule(ranges: Sequence[TargetRange]) -> int:
    """Validate that every range fits the token layout; return n."""
    n = token_bits(len(ranges))
    if n > TOKEN_BITS - 1:
        raise TokenOverflow(f"{len(ranges)} ranges leave no room for address indices")
    for i, r in enumerate(ranges):
        if r.free_width > TOKEN_BITS - n:
            raise TokenOverflow(
                f"range {i} ({r}) has 2**{r.free_width} targets; at most "
                f"2**{TOKEN_BITS - n} fit beside {n} range-index bits")
    return n


def make_schedule(ranges: Sequence[TargetRange]) -> Iterator[ScheduleItem]:
    """Interleave all ranges so each progresses at its share of the total.

    Item ``j`` of range ``i`` is placed at the ideal time ``(j + 1/2) / N_i``
    and items are emitted in ideal-time order, ties going to the lower range
    index. Range sizes are powers of two, so the ideal times are compared as
    exact integers.
    """
    check_schedule(ranges)
    if len(ranges) == 1:
        for j in range(ranges[0].size):
            yield ScheduleItem(0, j)
        return
    wmax = max(r.free_width for r in ranges)
    heap = []
    for i, r in enumerate(ranges):
        unit = 1 << (wmax - r.free_width)
        heap.append((unit, i, 0, 2 * unit, r.size))
    heapq.heapify(heap)
    while heap:
        key, i, j, step, size = heap[0]
        yield ScheduleItem(i, j)
        if j + 1 < size:
            heapq.heapreplace(heap, (key + step, i, j + 1, step, size))
        else:
            heapq.heappop(heap)


def encode_token(range_index: int, address_index: int, n: int) -> int:
    if not 0 <= n < TOKEN_BITS:
        raise TokenOverflow(f"range-index width {n} out of bounds")
    if not 0 <= range_index < (1 << n):
        raise TokenOverflow(f"range index {range_index} needs more than {n} bits")
    if not 0 <= address_index < (1 << (TOKEN_BITS - n)):
        raise TokenOverflow(f"address index {address_index} needs more than {TOKEN_BITS - n} bits")
    return (range_index << (TOKEN_BITS - n)) | address_index


def decode_token(token: int, n: int) -> tuple[int, int]:
    if not 0 <= token < (1 << TOKEN_BITS):
        raise TokenOverflow(f"token {token:#x} is not 32 bits")
    shift = TOKEN_BITS - n
    return token >> shift, token & ((1 << shift) - 1)


def load_targets(path) -> tuple[list[TargetRange], bytes]:
    """Read a target list; the raw bytes are kept for echoing into archives."""
    with open(path, "rb") as fh:
        raw = fh.read()
    return parse_targets(raw), raw


def parse_targets(raw: bytes | str) -> list[TargetRange]:
    data = json.loads(raw)
    if not isinstance(data, list) or not data:
        raise ValueError("target list must be a non-empty JSON array")
    return [TargetRange.from_json(obj) for obj in data]


def dump_targets(ranges: Sequence[TargetRange]) -> bytes:
    return (json.dumps([r.to_json() for r in ranges], indent=1) + "\n").encode()
