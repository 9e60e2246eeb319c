"""IPv6 address and prefix arithmetic.

Addresses are plain Python ints in ``[0, 2**128)``. Bit 1 is the most
significant bit, so printing an address as 32 hex digits gives the exploded
text form without the colons.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass
from typing import Iterable, Iterator, TextIO

ADDR_BITS = 128
ADDR_MAX = (1 << ADDR_BITS) - 1
IID_MASK = (1 << 64) - 1


class MalformedAddress(ValueError):
    pass


class MalformedPrefix(ValueError):
    pass


class NonzeroHostBits(MalformedPrefix):
    pass


class EmptySet(ValueError):
    pass


def parse_address(text: str) -> int:
    text = text.strip()
    # zone indices and embedded IPv4 are out of scope
    if not text or "%" in text or "." in text or "/" in text:
        raise MalformedAddress(f"not an IPv6 address: {text!r}")
    try:
        return int(ipaddress.IPv6Address(text))
    except ipaddress.AddressValueError as exc:
        raise MalformedAddress(str(exc)) from None


def format_address(addr: int, mode: str = "compressed") -> str:
    if not 0 <= addr <= ADDR_MAX:
        raise ValueError(f"address out of range: {addr:#x}")
    if mode == "exploded":
        h = f"{addr:032x}"
        return ":".join(h[i:i + 4] for i in range(0, 32, 4))
    if mode == "compressed":
        return ipaddress.IPv6Address(addr).compressed
    raise ValueError(f"unknown format mode {mode!r}")


def netmask(length: int) -> int:
    return (ADDR_MAX << (ADDR_BITS - length)) & ADDR_MAX


@dataclass(frozen=True, order=True)
class Prefix:
    """An address prefix. Host bits past ``length`` are always zero."""

    address: int
    length: int

    def __post_init__(self):
        if not 0 <= self.length <= ADDR_BITS:
            raise MalformedPrefix(f"prefix length out of range: {self.length}")
        if not 0 <= self.address <= ADDR_MAX:
            raise MalformedPrefix(f"address out of range: {self.address:#x}")
        if self.address & ~netmask(self.length) & ADDR_MAX:
            raise NonzeroHostBits(
                f"{format_address(self.address)}/{self.length} has bits set past the prefix length")

    @property
    def size(self) -> int:
        return 1 << (ADDR_BITS - self.length)

    @property
    def first(self) -> int:
        return self.address

    @property
    def last(self) -> int:
        return self.address | (self.size - 1)

    def __contains__(self, addr: int) -> bool:
        return prefix_contains(self, addr)

    def __str__(self) -> str:
        return f"{format_address(self.address)}/{self.length}"


def truncate(addr: int, length: int) -> Prefix:
    """Lenient constructor: clear host bits instead of rejecting them."""
    return Prefix(addr & netmask(length), length)


def parse_prefix(text: str, strict: bool = True) -> Prefix:
    text = text.strip()
    addr_text, sep, len_text = text.partition("/")
    if not sep or not len_text.isdigit():
        raise MalformedPrefix(f"expected <address>/<length>: {text!r}")
    length = int(len_text)
    if length > ADDR_BITS:
        raise MalformedPrefix(f"prefix length out of range: {text!r}")
    try:
        addr = parse_address(addr_text)
    except MalformedAddress as exc:
        raise MalformedPrefix(str(exc)) from None
    if not strict:
        return truncate(addr, length)
    return Prefix(addr, length)


def prefix_contains(p: Prefix, addr: int) -> bool:
    return (addr & netmask(p.length)) == p.address


def prefix_contains_prefix(outer: Prefix, inner: Prefix) -> bool:
    return inner.length >= outer.length and prefix_contains(outer, inner.address)


def longest_common_prefix(addresses: Iterable[int]) -> Prefix:
    it = iter(addresses)
    try:
        first = next(it)
    except StopIteration:
        raise EmptySet("longest_common_prefix of an empty set") from None
    diff = 0
    for a in it:
        diff |= a ^ first
    # the highest differing bit ends the common part
    length = ADDR_BITS - diff.bit_length()
    return truncate(first, length)


def iid(addr: int) -> int:
    return addr & IID_MASK


def read_address_list(fh: TextIO) -> Iterator[int]:
    """Yield addresses from a one-per-line text file; '#' starts a comment."""
    for lineno, line in enumerate(fh, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            yield parse_address(line)
        except MalformedAddress as exc:
            raise MalformedAddress(f"line {lineno}: {exc}") from None


def read_prefix_list(fh: TextIO, strict: bool = True) -> Iterator[Prefix]:
    for lineno, line in enumerate(fh, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            yield parse_prefix(line, strict=strict)
        except MalformedPrefix as exc:
            raise type(exc)(f"line {lineno}: {exc}") from None
