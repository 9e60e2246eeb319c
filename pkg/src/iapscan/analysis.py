"""Hitlists, interface-identifier statistics and prefix-of-responsibility."""

from __future__ import annotations

import logging
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, TextIO

import numpy as np

from .addr import IID_MASK, Prefix, format_address, longest_common_prefix, netmask, prefix_contains, truncate
from .engine import RangeResult, ResponseRecord
from .schedule import TargetRange, anycast_range

log = logging.getLogger(__name__)

UNREGISTERED = "(unregistered EUI-48)"
UL_BIT = 0x02 << 56


@dataclass
class Hitlist:
    plen: int
    prefixes: list[Prefix] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.prefixes)

    def __iter__(self):
        return iter(self.prefixes)


def aggregate_hitlist(addresses: Iterable[int], plen: int) -> Hitlist:
    if not 1 <= plen <= 128:
        raise ValueError(f"prefix length must be 1..128, got {plen}")
    mask = netmask(plen)
    nets = sorted({a & mask for a in addresses})
    return Hitlist(plen, [Prefix(n, plen) for n in nets])


def write_hitlist(h: Hitlist, fh: TextIO) -> None:
    for p in h.prefixes:
        fh.write(f"{p}\n")


def hitlist_from_prefixes(prefixes: Iterable[Prefix]) -> Hitlist:
    ps = sorted(set(prefixes))
    lengths = {p.length for p in ps}
    if len(lengths) > 1:
        raise ValueError(f"hitlist mixes prefix lengths {sorted(lengths)}")
    return Hitlist(lengths.pop() if lengths else 0, ps)


def is_eui64(iid: int) -> bool:
    return (iid >> 24) & 0xFFFF == 0xFFFE


@dataclass
class IidBreakdown:
    total: int
    eui64: int
    leading_zero12: int
    remainder: int
    ul_set: int
    estimates: dict
    clamped: bool = False

    @property
    def shares(self) -> dict:
        if not self.total:
            return {k: 0.0 for k in self.estimates}
        return {k: v / self.total for k, v in self.estimates.items()}

    def to_json(self) -> dict:
        return {
            "iids_seen": self.total,
            "eui64": self.eui64,
            "remaining_after_eui64": self.total - self.eui64,
            "leading_zero12": self.leading_zero12,
            "remaining": self.remainder,
            "ul_set": self.ul_set,
            "estimated": dict(self.estimates),
            "clamped": self.clamped,
        }


def classify_iids(addresses: Iterable[int]) -> IidBreakdown:
    """Split unique IIDs into EUI-64, leading-zero and high-entropy groups.

    Among the high-entropy rest, privacy-extension IIDs never have the u/l
    bit set while semantically opaque ones have it half of the time, so the
    opaque count is estimated as twice the u/l-set count.
    """
    iids = {a & IID_MASK for a in addresses}
    eui = lead = ul = 0
    for i in iids:
        if (i >> 24) & 0xFFFF == 0xFFFE:
            eui += 1
        elif i >> 52 == 0:
            lead += 1
        elif i & UL_BIT:
            ul += 1
    total = len(iids)
    remainder = total - eui - lead
    opaque = 2 * ul
    privacy = remainder - opaque
    clamped = privacy < 0
    if clamped:
        log.warning("u/l bit set on more than half of the remaining IIDs; "
                    "privacy-extension estimate clamped to 0")
        privacy = 0
    estimates = {
        "manual_dhcp": lead,
        "modified_eui64": eui,
        "semantically_opaque": opaque,
        "privacy_extensions": privacy,
    }
    return IidBreakdown(total, eui, lead, remainder, ul, estimates, clamped)


class NotEui64(ValueError):
    pass


def extract_eui48(iid: int) -> int:
    if not is_eui64(iid):
        raise NotEui64(f"IID {iid:016x} lacks the ff:fe marker")
    mac = ((iid >> 40) << 24) | (iid & 0xFFFFFF)
    return mac ^ (0x02 << 40)


def format_mac(mac: int) -> str:
    return ":".join(f"{(mac >> s) & 0xFF:02x}" for s in range(40, -8, -8))


def load_oui_table(fh: TextIO) -> dict[int, str]:
    table: dict[int, str] = {}
    for lineno, line in enumerate(fh, 1):
        line = line.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        oui, sep, name = line.partition("\t")
        if not sep:
            raise ValueError(f"line {lineno}: expected OUI<TAB>name")
        digits = oui.strip().replace(":", "").replace("-", "")
        if len(digits) != 6:
            raise ValueError(f"line {lineno}: OUI must be 6 hex digits")
        # first entry wins
        table.setdefault(int(digits, 16), name.strip())
    return table


def lookup_vendor(mac: int, table: Mapping[int, str]) -> str:
    return table.get(mac >> 24, UNREGISTERED)


def vendor_counts(addresses: Iterable[int], table: Mapping[int, str]) -> Counter:
    out: Counter = Counter()
    for a in addresses:
        i = a & IID_MASK
        if is_eui64(i):
            out[lookup_vendor(extract_eui48(i), table)] += 1
    return out


def iid_byte_histogram(iids: Iterable[int], byte_index: int, split_by_ul: bool = False) -> np.ndarray:
    """Counts of one IID byte's values.

    With ``split_by_ul`` the result has two rows: u/l bit clear, u/l bit set.
    """
    if not 0 <= byte_index <= 7:
        raise ValueError("byte_index must be 0..7")
    shift = 56 - 8 * byte_index
    hist = np.zeros((2, 256) if split_by_ul else 256, dtype=np.int64)
    for i in iids:
        b = (i >> shift) & 0xFF
        if split_by_ul:
            hist[1 if i & UL_BIT else 0, b] += 1
        else:
            hist[b] += 1
    return hist


class HitlistTooSmall(ValueError):
    pass


def sample_probe_targets(hitlist: Hitlist, n_prefixes: int, deeper_len: int,
                         resolution_len: int, seed: int) -> list[TargetRange]:
    """Pick random hitlist entries, one random sub-prefix in each, and probe
    it with one anycast target per /resolution_len."""
    if not hitlist.plen <= deeper_len <= resolution_len <= 64:
        raise ValueError("need hitlist length <= deeper_len <= resolution_len <= 64")
    if len(hitlist) < n_prefixes:
        raise HitlistTooSmall(f"hitlist has {len(hitlist)} entries, {n_prefixes} requested")
    rng = random.Random(seed)
    chosen = rng.sample(hitlist.prefixes, n_prefixes)
    out = []
    for p in chosen:
        sub = rng.getrandbits(deeper_len - p.length) if deeper_len > p.length else 0
        deeper = Prefix(p.address | (sub << (128 - deeper_len)), deeper_len)
        out.append(anycast_range(deeper, resolution_len))
    return out


@dataclass
class PrResult:
    responsibilities: dict[int, Prefix]
    discarded: set[int]
    histogram: Counter

    def merge(self, other: PrResult) -> PrResult:
        resp = dict(self.responsibilities)
        resp.update(other.responsibilities)
        return PrResult(resp, self.discarded | other.discarded, self.histogram + other.histogram)

    @property
    def mode(self) -> Optional[int]:
        if not self.histogram:
            return None
        return max(sorted(self.histogram), key=lambda k: self.histogram[k])


def compute_pr(responses: Iterable[ResponseRecord], prefix_under_test: Prefix) -> PrResult:
    """Prefix of responsibility per responder.

    A responder's PR is the most specific prefix covering every target it
    answered for, never longer than /64. Responders whose PR is the whole
    prefix under test answer everywhere, i.e. they are infrastructure, and
    are discarded.
    """
    targets: dict[int, set[int]] = defaultdict(set)
    for r in responses:
        if prefix_contains(prefix_under_test, r.target):
            targets[r.responder].add(r.target)
    resp: dict[int, Prefix] = {}
    discarded: set[int] = set()
    for responder, ts in targets.items():
        pr = longest_common_prefix(ts)
        if pr.length > 64:
            pr = truncate(pr.address, 64)
        if pr.length <= prefix_under_test.length:
            discarded.add(responder)
        else:
            resp[responder] = pr
    return PrResult(resp, discarded, Counter(p.length for p in resp.values()))


def compute_pr_by_range(ranges: Sequence[TargetRange], results: Sequence[RangeResult]) -> PrResult:
    """Each range's prefix is the prefix under test for its responses."""
    total = PrResult({}, set(), Counter())
    for r, res in zip(ranges, results):
        total = total.merge(compute_pr(res.responses, r.prefix))
    return total


def scan_stats(results: Sequence[RangeResult]) -> dict:
    responders = set()
    responses = 0
    probes = 0
    for res in results:
        probes += int(res.metadata.get("probes_sent", 0))
        responses += len(res.responses)
        responders.update(r.responder for r in res.responses)
    return {
        "probes_sent": probes,
        "responses": responses,
        "unique_responders": len(responders),
        "responders_with_eui64": sum(1 for a in responders if is_eui64(a & IID_MASK)),
    }


def response_type_counts(results: Sequence[RangeResult]) -> Counter:
    return Counter((r.icmp_type, r.icmp_code) for res in results for r in res.responses)


def describe_pr(pr: PrResult) -> list[tuple[str, str]]:
    return [(format_address(k), str(v)) for k, v in sorted(pr.responsibilities.items())]
