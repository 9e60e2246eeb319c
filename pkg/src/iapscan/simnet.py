"""A deterministic stand-in for a residential ISP network.

Customer prefixes are carved out of pools; each occupied customer prefix has
a CPE that answers probes to the subnet-router anycast address of any /64
it owns. What happens to probes aimed at unoccupied pool space depends on
the infrastructure: it is either silently dropped or bounced between two
routers until the hop limit runs out.
"""

from __future__ import annotations

import datetime as dt
import heapq
import importlib.resources
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import codec
from .addr import (
    IID_MASK,
    Prefix,
    format_address,
    parse_address,
    parse_prefix,
    prefix_contains,
    prefix_contains_prefix,
)
from .engine import Transport, VirtualClock

IID_MODES = ("eui64", "opaque", "dhcp_sequential")
CPE_REPLIES = ("echo", "addr_unreachable")
INFRA_MODES = ("silent", "routing_loop")
MAX_POOL_BITS = 24


class OverlappingPools(ValueError):
    pass


def parse_oui(text: str) -> int:
    digits = text.replace(":", "").replace("-", "").replace(".", "")
    if len(digits) != 6:
        raise ValueError(f"OUI must be 24 bits: {text!r}")
    return int(digits, 16)


def mac_to_iid(mac: int) -> int:
    """Modified EUI-64: insert 0xFFFE in the middle and flip the u/l bit."""
    high, low = mac >> 24, mac & 0xFFFFFF
    return ((high << 40) | (0xFFFE << 24) | low) ^ (0x02 << 56)


@dataclass
class PoolSpec:
    pool_prefix: Prefix
    customer_plen: int
    occupancy: float
    iid_mode: str = "eui64"
    oui_distribution: list = field(default_factory=lambda: [(0x00040E, 1.0)])
    cpe_reply: str = "echo"
    distance_hops: int = 8
    latency: float = 0.02
    dhcp_start: int = 0xCAFE

    def __post_init__(self):
        if not self.pool_prefix.length <= self.customer_plen <= 64:
            raise ValueError(f"customer prefix length /{self.customer_plen} does not fit {self.pool_prefix}")
        if self.customer_plen - self.pool_prefix.length > MAX_POOL_BITS:
            raise ValueError(f"pool {self.pool_prefix} holds more than 2**{MAX_POOL_BITS} customers")
        if not 0.0 <= self.occupancy <= 1.0:
            raise ValueError("occupancy must be within 0..1")
        if self.iid_mode not in IID_MODES:
            raise ValueError(f"iid_mode must be one of {IID_MODES}")
        if self.cpe_reply not in CPE_REPLIES:
            raise ValueError(f"cpe_reply must be one of {CPE_REPLIES}")
        if self.iid_mode == "eui64" and not self.oui_distribution:
            raise ValueError("eui64 pools need an OUI distribution")
        if not 1 <= self.distance_hops <= 254:
            raise ValueError("distance_hops must be 1..254")

    @property
    def customers(self) -> int:
        return 1 << (self.customer_plen - self.pool_prefix.length)


@dataclass
class InfraBehavior:
    mode: str = "silent"
    loop_hop_cost: int = 1
    error_rate_limit: Optional[float] = None  # errors per second per router; None = unlimited
    error_burst: float = 1.0
    embedded_hop_limit: int = 0  # 0: as it would be forwarded, 1: as received
    latency: float = 0.03

    def __post_init__(self):
        if self.mode not in INFRA_MODES:
            raise ValueError(f"infra mode must be one of {INFRA_MODES}")
        if self.loop_hop_cost < 1:
            raise ValueError("loop_hop_cost must be at least 1")
        if self.embedded_hop_limit not in (0, 1):
            raise ValueError("embedded_hop_limit must be 0 or 1")


class TokenBucket:
    def __init__(self, rate: float, burst: float):
        self.rate = rate
        self.burst = max(1.0, burst)
        self.tokens = self.burst
        self.last = None

    def take(self, now: float) -> bool:
        if self.last is not None:
            self.tokens = min(self.burst, self.tokens + (now - self.last) * self.rate)
        self.last = now
        if self.tokens >= 1.0:
            self.tokens -= 1.0
            return True
        return False


class Pool:
    """A materialized pool: which customers exist and their CPE addresses."""

    def __init__(self, spec: PoolSpec, index: int, seed: int):
        self.spec = spec
        rng = np.random.default_rng([seed & (2**64 - 1), index])
        n = spec.customers
        self.occupied = rng.random(n) < spec.occupancy
        self.shift = 128 - spec.customer_plen
        idx = np.flatnonzero(self.occupied)
        self._iids = dict(zip(idx.tolist(), self._make_iids(rng, len(idx))))

    def _make_iids(self, rng: np.random.Generator, count: int) -> list[int]:
        spec = self.spec
        if spec.iid_mode == "eui64":
            ouis = [parse_oui(o) if isinstance(o, str) else int(o) for o, _ in spec.oui_distribution]
            weights = np.array([w for _, w in spec.oui_distribution], dtype=float)
            picks = rng.choice(len(ouis), size=count, p=weights / weights.sum())
            nics = rng.integers(0, 1 << 24, size=count)
            return [mac_to_iid((ouis[p] << 24) | int(nic)) for p, nic in zip(picks, nics)]
        if spec.iid_mode == "opaque":
            return rng.integers(0, 1 << 64, size=count, dtype=np.uint64).tolist()
        return [spec.dhcp_start + i for i in range(count)]

    def customer_index(self, addr: int) -> int:
        return (addr - self.spec.pool_prefix.address) >> self.shift

    def customer_prefix(self, index: int) -> Prefix:
        return Prefix(self.spec.pool_prefix.address + (index << self.shift), self.spec.customer_plen)

    def cpe_address(self, index: int) -> int:
        first64 = self.spec.pool_prefix.address + (index << self.shift)
        return first64 | self._iids[index]

    @property
    def occupied_count(self) -> int:
        return int(self.occupied.sum())

    def __contains__(self, addr: int) -> bool:
        return prefix_contains(self.spec.pool_prefix, addr)


@dataclass
class SimTopology:
    pools: list[Pool]
    infra: InfraBehavior
    seed: int
    infra_router: int
    epoch: Optional[str] = None

    def find_pool(self, addr: int) -> Optional[Pool]:
        for pool in self.pools:
            if addr in pool:
                return pool
        return None

    def cpe_addresses(self) -> list[int]:
        out = []
        for pool in self.pools:
            out.extend(pool.cpe_address(int(i)) for i in np.flatnonzero(pool.occupied))
        return out

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "infra": {"mode": self.infra.mode, "router": format_address(self.infra_router)},
            "pools": [
                {
                    "prefix": str(p.spec.pool_prefix),
                    "customer_plen": p.spec.customer_plen,
                    "customer_prefixes": p.spec.customers,
                    "customers": p.occupied_count,
                    "iid_mode": p.spec.iid_mode,
                }
                for p in self.pools
            ],
            "customers": sum(p.occupied_count for p in self.pools),
        }


def build_topology(pools: Sequence[PoolSpec], infra: InfraBehavior, seed: int,
                   infra_router: int = parse_address("2001:db8:ffff::1"),
                   epoch: Optional[str] = None) -> SimTopology:
    for i, a in enumerate(pools):
        for b in pools[i + 1:]:
            if prefix_contains_prefix(a.pool_prefix, b.pool_prefix) or \
                    prefix_contains_prefix(b.pool_prefix, a.pool_prefix):
                raise OverlappingPools(f"{a.pool_prefix} overlaps {b.pool_prefix}")
    return SimTopology([Pool(spec, i, seed) for i, spec in enumerate(pools)], infra, seed,
                       infra_router, epoch)


class SimState:
    """Mutable per-run state: ICMPv6 error rate limiters."""

    def __init__(self, infra: InfraBehavior):
        self.infra = infra
        self.buckets: dict[int, TokenBucket] = {}

    def allow_error(self, router: int, now: float) -> bool:
        if self.infra.error_rate_limit is None:
            return True
        bucket = self.buckets.get(router)
        if bucket is None:
            bucket = self.buckets[router] = TokenBucket(self.infra.error_rate_limit,
                                                        self.infra.error_burst)
        return bucket.take(now)


def _with_hop_limit(packet: bytes, hop_limit: int) -> bytes:
    return packet[:7] + bytes([hop_limit]) + packet[8:]


def handle_packet(topology: SimTopology, packet: bytes, state: SimState,
                  now: float = 0.0) -> list[tuple[float, bytes]]:
    """Responses the network sends back for one echo request, with delays."""
    if len(packet) < 48 or packet[0] >> 4 != 6 or packet[6] != codec.ICMPV6:
        return []
    if packet[40] != codec.ECHO_REQUEST or packet[41] != 0:
        return []
    hop_limit = packet[7]
    dst = int.from_bytes(packet[24:40], "big")
    pool = topology.find_pool(dst)
    if pool is None:
        return []
    spec, infra = pool.spec, topology.infra
    remaining = hop_limit - spec.distance_hops
    if remaining <= 0:
        # expired in transit before reaching the pool
        return _infra_error(topology, packet, state, now, spec.latency)
    index = pool.customer_index(dst)
    if pool.occupied[index]:
        cpe = pool.cpe_address(index)
        arrived = _with_hop_limit(packet, remaining)
        if dst & IID_MASK == 0 and spec.cpe_reply == "echo":
            return [(spec.latency, codec.echo_reply_for(packet, responder=cpe))]
        return [(spec.latency, codec.build_error_response(
            codec.DEST_UNREACHABLE, 3, 0, cpe, arrived))]
    if infra.mode == "silent":
        return []
    traversals = remaining // infra.loop_hop_cost
    return _infra_error(topology, packet, state, now, spec.latency + traversals * 1e-4)


def _infra_error(topology, packet, state, now, delay):
    infra = topology.infra
    if not state.allow_error(topology.infra_router, now):
        return []
    expired = _with_hop_limit(packet, infra.embedded_hop_limit)
    return [(delay, codec.build_error_response(
        codec.TIME_EXCEEDED, 0, 0, topology.infra_router, expired))]


class SimTransport(Transport):
    """Feeds probes into a simulated network on a virtual clock."""

    def __init__(self, topology: SimTopology, clock: Optional[VirtualClock] = None):
        super().__init__()
        self.topology = topology
        if clock is None:
            clock = VirtualClock()
            if topology.epoch:
                clock.epoch = dt.datetime.fromisoformat(topology.epoch.replace("Z", "+00:00"))
        self.clock = clock
        self.state = SimState(topology.infra)
        self._pending: list[tuple[float, int, bytes]] = []
        self._seq = 0
        self.sent = 0

    def _enqueue(self, at: float, packet: bytes) -> None:
        heapq.heappush(self._pending, (at, self._seq, packet))
        self._seq += 1

    def send(self, packet: bytes) -> None:
        self._check_open()
        self.sent += 1
        now = self.clock.now()
        for delay, response in handle_packet(self.topology, packet, self.state, now):
            self._enqueue(now + delay, response)

    def inject(self, packet: bytes, delay: float = 0.0) -> None:
        """Deliver an arbitrary packet, e.g. a forged or rewritten reply."""
        self._enqueue(self.clock.now() + delay, packet)

    def poll(self) -> list[bytes]:
        self._check_open()
        now = self.clock.now()
        out = []
        while self._pending and self._pending[0][0] <= now:
            out.append(heapq.heappop(self._pending)[2])
        return out


def _pool_from_json(obj: dict) -> PoolSpec:
    ouis = [(o, float(w)) for o, w in obj.get("oui_distribution", [["00:04:0e", 1.0]])]
    return PoolSpec(
        pool_prefix=parse_prefix(obj["prefix"]),
        customer_plen=int(obj["customer_plen"]),
        occupancy=float(obj["occupancy"]),
        iid_mode=obj.get("iid_mode", "eui64"),
        oui_distribution=ouis,
        cpe_reply=obj.get("cpe_reply", "echo"),
        distance_hops=int(obj.get("distance_hops", 8)),
        latency=float(obj.get("latency", 0.02)),
        dhcp_start=int(str(obj.get("dhcp_start", "cafe")), 16),
    )


def _infra_from_json(obj: dict) -> InfraBehavior:
    return InfraBehavior(
        mode=obj.get("mode", "silent"),
        loop_hop_cost=int(obj.get("loop_hop_cost", 1)),
        error_rate_limit=obj.get("error_rate_limit"),
        error_burst=float(obj.get("error_burst", 1.0)),
        embedded_hop_limit=int(obj.get("embedded_hop_limit", 0)),
        latency=float(obj.get("latency", 0.03)),
    )


def topology_from_json(obj: dict, seed: Optional[int] = None) -> SimTopology:
    infra_obj = obj.get("infra", {})
    return build_topology(
        [_pool_from_json(p) for p in obj["pools"]],
        _infra_from_json(infra_obj),
        int(obj.get("seed", 0)) if seed is None else seed,
        parse_address(infra_obj.get("router", "2001:db8:ffff::1")),
        obj.get("epoch"),
    )


SCENARIOS = ("telekom", "vodafone", "oneandone")


def scenario_text(name_or_path: str) -> str:
    """Scenario JSON by shipped name (``telekom``) or by file path."""
    if name_or_path in SCENARIOS:
        res = importlib.resources.files("iapscan") / "scenarios" / f"{name_or_path}.json"
        return res.read_text()
    return Path(name_or_path).read_text()


def load_scenario(name_or_path: str, seed: Optional[int] = None) -> SimTopology:
    return topology_from_json(json.loads(scenario_text(name_or_path)), seed)
