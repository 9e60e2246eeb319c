"""Scan orchestration: paced sending, stateless response validation, archives."""

from __future__ import annotations

import datetime as dt
import io
import json
import logging
import time
import zipfile
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import jsonschema

from . import codec
from .addr import format_address, parse_address
from .schedule import (
    TargetRange,
    check_schedule,
    decode_token,
    make_schedule,
    parse_targets,
    target_maker,
)

log = logging.getLogger(__name__)


class TransportFailure(RuntimeError):
    pass


class ScanAborted(TransportFailure):
    """The transport failed mid-scan; ``results`` holds what was collected."""

    def __init__(self, message: str, results: list):
        super().__init__(message)
        self.results = results


class RealClock:
    def now(self) -> float:
        return time.perf_counter()

    def wall(self) -> dt.datetime:
        return dt.datetime.now(dt.timezone.utc)

    def sleep_until(self, t: float) -> None:
        delay = t - time.perf_counter()
        if delay > 0:
            time.sleep(delay)


class VirtualClock:
    """Simulation time. Waiting jumps the clock forward instead of blocking."""

    def __init__(self, epoch: Optional[dt.datetime] = None):
        self.t = 0.0
        self.epoch = epoch or dt.datetime(2020, 8, 11, tzinfo=dt.timezone.utc)

    def now(self) -> float:
        return self.t

    def wall(self) -> dt.datetime:
        return self.epoch + dt.timedelta(seconds=self.t)

    def sleep_until(self, t: float) -> None:
        if t > self.t:
            self.t = t


class Transport:
    """Moves whole IPv6 packets. Subclasses override send and poll."""

    clock = None  # a transport may own the clock (simulation)

    def __init__(self):
        self.closed = False

    def send(self, packet: bytes) -> None:
        raise NotImplementedError

    def poll(self) -> list[bytes]:
        raise NotImplementedError

    def close(self) -> None:
        self.closed = True

    def _check_open(self):
        if self.closed:
            raise TransportFailure(f"{type(self).__name__} is closed")


class NullTransport(Transport):
    """Discards everything."""

    def __init__(self):
        super().__init__()
        self.sent = 0

    def send(self, packet):
        self._check_open()
        self.sent += 1

    def poll(self):
        self._check_open()
        return []


class LoopbackTransport(Transport):
    """Returns exactly what was sent."""

    def __init__(self):
        super().__init__()
        self._queue: list[bytes] = []

    def send(self, packet):
        self._check_open()
        self._queue.append(packet)

    def poll(self):
        self._check_open()
        out, self._queue = self._queue, []
        return out


class EchoTransport(Transport):
    """Answers every probe with an echo reply from its destination.

    The reply checksum is patched incrementally (type 128 -> 129; swapping
    source and destination leaves the pseudo-header sum unchanged), so this
    costs almost nothing and isolates the engine in benchmarks.
    """

    def __init__(self):
        super().__init__()
        self._queue: list[bytes] = []
        self.sent = 0

    def send(self, packet):
        self._check_open()
        self.sent += 1
        c = int.from_bytes(packet[42:44], "big")
        # ones'-complement update for the type/code word rising by 0x0100
        s = (0xFFFF - c) + 0x0100
        s = (s & 0xFFFF) + (s >> 16)
        c = 0xFFFF - s
        self._queue.append(b"".join((packet[:8], packet[24:40], packet[8:24], b"\x81\x00",
                                     c.to_bytes(2, "big"), packet[44:])))

    def poll(self):
        self._check_open()
        out, self._queue = self._queue, []
        return out


@dataclass
class ScanConfig:
    source_address: int
    key: bytes
    rate: float = 1000.0
    hop_limit: int = 64
    receive_grace: float = 5.0

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("rate must be positive")
        if not 1 <= self.hop_limit <= 255:
            raise ValueError("hop limit must be 1..255")
        if len(self.key) != codec.KEY_LEN:
            raise ValueError(f"MAC key must be {codec.KEY_LEN} bytes")


class ResponseRecord(NamedTuple):
    target: int
    responder: int
    icmp_type: int
    icmp_code: int
    distance: Optional[int] = None

    def to_json(self) -> dict:
        return {
            "target": format_address(self.target),
            "responder": format_address(self.responder),
            "type": self.icmp_type,
            "code": self.icmp_code,
            "distance": self.distance,
        }

    @classmethod
    def from_json(cls, obj: dict) -> ResponseRecord:
        return cls(parse_address(obj["target"]), parse_address(obj["responder"]),
                   obj["type"], obj["code"], obj["distance"])


@dataclass
class RangeResult:
    index: int
    metadata: dict
    responses: list[ResponseRecord] = field(default_factory=list)


def rfc3339(t: dt.datetime) -> str:
    return t.astimezone(dt.timezone.utc).isoformat(timespec="milliseconds").replace("+00:00", "Z")


class Scanner:
    """One scan over a list of ranges.

    Sending and receiving share a single polling loop: the sender is paced
    by a token bucket holding at most one second of ``rate``, and the
    receive queue is drained between send batches and whenever the sender
    waits for tokens. Receiving never delays a send that is due.
    """

    drain_every = 64

    def __init__(self, ranges: Sequence[TargetRange], config: ScanConfig, transport: Transport,
                 clock=None):
        self.ranges = list(ranges)
        self.config = config
        self.transport = transport
        self.clock = clock or transport.clock or RealClock()
        self.n = check_schedule(self.ranges)
        self.builder = codec.ProbeBuilder(config.source_address, config.key, config.hop_limit)
        self.verifier = codec.ResponseVerifier(config.key, config.source_address,
                                               config.hop_limit, self.expected_target)
        self._targets = [target_maker(r) for r in self.ranges]
        self._sizes = [r.size for r in self.ranges]
        self.responses: list[list[ResponseRecord]] = [[] for _ in self.ranges]
        self.sent = [0] * len(self.ranges)
        self.bad_mac = 0
        self.parse_failures: list[codec.ParseFailure] = []
        self.complete = False

    def expected_target(self, token: int) -> Optional[int]:
        ri, ai = decode_token(token, self.n)
        if ri >= len(self.ranges) or ai >= self._sizes[ri]:
            return None
        return self._targets[ri](ai)

    def _drain(self) -> None:
        verify = self.verifier.verify
        responses, shift = self.responses, 32 - self.n
        for packet in self.transport.poll():
            try:
                r = verify(packet)
            except codec.BadMac:
                self.bad_mac += 1
                continue
            except codec.ParseFailure as exc:
                log.warning("unparseable response (%s): %s", exc, exc.hexdump())
                self.parse_failures.append(exc)
                continue
            responses[r.token >> shift].append(
                ResponseRecord(r.target, r.responder, r.icmp_type, r.icmp_code, r.distance))

    def _send_all(self) -> None:
        clock = self.clock
        interval = 1.0 / self.config.rate
        # unused send credit is capped at one second's worth of probes
        credit = max(0.0, 1.0 - interval)
        build, send = self.builder.build, self.transport.send
        targets, sent = self._targets, self.sent
        shift = 32 - self.n
        due = clock.now()
        since_drain = 0
        for ri, ai in make_schedule(self.ranges):
            now = clock.now()
            if now < due:
                self._drain()
                since_drain = 0
                clock.sleep_until(due)
            elif due < now - credit:
                due = now - credit
            send(build(targets[ri](ai), (ri << shift) | ai))
            due += interval
            sent[ri] += 1
            since_drain += 1
            if since_drain >= self.drain_every:
                since_drain = 0
                self._drain()

    def _grace(self) -> None:
        deadline = self.clock.now() + self.config.receive_grace
        while True:
            self._drain()
            remaining = deadline - self.clock.now()
            if remaining <= 0:
                break
            self.clock.sleep_until(min(self.clock.now() + 0.01, deadline))
        self._drain()

    def run(self) -> list[RangeResult]:
        started = self.clock.wall()
        t0 = self.clock.now()
        try:
            self._send_all()
            self._grace()
            self.complete = True
        except TransportFailure as exc:
            results = self._results(started, t0)
            raise ScanAborted(f"scan aborted: {exc}", results) from exc
        return self._results(started, t0)

    def _results(self, started, t0) -> list[RangeResult]:
        duration = self.clock.now() - t0
        ended = started + dt.timedelta(seconds=duration)
        out = []
        for i in range(len(self.ranges)):
            meta = {
                "source": format_address(self.config.source_address),
                "hop_limit": self.config.hop_limit,
                "started": rfc3339(started),
                "ended": rfc3339(ended),
                "duration_s": round(duration, 6),
                "rate_pps": float(self.config.rate),
                "key_fingerprint": codec.key_fingerprint(self.config.key),
                "probes_sent": self.sent[i],
                "complete": self.complete,
            }
            out.append(RangeResult(i, meta, list(self.responses[i])))
        return out


def run_scan(ranges: Sequence[TargetRange], config: ScanConfig,
             transport: Transport) -> list[RangeResult]:
    return Scanner(ranges, config, transport).run()


METADATA_SCHEMA = {
    "type": "object",
    "required": ["source", "hop_limit", "started", "ended", "duration_s", "rate_pps",
                 "key_fingerprint"],
    "properties": {
        "source": {"type": "string"},
        "hop_limit": {"type": "integer", "minimum": 1, "maximum": 255},
        "started": {"type": "string", "pattern": r"^\d{4}-\d\d-\d\dT\d\d:\d\d:\d\d\.\d{3}Z$"},
        "ended": {"type": "string", "pattern": r"^\d{4}-\d\d-\d\dT\d\d:\d\d:\d\d\.\d{3}Z$"},
        "duration_s": {"type": "number", "minimum": 0},
        "rate_pps": {"type": "number", "exclusiveMinimum": 0},
        "key_fingerprint": {"type": "string", "pattern": "^[0-9a-f]{8}$"},
        "probes_sent": {"type": "integer", "minimum": 0},
        "complete": {"type": "boolean"},
    },
}

RESPONSES_SCHEMA = {
    "type": "array",
    "items": {
        "type": "object",
        "required": ["target", "responder", "type", "code", "distance"],
        "additionalProperties": False,
        "properties": {
            "target": {"type": "string"},
            "responder": {"type": "string"},
            "type": {"enum": [1, 2, 3, 4, 129]},
            "code": {"type": "integer", "minimum": 0, "maximum": 255},
            "distance": {"type": ["integer", "null"], "minimum": 0},
        },
    },
}

TARGETS_SCHEMA = {
    "type": "array",
    "minItems": 1,
    "items": {
        "type": "object",
        "required": ["prefix"],
        "properties": {
            "prefix": {"type": "string"},
            "suffix": {"type": "string", "pattern": "^[0-9a-fA-F]*$"},
            "suffix_len": {"type": "integer", "minimum": 0, "maximum": 128},
        },
    },
}

_FIXED_DATE = (1980, 1, 1, 0, 0, 0)


def _member(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_FIXED_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def _dump(obj) -> bytes:
    return (json.dumps(obj, indent=1) + "\n").encode()


def write_archive(results: Sequence[RangeResult], targets_echo: bytes, path) -> None:
    """Write the scan archive; member order and timestamps are fixed."""
    if isinstance(targets_echo, str):
        targets_echo = targets_echo.encode()
    with zipfile.ZipFile(path, "w") as zf:
        _member(zf, "targets.json", targets_echo)
        for r in sorted(results, key=lambda r: r.index):
            _member(zf, f"{r.index}/metadata.json", _dump(r.metadata))
            _member(zf, f"{r.index}/responses.json", _dump([x.to_json() for x in r.responses]))


@dataclass
class ScanArchive:
    targets_raw: bytes
    ranges: list[TargetRange]
    results: list[RangeResult]


def _validate(obj, schema, where: str) -> None:
    try:
        jsonschema.validate(obj, schema)
    except jsonschema.ValidationError as exc:
        raise ValueError(f"{where}: {exc.message}") from None


def read_archive(path) -> ScanArchive:
    try:
        zf = zipfile.ZipFile(path)
    except zipfile.BadZipFile as exc:
        raise ValueError(f"{path}: not a scan archive: {exc}") from None
    with zf:
        names = set(zf.namelist())
        if "targets.json" not in names:
            raise ValueError(f"{path}: targets.json missing")
        raw = zf.read("targets.json")
        _validate(json.loads(raw), TARGETS_SCHEMA, f"{path}: targets.json")
        ranges = parse_targets(raw)
        results = []
        for i in range(len(ranges)):
            try:
                meta = json.loads(zf.read(f"{i}/metadata.json"))
                rows = json.loads(zf.read(f"{i}/responses.json"))
            except KeyError as exc:
                raise ValueError(f"{path}: {exc}") from None
            _validate(meta, METADATA_SCHEMA, f"{path}: {i}/metadata.json")
            _validate(rows, RESPONSES_SCHEMA, f"{path}: {i}/responses.json")
            results.append(RangeResult(i, meta, [ResponseRecord.from_json(x) for x in rows]))
    return ScanArchive(raw, ranges, results)


def archive_bytes(results: Sequence[RangeResult], targets_echo: bytes) -> bytes:
    buf = io.BytesIO()
    write_archive(results, targets_echo, buf)
    return buf.getvalue()


__all__ = [
    "EchoTransport", "LoopbackTransport", "NullTransport", "RangeResult", "RealClock",
    "ResponseRecord", "ScanAborted", "ScanArchive", "ScanConfig", "Scanner", "Transport",
    "TransportFailure", "VirtualClock", "read_archive", "run_scan",
    "write_archive",
]
