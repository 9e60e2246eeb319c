"""Command line interface: ``iapscan <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import os
import sys
from pathlib import Path

from . import analysis, codec, zmap
from .addr import (
    MalformedAddress,
    MalformedPrefix,
    parse_address,
    parse_prefix,
    read_address_list,
    read_prefix_list,
)
from .engine import ScanAborted, ScanConfig, Scanner, TransportFailure, read_archive, write_archive
from .schedule import TokenOverflow, dump_targets, load_targets

KEY_ENV = "IAPSCAN_KEY"
DEFAULT_SIM_SOURCE = "2001:db8:5ca7::1"

log = logging.getLogger("iapscan")


class UsageError(Exception):
    pass


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    return p


def _prefix(text: str):
    try:
        return parse_prefix(text)
    except MalformedPrefix as exc:
        raise UsageError(str(exc)) from None


def _load_hitlist(path: str) -> analysis.Hitlist:
    with open(_existing(path)) as fh:
        try:
            return analysis.hitlist_from_prefixes(read_prefix_list(fh))
        except (MalformedPrefix, ValueError) as exc:
            raise UsageError(f"{path}: {exc}") from None


def _open_out(path):
    if path in (None, "-"):
        return contextlib.nullcontext(sys.stdout)
    return open(path, "w", newline="")


def cmd_map(args) -> int:
    viewport = _prefix(args.viewport)
    if args.cell_len <= viewport.length:
        raise UsageError(f"--cell-len must be longer than the viewport /{viewport.length}")
    if args.cell_len - viewport.length > zmap.MAX_CELL_BITS:
        raise UsageError(f"--cell-len may be at most /{viewport.length + zmap.MAX_CELL_BITS}")
    with open(_existing(args.hitlist)) as fh:
        entries = list(read_prefix_list(fh))
    h = zmap.build_heatmap(entries, viewport, args.cell_len, args.log)
    zmap.render_heatmap(h, args.out)
    if args.csv:
        zmap.write_heatmap_csv(h, args.csv)
    print(f"{args.out}: {h.width}x{h.height} cells, {int(h.counts.sum())} entries, "
          f"{h.ignored} outside viewport", file=sys.stderr)
    return 0


def _scan_key(args) -> bytes:
    text = args.key or os.environ.get(KEY_ENV)
    if not text:
        return codec.random_key()
    try:
        return codec.parse_key(text)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_probe(args) -> int:
    key = _scan_key(args)
    try:
        ranges, raw = load_targets(_existing(args.targets))
    except (ValueError, KeyError) as exc:
        raise UsageError(f"{args.targets}: {exc}") from None
    if args.rate <= 0:
        raise UsageError("--rate must be positive")
    if not 1 <= args.hop_limit <= 255:
        raise UsageError("--hop-limit must be 1..255")
    kind, _, scenario = args.transport.partition(":")
    if kind == "sim":
        from .simnet import SimTransport, load_scenario
        if not scenario:
            raise UsageError("sim transport needs a scenario: --transport sim:NAME|FILE")
        try:
            topology = load_scenario(scenario, seed=args.seed)
        except FileNotFoundError:
            raise UsageError(f"no such scenario: {scenario}") from None
        transport = SimTransport(topology)
        source = args.source or DEFAULT_SIM_SOURCE
    elif kind == "live":
        if not args.i_understand_live:
            raise UsageError("live scanning sends real packets; pass --i-understand-live to proceed")
        if not args.source:
            raise UsageError("live scanning needs --source")
        from .live import RawSocketTransport
        source = args.source
        transport = RawSocketTransport(parse_address(source))
    else:
        raise UsageError(f"unknown transport {args.transport!r}")
    try:
        config = ScanConfig(parse_address(source), key, args.rate, args.hop_limit, args.grace)
    except (MalformedAddress, ValueError) as exc:
        raise UsageError(str(exc)) from None
    try:
        scanner = Scanner(ranges, config, transport)
    except TokenOverflow as exc:
        raise UsageError(str(exc)) from None
    try:
        results = scanner.run()
    except ScanAborted as exc:
        write_archive(exc.results, raw, args.out)
        print(f"scan aborted, partial results in {args.out}: {exc}", file=sys.stderr)
        return 1
    finally:
        transport.close()
    write_archive(results, raw, args.out)
    stats = analysis.scan_stats(results)
    print(json.dumps({**stats, "bad_mac": scanner.bad_mac,
                      "parse_failures": len(scanner.parse_failures)}), file=sys.stderr)
    return 0


def cmd_aggregate(args) -> int:
    with open(_existing(args.addresses)) as fh:
        h = analysis.aggregate_hitlist(read_address_list(fh), args.plen)
    with _open_out(args.out) as out:
        analysis.write_hitlist(h, out)
    return 0


def cmd_classify(args) -> int:
    with open(_existing(args.addresses)) as fh:
        addresses = list(read_address_list(fh))
    report = analysis.classify_iids(addresses).to_json()
    if args.oui_table:
        with open(_existing(args.oui_table)) as fh:
            table = analysis.load_oui_table(fh)
        report["vendors"] = dict(analysis.vendor_counts(set(addresses), table).most_common())
    if args.histogram_out:
        iids = {a & ((1 << 64) - 1) for a in addresses}
        rest = [i for i in iids if not analysis.is_eui64(i) and i >> 52]
        first = analysis.iid_byte_histogram(rest, 0, split_by_ul=True)
        second = analysis.iid_byte_histogram(rest, 1)
        with open(args.histogram_out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["value", "byte0_ul_clear", "byte0_ul_set", "byte1"])
            for v in range(256):
                w.writerow([v, int(first[0, v]), int(first[1, v]), int(second[v])])
    with _open_out(args.out) as out:
        json.dump(report, out, indent=1)
        out.write("\n")
    return 0


def _read_archive(path):
    try:
        return read_archive(_existing(path))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_pr(args) -> int:
    arc = _read_archive(args.archive)
    if args.prefix:
        put = _prefix(args.prefix)
        pr = analysis.compute_pr([r for res in arc.results for r in res.responses], put)
    else:
        pr = analysis.compute_pr_by_range(arc.ranges, arc.results)
    with _open_out(args.out) as out:
        w = csv.writer(out)
        w.writerow(["plen", "count"])
        for plen in sorted(pr.histogram):
            w.writerow([plen, pr.histogram[plen]])
    print(f"{len(pr.responsibilities)} responders, {len(pr.discarded)} discarded", file=sys.stderr)
    return 0


def cmd_gen_targets(args) -> int:
    h = _load_hitlist(args.hitlist)
    try:
        ranges = analysis.sample_probe_targets(h, args.n, args.deeper, args.resolution, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    data = dump_targets(ranges)
    if args.out in (None, "-"):
        sys.stdout.write(data.decode())
    else:
        Path(args.out).write_bytes(data)
    print(f"{len(ranges)} ranges, {sum(r.size for r in ranges)} targets", file=sys.stderr)
    return 0


def cmd_stats(args) -> int:
    arc = _read_archive(args.archive)
    stats = analysis.scan_stats(arc.results)
    if args.oui_table:
        with open(_existing(args.oui_table)) as fh:
            table = analysis.load_oui_table(fh)
        responders = {r.responder for res in arc.results for r in res.responses}
        stats["vendors"] = dict(analysis.vendor_counts(responders, table).most_common())
    json.dump(stats, sys.stdout, indent=1)
    sys.stdout.write("\n")
    return 0


def cmd_simulate(args) -> int:
    from .simnet import load_scenario
    try:
        topology = load_scenario(args.scenario, seed=args.seed)
    except FileNotFoundError:
        raise UsageError(f"no such scenario: {args.scenario}") from None
    json.dump(topology.summary(), sys.stdout, indent=1)
    sys.stdout.write("\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iapscan",
        description="IPv6 reconnaissance toolkit for residential ISP networks.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log debug output")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("map", help="render a hitlist heatmap on the Z-order map")
    p.add_argument("--hitlist", required=True, help="hitlist file, one CIDR prefix per line")
    p.add_argument("--viewport", required=True, help="prefix shown by the map, e.g. 2003::/19")
    p.add_argument("--cell-len", type=int, required=True, help="prefix length of one cell")
    p.add_argument("--log", action="store_true", help="log2(count+1) intensity scale")
    p.add_argument("--out", required=True, help="output PGM image")
    p.add_argument("--csv", help="also write non-empty cells as x,y,count CSV")
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("probe", help="scan target ranges with ICMPv6 echo requests")
    p.add_argument("--targets", required=True, help="target list JSON")
    p.add_argument("--rate", type=float, default=1000.0, help="packets per second (default 1000)")
    p.add_argument("--hop-limit", type=int, default=64, help="probe hop limit (default 64)")
    p.add_argument("--key", help=f"32-byte MAC key in hex (or set {KEY_ENV}); random if absent")
    p.add_argument("--transport", required=True, help="sim:SCENARIO (name or JSON file) or live")
    p.add_argument("--source", help=f"scan source address (sim default {DEFAULT_SIM_SOURCE})")
    p.add_argument("--grace", type=float, default=5.0,
                   help="seconds to keep receiving after the last probe (default 5)")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--i-understand-live", action="store_true",
                   help="acknowledge that a live scan sends packets to real networks")
    p.add_argument("--out", required=True, help="output ZIP archive")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("aggregate", help="aggregate an address list into a hitlist")
    p.add_argument("--addresses", required=True, help="address list, one per line")
    p.add_argument("--plen", type=int, required=True, help="hitlist prefix length (64, 56, 52, 48)")
    p.add_argument("--out", help="output hitlist (default stdout)")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("classify", help="estimate how IIDs were generated")
    p.add_argument("--addresses", required=True, help="address list, one per line")
    p.add_argument("--oui-table", help="OUI<TAB>vendor table for EUI-64 vendor counts")
    p.add_argument("--histogram-out", help="write first/second byte histograms as CSV")
    p.add_argument("--out", help="output JSON (default stdout)")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("pr", help="prefix-of-responsibility length histogram of a scan")
    p.add_argument("--archive", required=True, help="scan archive ZIP")
    p.add_argument("--prefix", help="prefix under test (default: each range's prefix)")
    p.add_argument("--out", help="output CSV (default stdout)")
    p.set_defaults(func=cmd_pr)

    p = sub.add_parser("gen-targets", help="sample PR-measurement targets from a hitlist")
    p.add_argument("--hitlist", required=True, help="hitlist file, e.g. hitlist48")
    p.add_argument("--n", type=int, required=True, help="number of hitlist entries to sample")
    p.add_argument("--deeper", type=int, required=True, help="length of the sub-prefix picked in each")
    p.add_argument("--resolution", type=int, required=True, help="one target per prefix of this length")
    p.add_argument("--seed", type=int, required=True, help="random seed")
    p.add_argument("--out", help="output target list JSON (default stdout)")
    p.set_defaults(func=cmd_gen_targets)

    p = sub.add_parser("stats", help="summary counts of a scan archive")
    p.add_argument("archive", help="scan archive ZIP")
    p.add_argument("--oui-table", help="OUI<TAB>vendor table for EUI-64 vendor counts")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("simulate", help="summarize a simulated network")
    p.add_argument("--scenario", required=True, help="scenario name (telekom, vodafone, oneandone) or JSON file")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"iapscan {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (TransportFailure, OSError, ValueError) as exc:
        print(f"iapscan {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
