"""Command line entry point: ``proxysleuth <subcommand> ...``.

Session flags mirror :class:`SessionConfig` fields.  Precedence, lowest
first: ``--config`` file, ``PROXYSLEUTH_*`` environment variables, flags.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Any

from . import __version__
from .errors import ProxySleuthError
from .liveservers import default_manifest, load_manifest, make_self_signed_cert, serve_origin, \
    serve_sentinel
from .redirect import SentinelConfig
from .report import CSV_TABLES, export_report, verify_report
from .session import SUITES, Mode, capture_baseline, load_session_config, run_session, \
    save_baseline
from .suite import SuiteStatus, run_scenario_suite

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

SUITE_COMMANDS = {
    "detect": ["detect"],
    "cache": ["cache"],
    "rewrite": ["rewrite"],
    "redirect": ["redirect"],
    "full": list(SUITES),
}


def _pairs(values: list[str] | None, what: str) -> dict[str, str]:
    out = {}
    for item in values or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"{what} must look like KEY=VALUE, got {item!r}")
        out[key] = value
    return out


def _read_destinations(path: str) -> list[str]:
    lines = Path(path).read_text().splitlines()
    return [ln.split("#", 1)[0].strip() for ln in lines if ln.split("#", 1)[0].strip()]


def _sentinel_arg(value: str, mode: Mode) -> Any:
    # Real: NAME=HOSTNAME[@ADDRESS]   Sim: NAME
    if mode is Mode.SIM or "=" not in value:
        return value
    name, _, rest = value.partition("=")
    hostname, _, address = rest.partition("@")
    spec = {"name": name, "hostname": hostname}
    if address:
        spec["address"] = address
    return spec


def _add_session_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("session")
    g.add_argument("--config", help="YAML session config file")
    g.add_argument("--destinations", nargs="+", metavar="HOST")
    g.add_argument("--destinations-file", help="one hostname per line, '#' comments")
    g.add_argument("--probes-per-site", type=int)
    g.add_argument("--far-filter-multiplier", type=float)
    g.add_argument("--network-threshold-fraction", type=float)
    g.add_argument("--filter-mode", choices=["across-site", "per-site"])
    g.add_argument("--probe-excluded-sites", action="store_true", default=None)
    g.add_argument("--alternate-order", action="store_true", default=None)
    g.add_argument("--pair-interval-ms", type=float)
    g.add_argument("--min-object-size", type=int)
    g.add_argument("--object", dest="objects", action="append", metavar="URL")
    g.add_argument("--object-page", dest="object_pages", action="append", metavar="URL",
                   help="page whose embedded objects are measured")
    g.add_argument("--cache-pairs", type=int)
    g.add_argument("--cache-cooldown-seconds", type=float)
    g.add_argument("--cache-within-pair-gap-seconds", type=float)
    g.add_argument("--cache-min-effect-ms", type=float)
    g.add_argument("--sentinel", dest="sentinels", action="append",
                   metavar="NAME=HOSTNAME[@ADDR]", help="give twice (Sim mode: sentinel name)")
    g.add_argument("--baseline-vantage",
                   help="Real: baseline observations file; Sim: 'direct' or 'none'")
    g.add_argument("--mode", choices=[m.value for m in Mode])
    g.add_argument("--scenario")
    g.add_argument("--seed", type=int)
    g.add_argument("--connect-timeout-seconds", type=float)
    g.add_argument("--fetch-timeout-seconds", type=float)
    g.add_argument("--trust-anchor", help="extra CA file for TLS fetches")
    g.add_argument("--host", dest="host_table", action="append", metavar="NAME=ADDR",
                   help="static resolution override")
    g.add_argument("--port-map", action="append", metavar="LOGICAL=REAL",
                   help="e.g. 80=8080 to probe a test origin on high ports")
    o = p.add_argument_group("output")
    o.add_argument("-o", "--output", help="write here instead of stdout")
    o.add_argument("--format", choices=["json", "csv"], default="json")
    o.add_argument("--table", choices=sorted(CSV_TABLES), default="site_diffs")


_SESSION_KEYS = [
    "destinations", "probes_per_site", "far_filter_multiplier", "network_threshold_fraction",
    "filter_mode", "probe_excluded_sites", "alternate_order", "pair_interval_ms",
    "min_object_size", "objects", "object_pages", "cache_pairs", "cache_cooldown_seconds",
    "cache_within_pair_gap_seconds", "cache_min_effect_ms", "baseline_vantage", "mode",
    "scenario", "seed", "connect_timeout_seconds", "fetch_timeout_seconds", "trust_anchor",
]


def _config_from_args(args, suites: list[str] | None):
    overrides = {k: getattr(args, k, None) for k in _SESSION_KEYS}
    if args.destinations_file:
        overrides["destinations"] = (overrides["destinations"] or []) + \
            _read_destinations(args.destinations_file)
    if args.host_table:
        overrides["host_table"] = _pairs(args.host_table, "--host")
    if args.port_map:
        overrides["port_map"] = {int(k): int(v) for k, v in _pairs(args.port_map, "--port-map").items()}
    if suites is not None:
        overrides["suites"] = suites
    config = load_session_config(args.config, overrides)
    if args.sentinels:
        config.sentinels = [_sentinel_arg(s, config.mode) for s in args.sentinels]
    return config


def _emit(data: bytes, output: str | None) -> None:
    if output:
        Path(output).write_bytes(data)
    else:
        sys.stdout.write(data.decode())
        sys.stdout.flush()


def _summary_line(report) -> str:
    parts = []
    if report.network_verdict is not None:
        nv = report.network_verdict
        parts.append(f"proxy_present={str(nv.proxy_present).lower()} "
                     f"({nv.fraction_positive:.0%} of {len(nv.site_verdicts)} sites)")
    if report.cache_verdicts:
        parts.append(f"cached={sum(v.cached for v in report.cache_verdicts)}/"
                     f"{len(report.cache_verdicts)}")
    if report.rewrite_verdicts:
        rewritten = sum(v.classification.value == "ProxyRewritten" for v in report.rewrite_verdicts)
        parts.append(f"rewritten={rewritten}/{len(report.rewrite_verdicts)}")
    if report.redirect is not None:
        parts.append(f"redirection_detected={str(report.redirect.redirection_detected).lower()}")
    if report.warnings:
        parts.append(f"warnings={len(report.warnings)}")
    return ", ".join(parts) or "no verdicts"


def cmd_session(args, suites: list[str] | None) -> int:
    config = _config_from_args(args, suites)
    if getattr(args, "emit_baseline", None):
        observations = capture_baseline(config)
        save_baseline(observations, args.emit_baseline)
        print(f"wrote {len(observations)} baseline observations to {args.emit_baseline}",
              file=sys.stderr)
        return EXIT_OK
    report = run_session(config)
    problems = verify_report(report)
    if problems:  # would be a bug; keep the report but say so
        report.warnings.extend(f"self-check: {p}" for p in problems)
    _emit(export_report(report, args.format, args.table), args.output)
    print(_summary_line(report), file=sys.stderr)
    return EXIT_OK


def cmd_simulate(args) -> int:
    args.mode = Mode.SIM.value
    if args.scenario_file:
        args.scenario = args.scenario_file
    return cmd_session(args, args.suites)


def _wait_forever(handle, what: str) -> int:
    ports = ", ".join(f"{k}={v}" for k, v in handle.ports.items())
    print(f"{what} listening ({ports}); Ctrl-C to stop", file=sys.stderr, flush=True)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        handle.shutdown()
    return EXIT_OK


def _tls_files(args, hostnames: list[str]) -> tuple[str | None, str | None]:
    if args.self_signed:
        cert, key = make_self_signed_cert(hostnames, args.self_signed)
        print(f"self-signed certificate: {cert}", file=sys.stderr)
        return str(cert), str(key)
    return args.cert, args.key


def cmd_serve_origin(args) -> int:
    manifest = load_manifest(args.manifest) if args.manifest else default_manifest(args.body_seed)
    cert, key = _tls_files(args, args.hostname or ["localhost"])
    handle = serve_origin(manifest, {"http": args.http_port, "https": args.https_port},
                          certfile=cert, keyfile=key, bind=args.bind)
    return _wait_forever(handle, f"origin ({len(manifest)} objects)")


def cmd_serve_sentinel(args) -> int:
    config = SentinelConfig(args.name, args.hostname, args.address or args.bind,
                            args.control_port, args.data_port)
    cert, key = _tls_files(args, [args.hostname])
    handle = serve_sentinel(config, certfile=cert, keyfile=key, bind=args.bind)
    return _wait_forever(handle, f"sentinel {args.name}")


def cmd_suite(args) -> int:
    seeds = None
    if args.seed_list:
        seeds = [int(s) for s in args.seed_list.split(",")]
    elif args.seeds is not None:
        seeds = range(args.seeds)
    summary = run_scenario_suite(args.directory, seeds)
    for warning in summary.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    _emit(summary.to_csv(), args.output)
    counts = summary.counts()
    print(", ".join(f"{k}={v}" for k, v in counts.items()), file=sys.stderr)
    return EXIT_OK if counts[SuiteStatus.FAIL.value] == 0 else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="proxysleuth",
                                     description="Detect transparent Web proxies on a network path.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    helps = {
        "detect": "proxy existence from port-80 vs port-443 handshake RTTs",
        "cache": "back-to-back fetch pairs to spot a caching proxy",
        "rewrite": "compare objects fetched over 80 and 443 against a baseline",
        "redirect": "Host-header routing test between two sentinels",
        "full": "every suite in order",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        _add_session_flags(p)
        if name == "rewrite":
            p.add_argument("--emit-baseline", metavar="FILE",
                           help="only fetch objects and save them as a baseline (run off-network)")
        p.set_defaults(func=lambda a, suites=SUITE_COMMANDS[name]: cmd_session(a, suites))

    p = sub.add_parser("simulate", help="run a session against a simulated scenario")
    p.add_argument("scenario_file", nargs="?", help="scenario file or bundled name, e.g. proxy-on.scn")
    p.add_argument("--suites", nargs="+", choices=SUITES, help="default: the scenario's own")
    _add_session_flags(p)
    p.set_defaults(func=cmd_simulate)

    tls_help = "directory to write a fresh self-signed certificate into"
    p = sub.add_parser("serve-origin", help="serve a deterministic object manifest on HTTP and HTTPS")
    p.add_argument("--manifest", help="YAML manifest (default: built-in sweep)")
    p.add_argument("--body-seed", type=int, default=0)
    p.add_argument("--http-port", type=int, default=80)
    p.add_argument("--https-port", type=int, default=443)
    p.add_argument("--bind", default="0.0.0.0")
    p.add_argument("--hostname", action="append", help="certificate name (self-signed only)")
    p.add_argument("--cert")
    p.add_argument("--key")
    p.add_argument("--self-signed", metavar="DIR", help=tls_help)
    p.set_defaults(func=cmd_serve_origin)

    p = sub.add_parser("serve-sentinel", help="run a redirect sentinel with its control API")
    p.add_argument("--name", default="E1")
    p.add_argument("--hostname", required=True)
    p.add_argument("--address", help="public address (default: bind address)")
    p.add_argument("--data-port", type=int, default=80)
    p.add_argument("--control-port", type=int, default=443)
    p.add_argument("--bind", default="0.0.0.0")
    p.add_argument("--cert")
    p.add_argument("--key")
    p.add_argument("--self-signed", metavar="DIR", help=tls_help)
    p.set_defaults(func=cmd_serve_sentinel)

    p = sub.add_parser("suite", help="run every scenario in a directory against its ground truth")
    p.add_argument("directory")
    p.add_argument("--seeds", type=int, help="seeds 0..N-1 (default: per-scenario count)")
    p.add_argument("--seed-list", help="comma-separated seeds")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_suite)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ProxySleuthError, argparse.ArgumentTypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
