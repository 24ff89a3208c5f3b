"""Command-line entry point: craft labeled captures, run detection, summarize reports.

Exit status is 0 on success, 2 when ``detect`` raised at least one alarm and
1 on any error (one diagnostic line on stderr).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from ..detection.config import ConfigError, EngineConfig, load_config
from ..detection.session import run_session, write_outputs
from ..labels import read_labels, write_labels
from ..packet_model import CaptureError, PacketError, read_capture, write_capture
from ..subliminal_dsa import DsaError, read_key_file, warden_key_for, write_key_file
from .simulator import load_scenario, simulate

EXIT_OK, EXIT_ERROR, EXIT_ALARM = 0, 1, 2


class CliError(Exception):
    pass


def cmd_craft(args) -> int:
    cfg = load_scenario(args.scenario)
    sim = simulate(cfg)
    write_capture(sim.capture, args.out)
    write_labels(sim.labels, args.labels)
    if args.warden_key:
        write_key_file(warden_key_for(sim.signing_key, escrow=not args.public_only), args.warden_key)
    covert = sum(fl.is_covert for fl in sim.labels.flows)
    print(f"wrote {len(sim.capture.records)} packets in {len(sim.labels.flows)} flows "
          f"({covert} covert) to {args.out}")
    return EXIT_OK


def cmd_detect(args) -> int:
    if not Path(args.input).is_file():
        raise CliError(f"input capture not found: {args.input}")
    config = load_config(args.config) if args.config else EngineConfig()
    labels = read_labels(args.labels) if args.labels else None
    if args.baseline_prefix is not None:
        config = dataclasses.replace(config, baseline_prefix=args.baseline_prefix)
    elif labels is not None and config.baseline_prefix == 0 and labels.learning_packets:
        # the labeled learning flows are the whole learning period: consume all of them
        config = dataclasses.replace(config, baseline_prefix=labels.learning_packets,
                                     d_prime=max(config.d_prime, labels.learning_packets))
    warden_key = read_key_file(args.warden_key) if args.warden_key else None
    capture = read_capture(args.input)
    report = run_session(capture, config, warden_key, labels)
    write_outputs(report, args.report, args.log, args.plot)
    t = report.totals
    print(f"{t['packets_analyzed']} packets analyzed in {t['flows']} flows: "
          f"{t['findings']} findings, {t['alarms']} alarms")
    return EXIT_ALARM if report.alarms else EXIT_OK


def _fmt_rate(value) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def format_summary(data: dict) -> str:
    lines = []
    totals = data.get("totals", {})
    lines.append("totals")
    for name in ("packets_seen", "packets_parsed", "packets_skipped", "learning_packets", "packets_analyzed",
                 "flows", "windows", "findings", "alarms"):
        lines.append(f"  {name:<20} {totals.get(name, 0):>10}")
    lines.append("findings per rule")
    for rule, count in sorted(data.get("findings_per_rule", {}).items()):
        lines.append(f"  {rule:<20} {count:>10}")
    suites = data.get("suite_reports", {})
    verdicts = {}
    for suite in suites.values():
        verdicts[suite["overall"]] = verdicts.get(suite["overall"], 0) + 1
    if verdicts:
        lines.append("nonce suites per flow")
        for verdict, count in sorted(verdicts.items()):
            lines.append(f"  {verdict:<20} {count:>10}")
    alarms = data.get("alarms", [])
    if alarms:
        lines.append("alarms")
        for a in alarms:
            lines.append(f"  {a['flow']:<44} posterior {a['posterior']:.6f}  {','.join(a['symptoms'])}")
    metrics = data.get("metrics")
    if metrics:
        lines.append(f"  {'metrics':<12} {'tp':>7} {'fn':>7} {'fp':>7} {'tn':>7} {'det.rate':>9} {'fp.rate':>9}")
        for level in ("packet", "flow"):
            m = metrics[level]
            lines.append(f"  {level:<12} {m['tp']:>7} {m['fn']:>7} {m['fp']:>7} {m['tn']:>7} "
                         f"{_fmt_rate(m['detection_rate']):>9} {_fmt_rate(m['false_positive_rate']):>9}")
        for kind, v in metrics["flow"].get("by_kind", {}).items():
            lines.append(f"  {kind:<20} detected {v['detected']}/{v['flows']}")
    return "\n".join(lines)


def cmd_report(args) -> int:
    try:
        data = json.loads(Path(args.report).read_text())
    except FileNotFoundError:
        raise CliError(f"report not found: {args.report}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"report is not valid JSON: {exc}") from None
    print(format_summary(data))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybridcc", description="Hybrid covert channel crafting and detection")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("craft", help="generate a labeled capture from a scenario file")
    p.add_argument("--scenario", required=True, help="scenario key=value file")
    p.add_argument("--out", required=True, help="output pcap")
    p.add_argument("--labels", required=True, help="output ground-truth labels (JSON)")
    p.add_argument("--warden-key", help="also write the signing key file for the warden")
    p.add_argument("--public-only", action="store_true", help="omit the private key from --warden-key")
    p.set_defaults(func=cmd_craft)

    p = sub.add_parser("detect", help="run the detection engine over a capture")
    p.add_argument("--in", dest="input", required=True, help="input pcap")
    p.add_argument("--config", help="engine key=value file (defaults when omitted)")
    p.add_argument("--warden-key", help="warden key file (p, q, g, y and optionally x)")
    p.add_argument("--labels", help="ground-truth labels for metrics")
    p.add_argument("--baseline-prefix", type=int, help="leading packets used as learning traffic")
    p.add_argument("--report", required=True, help="output report (JSON)")
    p.add_argument("--log", required=True, help="output finding log (JSON lines)")
    p.add_argument("--plot", required=True, help="output per-window plot data (CSV)")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("report", help="print a summary table of a report")
    p.add_argument("--report", required=True, help="report JSON written by detect")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ConfigError, CaptureError, PacketError, DsaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    except (OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
