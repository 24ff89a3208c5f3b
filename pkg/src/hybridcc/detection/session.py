"""One detection session over a capture: ingest, rules, statistics, audit, Bayes, log, metrics."""

from __future__ import annotations

import csv
import io
import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from ..labels import GroundTruthLabels
from ..packet_model import CaptureSet, FlowKey, PacketRecord, TcpFlags, flow_key
from ..subliminal_dsa import WardenKey
from .audit import audit_signatures, key_material_report
from .baseline import SessionBaseline, learn_baseline, score_statistical
from .bayes import Alarm, bayes_posterior, evaluate_alarm
from .config import EngineConfig
from .rules import CATALOG, Finding, analyze_header, match_payload_signatures

PLOT_HEADER = ["window_index", "findings", "posterior", "alarms"]


@dataclass
class WindowResult:
    window_index: int
    flow: str
    first_packet: int
    last_packet: int
    findings: int
    symptoms: tuple
    posterior: float
    alarms: int


@dataclass
class SessionReport:
    totals: dict = field(default_factory=dict)
    findings: list = field(default_factory=list)
    findings_per_rule: dict = field(default_factory=dict)
    suite_reports: dict = field(default_factory=dict)
    key_material: Optional[dict] = None
    posterior_trace: list = field(default_factory=list)
    alarms: list = field(default_factory=list)
    windows: list = field(default_factory=list)
    skipped_checks: dict = field(default_factory=dict)
    baseline: Optional[dict] = None
    metrics: Optional[dict] = None
    config: dict = field(default_factory=dict)
    log_entries: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "totals": self.totals,
            "findings_per_rule": self.findings_per_rule,
            "suite_reports": self.suite_reports,
            "key_material": self.key_material,
            "posterior_trace": [list(p) for p in self.posterior_trace],
            "alarms": [a.to_dict() for a in self.alarms],
            "windows": [vars(w) | {"symptoms": list(w.symptoms)} for w in self.windows],
            "skipped_checks": self.skipped_checks,
            "baseline": self.baseline,
            "metrics": self.metrics,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=_json_default) + "\n"

    def log_text(self) -> str:
        return "".join(json.dumps(e, default=_json_default) + "\n" for e in self.log_entries)

    def plot_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(PLOT_HEADER)
        for w in self.windows:
            writer.writerow([w.window_index, w.findings, repr(w.posterior), w.alarms])
        return buf.getvalue()


def _json_default(obj):
    if isinstance(obj, bytes):
        return obj.hex()
    if isinstance(obj, (set, frozenset, tuple)):
        return list(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def finding_log_entry(f: Finding) -> dict[str, Any]:
    rule = CATALOG[f.rule_id]
    return {
        "ts": f.timestamp, "rule_id": f.rule_id, "kind": rule.kind.value, "severity": rule.severity.value,
        "flow": str(f.flow) if f.flow is not None else None, "packet_index": f.packet_index,
        "evidence": f.evidence, "p_value": f.p_value,
    }


def alarm_log_entry(a: Alarm) -> dict[str, Any]:
    return {
        "ts": a.timestamp, "rule_id": "ALARM", "kind": "ALARM", "severity": "HIGH", "flow": a.flow,
        "packet_index": a.packet_index,
        "evidence": {"posterior": a.posterior, "threshold": a.threshold, "symptoms": list(a.symptoms),
                     "window_index": a.window_index},
        "p_value": None,
    }


def _rate(num: int, den: int) -> Optional[float]:
    return num / den if den else None


def compute_metrics(labels: GroundTruthLabels, analyzed: set, flagged_packets: set,
                    alarmed_flows: set) -> dict:
    """Packet- and flow-granularity confusion counts against ground truth.

    Packets: the analyzed ones minus silent carriers (covert packets whose
    carried bits equal benign header values). A packet is predicted covert
    when a per-packet rule fired on it or it fed a flow-level ISN or nonce
    finding. Flows: non-learning labeled flows; predicted covert when
    any of their directed keys raised an alarm.
    """
    analyzed = analyzed - set(labels.silent_carriers)
    carriers = set(labels.carriers) & analyzed
    tp = len(carriers & flagged_packets)
    fn = len(carriers) - tp
    fp = len((analyzed - carriers) & flagged_packets)
    tn = len(analyzed) - tp - fn - fp
    packet = {"tp": tp, "fn": fn, "fp": fp, "tn": tn, "covert_units": len(carriers),
              "detection_rate": _rate(tp, tp + fn), "false_positive_rate": _rate(fp, fp + tn)}

    ftp = ffn = ffp = ftn = 0
    by_kind = defaultdict(lambda: {"flows": 0, "detected": 0})
    flows = [fl for fl in labels.flows if not fl.learning]
    for fl in flows:
        hit = any(k in alarmed_flows for k in fl.keys)
        if fl.is_covert:
            by_kind[fl.kind]["flows"] += 1
            by_kind[fl.kind]["detected"] += hit
            ftp += hit
            ffn += not hit
        else:
            ffp += hit
            ftn += not hit
    flow = {"tp": ftp, "fn": ffn, "fp": ffp, "tn": ftn, "covert_units": ftp + ffn,
            "detection_rate": _rate(ftp, ftp + ffn), "false_positive_rate": _rate(ffp, ffp + ftn),
            "by_kind": {k: v for k, v in sorted(by_kind.items(), key=lambda kv: str(kv[0]))}}
    return {"packet": packet, "flow": flow}


def run_session(capture: CaptureSet, config: Optional[EngineConfig] = None,
                warden_key: Optional[WardenKey] = None, labels: Optional[GroundTruthLabels] = None,
                baseline: Optional[SessionBaseline] = None) -> SessionReport:
    config = config or EngineConfig()
    model = config.bayes_model()
    records = capture.records
    report = SessionReport(config=config.to_dict())

    # learning prefix: trusted traffic feeds the baseline and is not analyzed
    prefix = min(config.baseline_prefix, len(records))
    if baseline is None and prefix:
        learning = [r for r in records[:prefix] if r.parse is not None]
        if learning:
            baseline = learn_baseline(learning, config.t_prime, config.d_prime)
    report.baseline = baseline.to_dict() if baseline is not None else None

    flows: dict[FlowKey, list[tuple[int, PacketRecord]]] = defaultdict(list)
    for index in range(prefix, len(records)):
        rec = records[index]
        if rec.parse is None:
            continue
        flows[flow_key(rec.parse)].append((index, rec))

    key_report = key_material_report(warden_key, config.alpha) if warden_key is not None else None
    if key_report is not None:
        report.key_material = key_report.to_dict()

    skips = Counter()
    flagged_packets = set()
    alarmed_flows = set()
    window_index = 0
    for key in sorted(flows):
        packets = flows[key]
        key_text = str(key)
        header_findings = defaultdict(list)
        for index, rec in packets:
            seg = rec.parse
            found = analyze_header(seg, index, rec.time, key)
            if seg.payload and config.payload_signatures:
                found += match_payload_signatures(seg.payload, config.payload_signatures, index, rec.time, key)
            if found:
                header_findings[index] = found
                flagged_packets.add(index)

        payloads = [(i, r.time, r.parse.payload) for i, r in packets if r.parse.payload]
        audit_findings, signature_packets = [], []
        if payloads:
            audit_findings, suite = audit_signatures(payloads, warden_key, config.alpha, key, key_report,
                                                     signature_packets)
            report.suite_reports[key_text] = suite.to_dict()
            if any(f.rule_id == "SUBLIMINAL_NONCES" for f in audit_findings):
                flagged_packets.update(signature_packets)

        n_windows = -(-len(packets) // config.window_size)
        for w in range(n_windows):
            window = packets[w * config.window_size:(w + 1) * config.window_size]
            found = [f for i, _ in window for f in header_findings.get(i, ())]
            found += score_statistical(
                baseline, window, config.alpha, config.min_syn, config.min_flag_packets,
                config.min_ipid_packets, config.ipid_constant_ratio, flow=key, skips=skips,
            )
            if any(f.rule_id == "ISN_DISTRIBUTION" for f in found):
                flagged_packets.update(i for i, r in window if TcpFlags.SYN in r.parse.tcp.flags)
            if w == n_windows - 1:
                found += audit_findings
            symptoms = {f.rule_id for f in found}
            posterior = bayes_posterior(model, symptoms)
            last_index, last_rec = window[-1]
            report.findings.extend(found)
            report.log_entries.extend(finding_log_entry(f) for f in found)
            alarm = evaluate_alarm(model, posterior, report.alarms, symptoms=symptoms, flow=key_text,
                                   window_index=window_index, packet_index=last_index, timestamp=last_rec.time)
            if alarm is not None:
                alarmed_flows.add(key_text)
                report.log_entries.append(alarm_log_entry(alarm))
            report.posterior_trace.append((last_index, posterior))
            report.windows.append(WindowResult(
                window_index=window_index, flow=key_text, first_packet=window[0][0], last_packet=last_index,
                findings=len(found), symptoms=tuple(sorted(symptoms)), posterior=posterior,
                alarms=int(alarm is not None),
            ))
            window_index += 1

    parsed_total = sum(1 for r in records if r.parse is not None)
    report.totals = {
        "packets_seen": len(records),
        "packets_parsed": parsed_total,
        "packets_skipped": len(records) - parsed_total,
        "learning_packets": prefix,
        "packets_analyzed": sum(len(v) for v in flows.values()),
        "flows": len(flows),
        "windows": window_index,
        "findings": len(report.findings),
        "alarms": len(report.alarms),
    }
    report.findings_per_rule = dict(sorted(Counter(f.rule_id for f in report.findings).items()))
    report.skipped_checks = dict(sorted(skips.items()))
    if labels is not None:
        analyzed = {i for pk in flows.values() for i, _ in pk}
        report.metrics = compute_metrics(labels, analyzed, flagged_packets, alarmed_flows)
    return report


def write_outputs(report: SessionReport, report_path=None, log_path=None, plot_path=None) -> None:
    if report_path:
        Path(report_path).write_text(report.to_json())
    if log_path:
        Path(log_path).write_text(report.log_text())
    if plot_path:
        Path(plot_path).write_text(report.plot_csv())
