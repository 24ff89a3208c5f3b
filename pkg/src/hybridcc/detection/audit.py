"""Payload signature audit: record parsing, verification, nonce recovery and randomness."""

from __future__ import annotations

from typing import Optional, Sequence

from ..packet_model import FlowKey
from ..rng_tests import BitStream, Overall, SourceTag, SuiteReport, Verdict, run_suite
from ..subliminal_dsa import KeyProvenance, Verifier, WardenKey, extract_subliminal, scan_records
from .rules import Finding

# (packet_index, timestamp, payload)
PayloadItem = tuple[int, float, bytes]


def _failed(report: SuiteReport) -> list:
    return [r for r in report.results if r.verdict is Verdict.FAIL]


def key_material_report(key: WardenKey, alpha: float) -> Optional[SuiteReport]:
    """Randomness of a covert-provenance private key, or None when not applicable."""
    if key.x is None or key.provenance is not KeyProvenance.COVERT_REPLACED:
        return None
    bits = BitStream.from_integers([key.x], key.params.q_len, SourceTag.KEY_MATERIAL)
    return run_suite(bits, alpha)


def audit_signatures(payloads: Sequence[PayloadItem], warden_key: Optional[WardenKey] = None,
                     alpha: float = 0.01, flow: Optional[FlowKey] = None,
                     key_report: Optional[SuiteReport] = None,
                     signature_packets: Optional[list] = None) -> tuple[list[Finding], SuiteReport]:
    """Audit the signature records carried in one flow's payloads.

    Without a key only decoding and range checks run. A public key adds
    verification; an escrowed private key adds nonce recovery and the
    randomness battery over the recovered nonces. Indices of packets carrying
    a valid signature are appended to ``signature_packets`` when given.
    """
    findings = []
    valid = []  # (h, sig)
    verifier = None
    last_ts = 0.0
    for index, ts, payload in payloads:
        records, errors = scan_records(payload)
        for err in errors:
            findings.append(Finding("MALFORMED_RECORD", {"error": type(err).__name__, "detail": str(err)},
                                    ts, packet_index=index, flow=flow))
        for h, sig in records:
            last_ts = ts
            if warden_key is None:
                ok, reason = sig.r > 0 and sig.s > 0, "zero r or s"
            else:
                if verifier is None:
                    verifier = Verifier(warden_key.y, warden_key.params)
                ok = h < warden_key.params.q and verifier(h, sig)
                reason = "verification failed"
            if ok:
                valid.append((h, sig))
                if signature_packets is not None and (not signature_packets or signature_packets[-1] != index):
                    signature_packets.append(index)
            else:
                findings.append(Finding("INVALID_SIGNATURE", {"reason": reason, "r": sig.r, "s": sig.s},
                                        ts, packet_index=index, flow=flow))

    if warden_key is None or warden_key.x is None or not valid:
        return findings, SuiteReport(results=[], alpha=alpha, overall=Overall.INSUFFICIENT_DATA)

    params = warden_key.params
    # only the low q_len - 1 bytes: an honest k < q has a biased top byte,
    # while the bytes below it are uniform and are where chunks are framed
    width = max(1, params.q_len - 1)
    mask = (1 << 8 * width) - 1
    nonces = [extract_subliminal(sig, h, warden_key.x, params) & mask for h, sig in valid]
    report = run_suite(BitStream.from_integers(nonces, width, SourceTag.RECOVERED_NONCES), alpha)
    if report.overall is Overall.NON_RANDOM:
        failed = _failed(report)
        findings.append(Finding(
            "SUBLIMINAL_NONCES",
            {"signatures": len(valid), "failed_tests": [r.test_name for r in failed], "overall": report.overall.value},
            last_ts, flow=flow, p_value=min(r.p_value for r in failed),
        ))

    if key_report is None:
        key_report = key_material_report(warden_key, alpha)
    if key_report is not None and key_report.overall is Overall.NON_RANDOM:
        failed = _failed(key_report)
        findings.append(Finding(
            "NONRANDOM_KEY",
            {"provenance": KeyProvenance.COVERT_REPLACED.value, "failed_tests": [r.test_name for r in failed]},
            last_ts, flow=flow, p_value=min(r.p_value for r in failed),
        ))
    return findings, report
