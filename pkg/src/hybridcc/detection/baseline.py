"""Learning-period baseline and per-window statistical scoring."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from ..packet_model import FlowKey, PacketRecord, TcpFlags, flags_label
from ..rng_tests import chi_square_sf
from .rules import Finding


class EmptyLearningStream(ValueError):
    pass


@dataclass(frozen=True)
class SessionBaseline:
    t_prime: float
    d_prime: int
    isn_high_byte_counts: tuple  # 256 bins
    flag_combo_counts: tuple  # sorted (label, count) pairs
    reserved_nonzero_rate: float
    packets_consumed: int
    elapsed: float
    frozen: bool = True

    @property
    def flag_total(self) -> int:
        return sum(c for _, c in self.flag_combo_counts)

    def to_dict(self) -> dict:
        return {
            "t_prime": self.t_prime, "d_prime": self.d_prime, "packets_consumed": self.packets_consumed,
            "elapsed": self.elapsed, "frozen": self.frozen,
            "reserved_nonzero_rate": self.reserved_nonzero_rate,
            "flag_combo_counts": dict(self.flag_combo_counts),
            "isn_syn_count": sum(self.isn_high_byte_counts),
        }


def learn_baseline(stream: Iterable[PacketRecord], t_prime: float, d_prime: int) -> SessionBaseline:
    """Consume trusted traffic until ``t_prime`` seconds have elapsed or ``d_prime`` packets were seen.

    Records without a parsed TCP segment are ignored. The returned baseline is
    immutable; a stream that ends before either trigger freezes at its end.
    """
    isn = [0] * 256
    combos = Counter()
    reserved_nonzero = 0
    consumed = 0
    start = last = None
    # elapsed time in integer microseconds so the t_prime boundary is exact
    limit_us = round(t_prime * 1_000_000)
    for rec in stream:
        if rec.parse is None:
            continue
        t = rec.timestamp[0] * 1_000_000 + rec.timestamp[1]
        if start is None:
            start = t
        if t - start >= limit_us or consumed >= d_prime:
            break
        seg = rec.parse
        consumed += 1
        last = t
        combos[flags_label(seg.tcp.flags)] += 1
        if seg.tcp.reserved:
            reserved_nonzero += 1
        if TcpFlags.SYN in seg.tcp.flags:
            isn[seg.tcp.seq_number >> 24] += 1
    if consumed == 0:
        raise EmptyLearningStream("no TCP packets in the learning stream")
    return SessionBaseline(
        t_prime=t_prime, d_prime=d_prime, isn_high_byte_counts=tuple(isn),
        flag_combo_counts=tuple(sorted(combos.items())),
        reserved_nonzero_rate=reserved_nonzero / consumed, packets_consumed=consumed,
        elapsed=(last - start) / 1_000_000, frozen=True,
    )


def isn_uniformity(high_bytes: Sequence[int]) -> tuple[float, float]:
    """Chi-square statistic and p-value of ISN high bytes against uniform over 256 values."""
    n = len(high_bytes)
    counts = Counter(high_bytes)
    # sum (O - n/256)^2 / (n/256) computed over integers
    stat = sum((256 * counts.get(b, 0) - n) ** 2 for b in range(256)) / (256 * n)
    return stat, chi_square_sf(stat, 255)


def flag_divergence(baseline: SessionBaseline, observed: Counter) -> tuple[float, float, int]:
    """Chi-square of observed flag-combination counts against add-half smoothed baseline shares."""
    base = dict(baseline.flag_combo_counts)
    labels = sorted(set(base) | set(observed))
    k = len(labels)
    n = sum(observed.values())
    denom = baseline.flag_total + 0.5 * k
    stat = 0.0
    for label in labels:
        expected = n * (base.get(label, 0) + 0.5) / denom
        stat += (observed.get(label, 0) - expected) ** 2 / expected
    return stat, chi_square_sf(stat, k - 1), k


def score_statistical(baseline: Optional[SessionBaseline], window: Sequence[tuple[int, PacketRecord]],
                      alpha: float = 0.01, min_syn: int = 64, min_flag_packets: int = 32,
                      min_ipid_packets: int = 16, ipid_constant_ratio: float = 0.9,
                      flow: Optional[FlowKey] = None, skips: Optional[Counter] = None) -> list[Finding]:
    """Statistical findings for one flow window of ``(packet_index, record)`` pairs.

    Checks that lack data are skipped and counted in ``skips``. Without a
    baseline the flag-distribution check is skipped.
    """
    skips = skips if skips is not None else Counter()
    if baseline is not None and not baseline.frozen:
        raise ValueError("baseline must be frozen before scoring")
    if not window:
        return []
    ts = window[-1][1].time
    last_index = window[-1][0]
    out = []

    high_bytes = [rec.parse.tcp.seq_number >> 24 for _, rec in window if TcpFlags.SYN in rec.parse.tcp.flags]
    if len(high_bytes) >= min_syn:
        stat, p = isn_uniformity(high_bytes)
        if p < alpha:
            out.append(Finding("ISN_DISTRIBUTION",
                               {"syn_count": len(high_bytes), "chi2": stat, "distinct_high_bytes": len(set(high_bytes)),
                                "last_packet_index": last_index},
                               ts, flow=flow, p_value=p))
    else:
        skips["isn_distribution"] += 1

    if baseline is None:
        skips["flag_dist_no_baseline"] += 1
    elif len(window) < min_flag_packets:
        skips["flag_dist"] += 1
    else:
        observed = Counter(flags_label(rec.parse.tcp.flags) for _, rec in window)
        stat, p, k = flag_divergence(baseline, observed)
        if k < 2:
            skips["flag_dist"] += 1
        elif p < alpha:
            out.append(Finding("FLAG_DIST", {"chi2": stat, "categories": k, "observed": dict(sorted(observed.items())),
                                "last_packet_index": last_index},
                               ts, flow=flow, p_value=p))

    if len(window) >= min_ipid_packets:
        ident, count = Counter(rec.parse.ip.identification for _, rec in window).most_common(1)[0]
        share = count / len(window)
        if share > ipid_constant_ratio:
            out.append(Finding("IPID_CONSTANT", {"ip_id": ident, "share": share, "packets": len(window), "last_packet_index": last_index},
                               ts, flow=flow))
    else:
        skips["ipid_constant"] += 1
    return out
