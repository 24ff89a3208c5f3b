"""Rule catalog and the per-packet header rules."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Optional

from ..packet_model import FlowKey, TcpFlags, TcpSegment


class RuleKind(enum.Enum):
    SIGNATURE = "SIGNATURE"
    PROTOCOL = "PROTOCOL"
    STATISTICAL = "STATISTICAL"
    SUBLIMINAL = "SUBLIMINAL"


class Severity(enum.Enum):
    LOW = "LOW"
    MED = "MED"
    HIGH = "HIGH"


@dataclass(frozen=True)
class DetectionRule:
    rule_id: str
    kind: RuleKind
    severity: Severity
    description: str


_RULES = [
    DetectionRule("RESERVED_NONZERO", RuleKind.PROTOCOL, Severity.HIGH,
                  "TCP reserved bits set"),
    DetectionRule("ILLEGAL_FLAG_COMBO", RuleKind.PROTOCOL, Severity.MED,
                  "SYN with FIN, no control flags, or FIN without ACK"),
    DetectionRule("URG_INCONSISTENT", RuleKind.PROTOCOL, Severity.MED,
                  "URG flag and urgent pointer disagree"),
    DetectionRule("ISN_LOW24_ZERO", RuleKind.PROTOCOL, Severity.HIGH,
                  "SYN whose sequence number has zero low 24 bits (byte-in-ISN encoding)"),
    DetectionRule("DATA_PAST_EOL", RuleKind.PROTOCOL, Severity.HIGH,
                  "non-zero option bytes after End of Option List"),
    DetectionRule("BAD_TCP_CHECKSUM", RuleKind.PROTOCOL, Severity.LOW,
                  "TCP checksum does not match the segment"),
    DetectionRule("FRAGMENTED_IP", RuleKind.PROTOCOL, Severity.LOW,
                  "IP fragment carrying TCP"),
    DetectionRule("IPID_CONSTANT", RuleKind.PROTOCOL, Severity.MED,
                  "most IP IDs in a flow window are identical"),
    DetectionRule("PAYLOAD_SIGNATURE", RuleKind.SIGNATURE, Severity.MED,
                  "payload matches a configured byte pattern"),
    DetectionRule("ISN_DISTRIBUTION", RuleKind.STATISTICAL, Severity.HIGH,
                  "ISN high bytes of a flow are not uniform"),
    DetectionRule("FLAG_DIST", RuleKind.STATISTICAL, Severity.MED,
                  "flag-combination frequencies diverge from the learned baseline"),
    DetectionRule("INVALID_SIGNATURE", RuleKind.PROTOCOL, Severity.MED,
                  "DSA signature record fails verification or range checks"),
    DetectionRule("MALFORMED_RECORD", RuleKind.PROTOCOL, Severity.LOW,
                  "signature record cannot be decoded"),
    DetectionRule("SUBLIMINAL_NONCES", RuleKind.SUBLIMINAL, Severity.HIGH,
                  "recovered DSA nonces fail the randomness battery"),
    DetectionRule("NONRANDOM_KEY", RuleKind.SUBLIMINAL, Severity.HIGH,
                  "covert-provenance key material fails the randomness battery"),
]

CATALOG: dict[str, DetectionRule] = {r.rule_id: r for r in _RULES}
assert len(CATALOG) == len(_RULES), "duplicate rule_id"


@dataclass(frozen=True)
class Finding:
    rule_id: str
    evidence: dict[str, Any]
    timestamp: float
    packet_index: Optional[int] = None
    flow: Optional[FlowKey] = None
    p_value: Optional[float] = None

    def __post_init__(self):
        rule = CATALOG[self.rule_id]
        if not self.evidence:
            raise ValueError(f"{self.rule_id}: evidence must be non-empty")
        needs_p = rule.kind in (RuleKind.STATISTICAL, RuleKind.SUBLIMINAL)
        if needs_p != (self.p_value is not None):
            raise ValueError(f"{self.rule_id}: p_value presence must match rule kind {rule.kind.value}")

    @property
    def rule(self) -> DetectionRule:
        return CATALOG[self.rule_id]

    def sort_key(self) -> tuple:
        return (self.flow or FlowKey(-1, -1, -1, -1),
                self.packet_index if self.packet_index is not None else float("inf"),
                self.rule_id)


CORE_FLAGS = TcpFlags.FIN | TcpFlags.SYN | TcpFlags.RST | TcpFlags.PSH | TcpFlags.ACK | TcpFlags.URG


def options_past_eol(options: bytes) -> Optional[bytes]:
    """Bytes after an EOL option, or None if the list has no EOL."""
    i = 0
    while i < len(options):
        kind = options[i]
        if kind == 0:
            return options[i + 1:]
        if kind == 1:
            i += 1
            continue
        if i + 1 >= len(options) or options[i + 1] < 2:
            return None  # malformed list; length rules are out of scope here
        i += options[i + 1]
    return None


def analyze_header(seg: TcpSegment, index: int, timestamp: float = 0.0,
                   flow: Optional[FlowKey] = None) -> list[Finding]:
    tcp, ip = seg.tcp, seg.ip
    flags = tcp.flags
    out = []

    def emit(rule_id, **evidence):
        out.append(Finding(rule_id, evidence, timestamp, packet_index=index, flow=flow))

    if tcp.reserved:
        emit("RESERVED_NONZERO", reserved=tcp.reserved)

    syn, fin = TcpFlags.SYN in flags, TcpFlags.FIN in flags
    if syn and fin:
        emit("ILLEGAL_FLAG_COMBO", flags=int(flags), reason="SYN+FIN")
    elif not flags & CORE_FLAGS:
        emit("ILLEGAL_FLAG_COMBO", flags=int(flags), reason="no flags")
    elif fin and TcpFlags.ACK not in flags and TcpFlags.RST not in flags:
        emit("ILLEGAL_FLAG_COMBO", flags=int(flags), reason="FIN without ACK")

    urg = TcpFlags.URG in flags
    if urg and tcp.urgent_pointer == 0:
        emit("URG_INCONSISTENT", urgent_pointer=0, urg=True)
    elif not urg and tcp.urgent_pointer:
        emit("URG_INCONSISTENT", urgent_pointer=tcp.urgent_pointer, urg=False)

    if syn and tcp.seq_number & 0xFFFFFF == 0:
        emit("ISN_LOW24_ZERO", seq_number=tcp.seq_number, high_byte=tcp.seq_number >> 24)

    tail = options_past_eol(tcp.options)
    if tail and any(tail):
        emit("DATA_PAST_EOL", hidden_bytes=len(tail.rstrip(b"\x00")), options=tcp.options.hex())

    if seg.tcp_checksum_ok is False:
        emit("BAD_TCP_CHECKSUM", checksum=tcp.checksum)

    if ip.more_fragments or ip.fragment_offset:
        emit("FRAGMENTED_IP", more_fragments=ip.more_fragments, fragment_offset=ip.fragment_offset)
    return out


def match_payload_signatures(payload: bytes, patterns: list[bytes], index: int, timestamp: float = 0.0,
                             flow: Optional[FlowKey] = None) -> list[Finding]:
    return [
        Finding("PAYLOAD_SIGNATURE", {"pattern": pat.hex(), "offset": payload.find(pat)},
                timestamp, packet_index=index, flow=flow)
        for pat in patterns if pat and pat in payload
    ]
