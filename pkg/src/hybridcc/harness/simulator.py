"""Seeded traffic simulator producing labeled benign and covert TCP flows.

Flows run between synthetic address pairs, one client per flow. Packets of all
flows are interleaved round-robin and stamped at a fixed inter-arrival time,
so no timing side channel exists in the generated captures.

Scenario files are ``key = value`` text::

    seed                 integer RNG seed (0)
    n_flows              number of analyzed flows (10)
    packets_per_flow     packets per flow (32)
    covert_flow_ratio    share of covert flows; floor(ratio * n_flows) are covert (0)
    covert_kinds         comma list cycled over covert flows (HYBRID); see COVERT_KINDS
    hybrid_fields        TCP fields used by HYBRID flows (SEQ)
    pad_bytes            padding bytes per SYN in PADDING mode (4)
    message              covert message, repeatable; text or hex:<digits>
    interarrival_us      gap between consecutive packets in microseconds (1000)
    dsa_size             L,N of the DSA domain parameters (1024,160)
    covert_key           private key chosen by the covert party; text or hex:<digits>
    learning_flows       benign flows emitted first as trusted learning traffic (0)
    data_bytes           application bytes per data packet (32)
    link_type            1 (Ethernet) or 101 (raw IPv4) (101)
    benign_isn_mode      uniform (only mode)
    syn_responses        answer each covert SYN with a server SYN-ACK and a client ACK (false)
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..covert_tcp import (
    CovertField, CovertTcpConfig, MAX_MESSAGE_LEN, build_covert_stream, decode_padding,
)
from ..detection.config import ConfigError
from ..labels import BENIGN, COVERT, FlowLabel, GroundTruthLabels
from ..packet_model import (
    LINKTYPE_ETHERNET, LINKTYPE_RAW, CaptureSet, FlowKey, Ipv4Header, PacketRecord, TcpFlags, TcpHeader,
    TcpSegment, seal_record,
)
from ..subliminal_dsa import (
    DegenerateK, DsaKeyPair, FixedBasePow, DsaSignature, covert_key_from_bytes, encode_record, generate_params, hash_message, keygen,
    message_nonces, sign, sign_chunk,
)

COVERT_KINDS = ("TCP_SEQ", "TCP_RESERVED", "TCP_PADDING", "SUBLIMINAL_DSA", "HYBRID", "PROTOCOL_ANOMALY")
TCP_KIND_FIELDS = {
    "TCP_SEQ": frozenset({CovertField.SEQ}),
    "TCP_RESERVED": frozenset({CovertField.RESERVED}),
    "TCP_PADDING": frozenset({CovertField.PADDING}),
}
DEFAULT_MESSAGE = b"Meet at the north gate at dawn. Bring the ledger and burn the rest. "

CLIENT_BASE = 0x0A000000  # 10.0.0.0
SERVER_BASE = 0x0A640000  # 10.100.0.0
SERVER_PORT = 443

ACK = TcpFlags.ACK
PSH_ACK = TcpFlags.PSH | TcpFlags.ACK
FIN_ACK = TcpFlags.FIN | TcpFlags.ACK

# header anomalies cycled by PROTOCOL_ANOMALY flows: (flags, urgent_pointer)
ANOMALIES = (
    (TcpFlags.SYN | TcpFlags.FIN, 0),
    (TcpFlags(0), 0),
    (TcpFlags.FIN, 0),
    (TcpFlags.URG | TcpFlags.ACK, 0),
    (TcpFlags.ACK, 80),
)


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    n_flows: int = 10
    packets_per_flow: int = 32
    covert_flow_ratio: float = 0.0
    covert_kinds: tuple = ("HYBRID",)
    hybrid_fields: frozenset = frozenset({CovertField.SEQ})
    pad_bytes: int = 4
    corpus: tuple = (DEFAULT_MESSAGE,)
    interarrival_us: int = 1000
    dsa_size: tuple = (1024, 160)
    covert_key: Optional[bytes] = None
    learning_flows: int = 0
    data_bytes: int = 32
    link_type: int = LINKTYPE_RAW
    benign_isn_mode: str = "uniform"
    syn_responses: bool = False

    def __post_init__(self):
        if not 0.0 <= self.covert_flow_ratio <= 1.0:
            raise ConfigError(f"covert_flow_ratio {self.covert_flow_ratio} outside [0, 1]")
        if self.n_flows < 0 or self.learning_flows < 0:
            raise ConfigError("flow counts must be non-negative")
        if self.packets_per_flow < 1:
            raise ConfigError("packets_per_flow must be at least 1")
        if self.n_flows + self.learning_flows > 0xFFFF:
            raise ConfigError("too many flows for the synthetic address plan")
        bad = [k for k in self.covert_kinds if k not in COVERT_KINDS]
        if bad or not self.covert_kinds:
            raise ConfigError(f"unknown covert kinds: {bad}" if bad else "covert_kinds is empty")
        if not self.hybrid_fields:
            raise ConfigError("hybrid_fields is empty")
        if not self.corpus or not any(self.corpus):
            raise ConfigError("message corpus is empty")
        if not 1 <= self.pad_bytes <= 36:
            raise ConfigError("pad_bytes must be in [1, 36]")
        if self.interarrival_us < 1:
            raise ConfigError("interarrival_us must be positive")
        if self.link_type not in (LINKTYPE_RAW, LINKTYPE_ETHERNET):
            raise ConfigError(f"unsupported link_type {self.link_type}")
        if self.benign_isn_mode != "uniform":
            raise ConfigError(f"unsupported benign_isn_mode {self.benign_isn_mode!r}")
        if self.data_bytes < 0:
            raise ConfigError("data_bytes must be non-negative")

    @property
    def n_covert(self) -> int:
        # floor, with a small tolerance so 0.3 * 10 counts as 3
        return int(self.covert_flow_ratio * self.n_flows + 1e-9)


def _bytes_value(text: str) -> bytes:
    if text.startswith("hex:"):
        try:
            return bytes.fromhex(text[4:])
        except ValueError as exc:
            raise ConfigError(f"bad hex value {text!r}") from exc
    return text.encode()


def parse_scenario_text(text: str, source: str = "<scenario>") -> ScenarioConfig:
    ints = {"seed", "n_flows", "packets_per_flow", "pad_bytes", "interarrival_us", "learning_flows",
            "data_bytes", "link_type"}
    kwargs = {}
    corpus = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        name, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        name, value = name.strip(), value.strip()
        try:
            if name in ints:
                kwargs[name] = int(value)
            elif name == "covert_flow_ratio":
                kwargs[name] = float(value)
            elif name == "covert_kinds":
                kwargs[name] = tuple(v.strip().upper() for v in value.split(",") if v.strip())
            elif name == "hybrid_fields":
                kwargs[name] = frozenset(CovertField[v.strip().upper()] for v in value.split(",") if v.strip())
            elif name == "message":
                corpus.append(_bytes_value(value))
            elif name == "dsa_size":
                size = tuple(int(v) for v in value.split(","))
                if len(size) != 2:
                    raise ValueError("dsa_size needs L,N")
                kwargs[name] = size
            elif name == "covert_key":
                kwargs[name] = _bytes_value(value)
            elif name == "benign_isn_mode":
                kwargs[name] = value
            elif name == "syn_responses":
                if value.lower() not in ("true", "false", "yes", "no", "1", "0"):
                    raise ValueError(value)
                kwargs[name] = value.lower() in ("true", "yes", "1")
            else:
                raise ConfigError(f"{source}:{lineno}: unknown key {name!r}")
        except (ValueError, KeyError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{source}:{lineno}: bad value for {name}: {value!r}") from exc
    if corpus:
        kwargs["corpus"] = tuple(corpus)
    return ScenarioConfig(**kwargs)


def load_scenario(path) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc.strerror}") from exc
    return parse_scenario_text(text, str(path))


@dataclass
class Simulation:
    capture: CaptureSet
    labels: GroundTruthLabels
    signing_key: DsaKeyPair


# a flow under construction: packets as (segment or prebuilt record, carrier mark)
# carrier mark: None benign, True observable carrier, False silent carrier
@dataclass
class _Flow:
    label: FlowLabel
    packets: list = field(default_factory=list)


class _FlowBuilder:
    def __init__(self, rng: random.Random, key: DsaKeyPair, g_pow: FixedBasePow, cfg: ScenarioConfig,
                 flow_id: int):
        self.rng = rng
        self.key = key
        self.g_pow = g_pow
        self.cfg = cfg
        self.client = CLIENT_BASE + 1 + flow_id
        self.server = SERVER_BASE + 1 + flow_id % 250
        self.sport = 1024 + (flow_id * 7919) % 60000
        self.ident = rng.getrandbits(16)
        self.seq = self.benign_isn()
        self.packets = []

    @property
    def flow_key(self) -> FlowKey:
        return FlowKey(self.client, self.sport, self.server, SERVER_PORT)

    @property
    def reply_key(self) -> FlowKey:
        return FlowKey(self.server, SERVER_PORT, self.client, self.sport)

    def benign_isn(self) -> int:
        # uniform, redrawn when the low 24 bits are zero so no benign SYN looks canonical
        while True:
            isn = self.rng.getrandbits(32)
            if isn & 0xFFFFFF:
                return isn

    def segment(self, flags: TcpFlags, payload: bytes = b"", seq: Optional[int] = None,
                urgent_pointer: int = 0, ack: Optional[int] = None) -> TcpSegment:
        self.ident = self.rng.getrandbits(16)
        ip = Ipv4Header(self.client, self.server, self.ident)
        if ack is None:
            ack = self.rng.getrandbits(32) if TcpFlags.ACK in flags else 0
        tcp = TcpHeader(self.sport, SERVER_PORT, self.seq if seq is None else seq, ack, flags,
                        urgent_pointer=urgent_pointer)
        return TcpSegment(ip, tcp, payload)

    def reply(self, syn: TcpHeader) -> None:
        """Benign server SYN-ACK to ``syn`` and the client's completing ACK."""
        server_isn = self.benign_isn()
        client_seq = (syn.seq_number + 1) & 0xFFFFFFFF
        ip = Ipv4Header(self.server, self.client, self.rng.getrandbits(16))
        self.add(TcpSegment(ip, TcpHeader(SERVER_PORT, self.sport, server_isn, client_seq, TcpFlags.SYN | ACK)))
        self.add(self.segment(ACK, seq=client_seq, ack=(server_isn + 1) & 0xFFFFFFFF))

    def add(self, item, carrier=None) -> None:
        self.packets.append((item, carrier))

    def handshake(self) -> None:
        self.add(self.segment(TcpFlags.SYN))
        self.seq = (self.seq + 1) & 0xFFFFFFFF
        self.add(self.segment(ACK))

    def data_packet(self, nonce_chunk: Optional[bytes]) -> None:
        data = self.rng.randbytes(self.cfg.data_bytes)
        h = hash_message(data, self.key.params)
        if nonce_chunk is None:
            sig = self._sign_uniform(h)
        else:
            sig = sign_chunk(nonce_chunk, h, self.key, self.g_pow)
        payload = data + encode_record(h, sig, self.key.params)
        self.add(self.segment(PSH_ACK, payload), None if nonce_chunk is None else True)
        self.seq = (self.seq + len(payload)) & 0xFFFFFFFF

    def _sign_uniform(self, h: int) -> DsaSignature:
        q = self.key.params.q
        while True:
            try:
                return sign(h, self.key, self.rng.randrange(1, q), self.g_pow)
            except DegenerateK:
                continue

    def close(self) -> None:
        self.add(self.segment(FIN_ACK))


def _message(cfg: ScenarioConfig, ordinal: int, length: int) -> bytes:
    base = cfg.corpus[ordinal % len(cfg.corpus)] or DEFAULT_MESSAGE
    length = max(0, min(length, MAX_MESSAGE_LEN))
    return (base * (length // len(base) + 1))[:length]


def _benign_packets(b: _FlowBuilder, n: int) -> None:
    b.handshake()
    for _ in range(max(0, n - 3)):
        b.data_packet(None)
    b.close()
    del b.packets[n:]


def _subliminal_packets(b: _FlowBuilder, n: int, ordinal: int, with_handshake: bool = True) -> None:
    if with_handshake:
        b.handshake()
        n_data = max(0, n - 3)
    else:
        b.add(b.segment(ACK))
        n_data = max(0, n - 2)
    width = b.key.params.q_len - 1
    msg = _message(b.cfg, ordinal, n_data * width - 2)
    chunks = message_nonces(msg, b.key.params) if n_data else []
    for i in range(n_data):
        b.data_packet(chunks[i] if i < len(chunks) else None)
    b.close()


def _covert_syn_packets(b: _FlowBuilder, n: int, fields: frozenset, ordinal: int) -> None:
    template = TcpSegment(Ipv4Header(b.client, b.server, b.ident),
                          TcpHeader(b.sport, SERVER_PORT, b.seq, 0, TcpFlags.SYN))
    ccfg = CovertTcpConfig(fields, template, b.cfg.pad_bytes)
    capacity = ccfg.per_packet_capacity
    n_syn = max(1, n // 3) if b.cfg.syn_responses else n
    msg = _message(b.cfg, ordinal, (n_syn * capacity - 16) // 8)
    records = build_covert_stream(msg, ccfg, link_type=b.cfg.link_type)
    for rec in records:
        tcp = rec.parse.tcp
        observable = (CovertField.SEQ in fields or tcp.reserved != 0
                      or any(decode_padding(tcp)))
        b.add(rec, observable)
        if b.cfg.syn_responses:
            b.reply(tcp)
    last = records[-1].parse
    b.ident = last.ip.identification
    b.seq = (last.tcp.seq_number + 1) & 0xFFFFFFFF


def _anomaly_packets(b: _FlowBuilder, n: int) -> None:
    for i in range(n):
        flags, urg = ANOMALIES[i % len(ANOMALIES)]
        b.add(b.segment(flags, urgent_pointer=urg), True)


def simulate(cfg: ScenarioConfig) -> Simulation:
    rng = random.Random(cfg.seed)
    params = generate_params(cfg.dsa_size, random.Random(rng.getrandbits(64)))
    if params.q_len < 2:
        raise ConfigError("dsa_size too small to carry nonce chunks")
    if cfg.covert_key is not None:
        key = keygen(params, covert_key=covert_key_from_bytes(cfg.covert_key, params))
    else:
        key = keygen(params, random.Random(rng.getrandbits(64)))

    g_pow = FixedBasePow(params.g, params.p, params.q.bit_length())
    covert_ids = set(random.Random(rng.getrandbits(64)).sample(range(cfg.n_flows), cfg.n_covert))
    kinds = {fid: cfg.covert_kinds[i % len(cfg.covert_kinds)] for i, fid in enumerate(sorted(covert_ids))}

    flows = []
    n = cfg.packets_per_flow
    for fid in range(cfg.learning_flows + cfg.n_flows):
        learning = fid < cfg.learning_flows
        analyzed_id = fid - cfg.learning_flows
        b = _FlowBuilder(random.Random(rng.getrandbits(64)), key, g_pow, cfg, fid)
        kind = None if learning else kinds.get(analyzed_id)
        if kind is None:
            _benign_packets(b, n)
        elif kind in TCP_KIND_FIELDS:
            _covert_syn_packets(b, n, TCP_KIND_FIELDS[kind], analyzed_id)
        elif kind == "SUBLIMINAL_DSA":
            _subliminal_packets(b, n, analyzed_id)
        elif kind == "HYBRID":
            n_syn = max(1, n // 2)
            _covert_syn_packets(b, n_syn, cfg.hybrid_fields, analyzed_id)
            _subliminal_packets(b, n - len(b.packets), analyzed_id + 1, with_handshake=False)
        else:
            _anomaly_packets(b, n)
        answered = cfg.syn_responses and (kind in TCP_KIND_FIELDS or kind == "HYBRID")
        keys = (str(b.flow_key), str(b.reply_key)) if answered else (str(b.flow_key),)
        label = FlowLabel(fid, BENIGN if kind is None else COVERT, kind, keys, learning)
        flows.append(_Flow(label, b.packets))

    return Simulation(*_merge(flows, cfg), key)


def _merge(flows: list, cfg: ScenarioConfig) -> tuple[CaptureSet, GroundTruthLabels]:
    """Interleave flows round-robin (learning flows first) on a fixed-interval clock."""
    learning = [f for f in flows if f.label.learning]
    analyzed = [f for f in flows if not f.label.learning]
    records, carriers, silent = [], [], []
    t = 0
    for group in (learning, analyzed):
        depth = max((len(f.packets) for f in group), default=0)
        for i in range(depth):
            for f in group:
                if i >= len(f.packets):
                    continue
                item, mark = f.packets[i]
                ts = divmod(t, 1_000_000)
                t += cfg.interarrival_us
                if isinstance(item, PacketRecord):
                    rec = item._replace(timestamp=ts)
                else:
                    rec = seal_record(item, ts, cfg.link_type)
                if mark is True:
                    carriers.append(len(records))
                elif mark is False:
                    silent.append(len(records))
                records.append(rec)
    learning_packets = sum(len(f.packets) for f in learning)
    labels = GroundTruthLabels(flows=[f.label for f in flows], carriers=carriers, silent_carriers=silent,
                               learning_packets=learning_packets, seed=cfg.seed)
    return CaptureSet(link_type=cfg.link_type, records=records), labels


def generate_traffic(cfg: ScenarioConfig) -> tuple[CaptureSet, GroundTruthLabels]:
    sim = simulate(cfg)
    return sim.capture, sim.labels
