"""Covert_TCP-style storage channel in TCP SYN headers.

A message is framed with a 16-bit big-endian length, turned into one
bitstream, and dealt out packet by packet across the enabled carrier
fields in the fixed order SEQ (8 bits in the ISN high octet), RESERVED
(3 bits) and PADDING (bytes hidden after an EOL option).
"""

from __future__ import annotations

import contextlib
import enum
import gc
import struct
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Union

from .packet_model import (
    IP_STRUCT,
    LINKTYPE_RAW,
    TCP_STRUCT,
    Ipv4Header,
    PacketRecord,
    TcpFlags,
    TcpHeader,
    TcpSegment,
    fold_checksum,
    frame_packet,
)

OPT_EOL = 0x00
OPT_NOP = 0x01
PADDING_MARKER = bytes([OPT_NOP, OPT_NOP, OPT_EOL])
MAX_PADDING_BYTES = 36
MAX_MESSAGE_LEN = 0xFFFF


class CovertTcpError(Exception):
    pass


class NonCanonical(CovertTcpError):
    pass


class ChunkOutOfRange(CovertTcpError):
    pass


class CapacityExceeded(CovertTcpError):
    pass


class LengthMismatch(CovertTcpError):
    pass


class CovertField(enum.Enum):
    SEQ = "SEQ"
    RESERVED = "RESERVED"
    PADDING = "PADDING"


FIELD_ORDER = (CovertField.SEQ, CovertField.RESERVED, CovertField.PADDING)


@dataclass(frozen=True)
class CovertTcpConfig:
    fields_enabled: frozenset
    template: TcpSegment
    pad_bytes: int = 4

    def __post_init__(self):
        object.__setattr__(self, "fields_enabled", frozenset(self.fields_enabled))
        if not self.fields_enabled:
            raise ValueError("fields_enabled must be non-empty")
        if not 1 <= self.pad_bytes <= MAX_PADDING_BYTES:
            raise ValueError(f"pad_bytes must be in [1, {MAX_PADDING_BYTES}]")

    @property
    def per_packet_capacity(self) -> int:
        f = self.fields_enabled
        return (8 * (CovertField.SEQ in f) + 3 * (CovertField.RESERVED in f)
                + 8 * self.pad_bytes * (CovertField.PADDING in f))


# --- single-field codecs --------------------------------------------------

def encode_seq_byte(b: int) -> int:
    if not 0 <= b <= 0xFF:
        raise ChunkOutOfRange(f"byte value {b}")
    return b << 24


def decode_seq_byte(isn: int, strict: bool = False) -> int:
    """High octet of the ISN. ``strict`` raises NonCanonical if the low 24 bits are set."""
    if strict and isn & 0xFFFFFF:
        raise NonCanonical(f"ISN 0x{isn:08x} has non-zero low 24 bits")
    return (isn >> 24) & 0xFF


def is_canonical_isn(isn: int) -> bool:
    return isn & 0xFFFFFF == 0


def encode_reserved_bits(chunk: int, hdr: TcpHeader) -> TcpHeader:
    if not 0 <= chunk <= 7:
        raise ChunkOutOfRange(f"reserved chunk {chunk}")
    return hdr._replace(reserved=chunk)


def decode_reserved_bits(hdr: TcpHeader) -> int:
    return hdr.reserved


def encode_padding(data: bytes, hdr: TcpHeader) -> TcpHeader:
    """Hide ``data`` after an EOL option: NOP NOP EOL <len> <data> <zero pad>."""
    if len(data) > MAX_PADDING_BYTES:
        raise CapacityExceeded(f"{len(data)} bytes > {MAX_PADDING_BYTES}")
    if not data:
        return hdr
    body = _padding_options(data)
    return hdr._replace(options=body, data_offset=5 + len(body) // 4)


def _padding_options(data: bytes) -> bytes:
    body = PADDING_MARKER + bytes([len(data)]) + data
    return body + b"\x00" * (-len(body) % 4)


def decode_padding(hdr: TcpHeader) -> bytes:
    opts = hdr.options
    if not opts.startswith(PADDING_MARKER) or len(opts) < 4:
        return b""
    n = opts[3]
    body = opts[4:4 + n]
    if len(body) < n:
        raise LengthMismatch(f"padding declares {n} bytes, {len(body)} present")
    return body


# --- bit plumbing ---------------------------------------------------------

class _BitWriter:
    def __init__(self):
        self.parts = []
        self.nbits = 0

    def put(self, bits: int, n: int) -> None:
        if n:
            self.parts.append(format(bits, f"0{n}b"))
            self.nbits += n

    def read_bytes(self, start_byte: int, count: int) -> bytes:
        whole = self.nbits // 8
        if start_byte + count > whole:
            raise LengthMismatch(f"declared length {count} exceeds carried {max(whole - start_byte, 0)} bytes")
        if not whole:
            return b""
        v = int("".join(self.parts)[:whole * 8], 2)
        return v.to_bytes(whole, "big")[start_byte:start_byte + count]


def frame_message(msg: bytes) -> bytes:
    if len(msg) > MAX_MESSAGE_LEN:
        raise CapacityExceeded(f"message of {len(msg)} bytes exceeds {MAX_MESSAGE_LEN}")
    return struct.pack("!H", len(msg)) + bytes(msg)


def fixed_clock(start: tuple[int, int] = (0, 0), interval_us: int = 1000) -> Iterator[tuple[int, int]]:
    t = start[0] * 1_000_000 + start[1]
    while True:
        yield divmod(t, 1_000_000)
        t += interval_us


@contextlib.contextmanager
def _gc_paused():
    # building a stream allocates many small acyclic tuples; collections
    # triggered by them only rescan the live heap
    enabled = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if enabled:
            gc.enable()


_SYN_STRUCT = struct.Struct("!" + IP_STRUCT.format.lstrip("!") + TCP_STRUCT.format.lstrip("!"))


def build_covert_stream(msg: bytes, cfg: CovertTcpConfig,
                        clock: Optional[Iterator[tuple[int, int]]] = None,
                        link_type: int = LINKTYPE_RAW) -> list[PacketRecord]:
    """Craft the SYN sequence carrying ``msg``; one PacketRecord per covert SYN.

    The IP ID advances by one per packet from the template's value. Fields
    that are not enabled keep the template's values (its ISN included).
    """
    with _gc_paused():
        return _build_stream(msg, cfg, clock, link_type)


def _build_stream(msg: bytes, cfg: CovertTcpConfig, clock: Optional[Iterator[tuple[int, int]]],
                  link_type: int) -> list[PacketRecord]:
    stream = frame_message(msg)
    n_packets = -(-len(stream) * 8 // cfg.per_packet_capacity)
    # the stream as a bit string, zero-filled so the last packet's slices are full
    n_bits = len(stream) * 8
    bits = format(int.from_bytes(stream, "big"), f"0{n_bits}b") + "0" * cfg.per_packet_capacity
    pos = 0
    use_seq = CovertField.SEQ in cfg.fields_enabled
    use_reserved = CovertField.RESERVED in cfg.fields_enabled
    use_padding = CovertField.PADDING in cfg.fields_enabled
    pad_bytes = cfg.pad_bytes

    t_ip, t_tcp = cfg.template.ip, cfg.template.tcp
    if t_ip.options:
        raise ValueError("template must not carry IP options")
    src, dst, sport, dport = t_ip.src_addr, t_ip.dst_addr, t_tcp.src_port, t_tcp.dst_port
    tos, ttl, ff, proto, window = t_ip.tos, t_ip.ttl, t_ip.flags_fragment, t_ip.protocol, t_tcp.window
    # checksum terms that stay fixed for the whole stream (see packet_model.seal_packet)
    ip_const = (0x45 << 8 | tos) + ff + (ttl << 8 | proto) + src + dst
    tcp_const = src + dst + proto + sport + dport + window + int(TcpFlags.SYN)
    syn = TcpFlags.SYN
    raw_link = link_type == LINKTYPE_RAW
    # tuple.__new__ skips the generated NamedTuple constructors on this hot path
    new = tuple.__new__

    records = []
    append = records.append
    pack = _SYN_STRUCT.pack
    from_bytes = int.from_bytes
    last_ts = None
    seq = t_tcp.seq_number
    ident0 = t_ip.identification
    for i in range(n_packets):
        if use_seq:
            seq = int(bits[pos:pos + 8], 2) << 24
            pos += 8
        reserved = 0
        if use_reserved:
            reserved = int(bits[pos:pos + 3], 2)
            pos += 3
        options = b""
        if use_padding and pos < n_bits:
            nbytes = min(pad_bytes, -(-(n_bits - pos) // 8))
            options = _padding_options(int(bits[pos:pos + 8 * nbytes], 2).to_bytes(nbytes, "big"))
            pos += 8 * nbytes
        data_offset = 5 + (len(options) >> 2)
        total_length = 20 + data_offset * 4
        ident = (ident0 + i) & 0xFFFF
        offset_byte = (data_offset << 4) | (reserved << 1)
        # inlined fold_checksum; both sums include proto, so they are never zero
        ip_csum = 0xFFFF - ((ip_const + total_length + ident) % 0xFFFF or 0xFFFF)
        tcp_csum = 0xFFFF - ((tcp_const + data_offset * 4 + seq + (offset_byte << 8)
                              + from_bytes(options, "big")) % 0xFFFF or 0xFFFF)
        raw = (pack(0x45, tos, total_length, ident, ff, ttl, proto, ip_csum, src, dst,
                    sport, dport, seq, 0, offset_byte, 2, window, tcp_csum, 0)
               + options)
        seg = new(TcpSegment, (
            new(Ipv4Header, (src, dst, ident, ttl, proto, total_length, 5, 4, tos, ff, ip_csum, b"")),
            new(TcpHeader, (sport, dport, seq, 0, syn, window, data_offset, reserved, tcp_csum, 0, options, False)),
            b"", True, True,
        ))
        if clock is None:
            ts = divmod(i * 1000, 1_000_000)  # same as fixed_clock()
        else:
            ts = next(clock)
            if last_ts is not None and ts <= last_ts:
                raise ValueError("clock must be strictly increasing")
            last_ts = ts
        append(new(PacketRecord, (ts, raw if raw_link else frame_packet(raw, link_type), seg, None)))
    return records


def extract_covert_stream(segs: Iterable[Union[TcpSegment, PacketRecord]], cfg: CovertTcpConfig,
                          strict: bool = False) -> bytes:
    writer = _BitWriter()
    use_seq = CovertField.SEQ in cfg.fields_enabled
    use_reserved = CovertField.RESERVED in cfg.fields_enabled
    use_padding = CovertField.PADDING in cfg.fields_enabled
    for item in segs:
        seg = item.parse if isinstance(item, PacketRecord) else item
        if seg is None:
            continue
        if use_seq:
            writer.put(decode_seq_byte(seg.tcp.seq_number, strict=strict), 8)
        if use_reserved:
            writer.put(seg.tcp.reserved, 3)
        if use_padding:
            data = decode_padding(seg.tcp)
            writer.put(int.from_bytes(data, "big"), 8 * len(data))
    if writer.nbits < 16:
        raise LengthMismatch(f"only {writer.nbits} bits carried, no length prefix")
    (length,) = struct.unpack("!H", writer.read_bytes(0, 2))
    return writer.read_bytes(2, length)
