"""IPv4/TCP packet model and classic pcap capture files.

Everything here is a plain value type. Parsing records checksum validity
instead of trusting it; serialization can recompute checksums the way a
raw-socket crafter would.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101
SUPPORTED_LINK_TYPES = (LINKTYPE_ETHERNET, LINKTYPE_RAW)

ETHERTYPE_IPV4 = 0x0800
ETH_HEADER_LEN = 14
IP_PROTO_TCP = 6

PCAP_MAGIC = 0xA1B2C3D4
PCAP_MAGIC_SWAPPED = 0xD4C3B2A1
PCAP_GLOBAL_HEADER_LEN = 24
PCAP_RECORD_HEADER_LEN = 16


class PacketError(Exception):
    """Base class for packet parsing and crafting errors."""


class Truncated(PacketError):
    pass


class NotTcp(PacketError):
    pass


class BadOffset(PacketError):
    pass


class UnsupportedLinkType(PacketError):
    pass


class InvariantViolation(PacketError):
    def __init__(self, invariant: str, detail: str = ""):
        self.invariant = invariant
        super().__init__(f"{invariant}: {detail}" if detail else invariant)


class CaptureError(Exception):
    pass


class BadMagic(CaptureError):
    pass


class TruncatedRecord(CaptureError):
    pass


class TcpFlags(enum.IntFlag):
    FIN = 0x01
    SYN = 0x02
    RST = 0x04
    PSH = 0x08
    ACK = 0x10
    URG = 0x20
    ECE = 0x40
    CWR = 0x80


def flags_label(flags: TcpFlags) -> str:
    """Stable text form of a flag set, e.g. ``"ACK|PSH"``; ``"NONE"`` when empty."""
    names = [f.name for f in TcpFlags if f in flags]
    return "|".join(sorted(names)) if names else "NONE"


class Ipv4Header(NamedTuple):
    src_addr: int
    dst_addr: int
    identification: int = 0
    ttl: int = 64
    protocol: int = IP_PROTO_TCP
    total_length: int = 40
    ihl: int = 5
    version: int = 4
    tos: int = 0
    # 3 flag bits + 13-bit fragment offset, kept raw for byte-exact roundtrip
    flags_fragment: int = 0x4000
    header_checksum: int = 0
    options: bytes = b""

    @property
    def more_fragments(self) -> bool:
        return bool(self.flags_fragment & 0x2000)

    @property
    def fragment_offset(self) -> int:
        return self.flags_fragment & 0x1FFF


class TcpHeader(NamedTuple):
    src_port: int
    dst_port: int
    seq_number: int = 0
    ack_number: int = 0
    flags: TcpFlags = TcpFlags(0)
    window: int = 64240
    data_offset: int = 5
    reserved: int = 0
    checksum: int = 0
    urgent_pointer: int = 0
    options: bytes = b""
    # historic ECN-nonce bit; kept only so headers roundtrip bit-exactly
    ns: bool = False


class TcpSegment(NamedTuple):
    ip: Ipv4Header
    tcp: TcpHeader
    payload: bytes = b""
    # None means "not checked yet" (hand-built segments)
    ip_checksum_ok: Optional[bool] = None
    tcp_checksum_ok: Optional[bool] = None


class FlowKey(NamedTuple):
    src_addr: int
    src_port: int
    dst_addr: int
    dst_port: int

    def __str__(self) -> str:
        return f"{format_addr(self.src_addr)}:{self.src_port}>{format_addr(self.dst_addr)}:{self.dst_port}"


class PacketRecord(NamedTuple):
    timestamp: tuple[int, int]
    raw: bytes
    parse: Optional[TcpSegment] = None
    orig_len: Optional[int] = None

    @property
    def time(self) -> float:
        return self.timestamp[0] + self.timestamp[1] / 1e6


@dataclass
class CaptureSet:
    link_type: int = LINKTYPE_RAW
    records: list[PacketRecord] = field(default_factory=list)
    snaplen: int = 65535


def format_addr(addr: int) -> str:
    return ".".join(str((addr >> s) & 0xFF) for s in (24, 16, 8, 0))


def parse_addr(text: str) -> int:
    parts = [int(p) for p in text.split(".")]
    if len(parts) != 4 or any(not 0 <= p <= 255 for p in parts):
        raise ValueError(f"bad IPv4 address {text!r}")
    return (parts[0] << 24) | (parts[1] << 16) | (parts[2] << 8) | parts[3]


def flow_key(seg: TcpSegment) -> FlowKey:
    return FlowKey(seg.ip.src_addr, seg.tcp.src_port, seg.ip.dst_addr, seg.tcp.dst_port)


# --- checksums -------------------------------------------------------------

def internet_checksum(data: bytes) -> int:
    """RFC 1071 one's-complement checksum of ``data``.

    Uses 2**16 == 1 (mod 0xFFFF): the end-around-carry sum of the 16-bit
    words is the big-endian value of the buffer reduced mod 0xFFFF, with
    0xFFFF standing in for a zero residue of non-zero data.
    """
    if len(data) % 2:
        data += b"\x00"
    value = int.from_bytes(data, "big")
    total = value % 0xFFFF
    if total == 0 and value:
        total = 0xFFFF
    return ~total & 0xFFFF


def _tcp_header_bytes(tcp: TcpHeader, checksum: int) -> bytes:
    offset_byte = ((tcp.data_offset & 0xF) << 4) | ((tcp.reserved & 0x7) << 1) | int(tcp.ns)
    return struct.pack(
        "!HHIIBBHHH",
        tcp.src_port, tcp.dst_port, tcp.seq_number, tcp.ack_number,
        offset_byte, int(tcp.flags) & 0xFF, tcp.window, checksum, tcp.urgent_pointer,
    ) + tcp.options


def _ip_header_bytes(ip: Ipv4Header, checksum: int) -> bytes:
    return struct.pack(
        "!BBHHHBBHII",
        ((ip.version & 0xF) << 4) | (ip.ihl & 0xF), ip.tos, ip.total_length,
        ip.identification, ip.flags_fragment, ip.ttl, ip.protocol, checksum,
        ip.src_addr, ip.dst_addr,
    ) + ip.options


def compute_tcp_checksum(seg: TcpSegment) -> int:
    """TCP checksum over pseudo-header, header (checksum zeroed) and payload.

    The TCP length in the pseudo-header is taken from ``data_offset`` and the
    payload, not from the IP header, so inconsistent segments still hash.
    """
    tcp_len = seg.tcp.data_offset * 4 + len(seg.payload)
    pseudo = struct.pack("!IIBBH", seg.ip.src_addr, seg.ip.dst_addr, 0, seg.ip.protocol, tcp_len & 0xFFFF)
    return internet_checksum(pseudo + _tcp_header_bytes(seg.tcp, 0) + seg.payload)


def compute_ip_checksum(ip: Ipv4Header) -> int:
    return internet_checksum(_ip_header_bytes(ip, 0))


# --- parse / serialize ----------------------------------------------------

def strip_link_layer(raw: bytes, link_type: int) -> bytes:
    if link_type == LINKTYPE_RAW:
        return raw
    if link_type == LINKTYPE_ETHERNET:
        if len(raw) < ETH_HEADER_LEN:
            raise Truncated(f"ethernet frame of {len(raw)} bytes")
        (ethertype,) = struct.unpack_from("!H", raw, 12)
        if ethertype != ETHERTYPE_IPV4:
            raise NotTcp(f"ethertype 0x{ethertype:04x}")
        return raw[ETH_HEADER_LEN:]
    raise UnsupportedLinkType(f"link type {link_type}")


def frame_packet(ip_bytes: bytes, link_type: int) -> bytes:
    """Wrap an IP datagram for the given link type (fixed synthetic MACs on Ethernet)."""
    if link_type == LINKTYPE_RAW:
        return ip_bytes
    if link_type == LINKTYPE_ETHERNET:
        return bytes.fromhex("020000000002" "020000000001") + struct.pack("!H", ETHERTYPE_IPV4) + ip_bytes
    raise UnsupportedLinkType(f"link type {link_type}")


def parse_packet(raw: bytes, link_type: int = LINKTYPE_RAW) -> TcpSegment:
    if not raw:
        raise Truncated("empty input")
    data = strip_link_layer(raw, link_type)
    if len(data) < 20:
        raise Truncated(f"{len(data)} bytes is shorter than an IPv4 header")
    version = data[0] >> 4
    if version != 4:
        raise NotTcp(f"IP version {version}")
    ihl = data[0] & 0xF
    if ihl < 5:
        raise BadOffset(f"ihl={ihl}")
    (_, tos, total_length, ident, flags_fragment, ttl, proto, hcsum, src, dst) = struct.unpack_from(
        "!BBHHHBBHII", data
    )
    ip_len = ihl * 4
    if total_length < ip_len:
        raise BadOffset(f"total_length={total_length} < header length {ip_len}")
    if len(data) < total_length:
        raise Truncated(f"{len(data)} bytes, IP total_length {total_length}")
    if proto != IP_PROTO_TCP:
        raise NotTcp(f"IP protocol {proto}")
    ip = Ipv4Header(
        src_addr=src, dst_addr=dst, identification=ident, ttl=ttl, protocol=proto,
        total_length=total_length, ihl=ihl, version=version, tos=tos,
        flags_fragment=flags_fragment, header_checksum=hcsum, options=bytes(data[20:ip_len]),
    )
    segment = data[ip_len:total_length]
    if len(segment) < 20:
        raise Truncated(f"TCP segment of {len(segment)} bytes")
    sport, dport, seq, ack, off_byte, flag_byte, window, csum, urg = struct.unpack_from("!HHIIBBHHH", segment)
    data_offset = off_byte >> 4
    if data_offset < 5:
        raise BadOffset(f"data_offset={data_offset}")
    tcp_len = data_offset * 4
    if len(segment) < tcp_len:
        raise Truncated(f"TCP header declares {tcp_len} bytes, {len(segment)} available")
    tcp = TcpHeader(
        src_port=sport, dst_port=dport, seq_number=seq, ack_number=ack,
        flags=TcpFlags(flag_byte), window=window, data_offset=data_offset,
        reserved=(off_byte >> 1) & 0x7, checksum=csum, urgent_pointer=urg,
        options=bytes(segment[20:tcp_len]), ns=bool(off_byte & 1),
    )
    zeroed_ip = bytearray(data[:ip_len])
    zeroed_ip[10:12] = b"\x00\x00"
    zeroed_tcp = bytearray(segment)
    zeroed_tcp[16:18] = b"\x00\x00"
    pseudo = struct.pack("!IIBBH", src, dst, 0, proto, len(segment) & 0xFFFF)
    return TcpSegment(
        ip=ip, tcp=tcp, payload=bytes(segment[tcp_len:]),
        ip_checksum_ok=internet_checksum(bytes(zeroed_ip)) == hcsum,
        tcp_checksum_ok=internet_checksum(pseudo + zeroed_tcp) == csum,
    )


def check_invariants(seg: TcpSegment) -> None:
    ip, tcp = seg.ip, seg.tcp
    if ip.version != 4:
        raise InvariantViolation("ip.version == 4", f"got {ip.version}")
    if not 5 <= ip.ihl <= 15:
        raise InvariantViolation("ip.ihl in [5, 15]", f"got {ip.ihl}")
    if len(ip.options) != ip.ihl * 4 - 20:
        raise InvariantViolation("len(ip.options) == ihl*4 - 20", f"got {len(ip.options)}")
    if len(tcp.options) % 4:
        raise InvariantViolation("tcp options length multiple of 4", f"got {len(tcp.options)}")
    if not 5 <= tcp.data_offset <= 15:
        raise InvariantViolation("tcp.data_offset in [5, 15]", f"got {tcp.data_offset}")
    if len(tcp.options) != tcp.data_offset * 4 - 20:
        raise InvariantViolation("len(tcp.options) == data_offset*4 - 20", f"got {len(tcp.options)}")
    if not 0 <= tcp.reserved <= 7:
        raise InvariantViolation("tcp.reserved in [0, 7]", f"got {tcp.reserved}")
    expected = ip.ihl * 4 + tcp.data_offset * 4 + len(seg.payload)
    if ip.total_length != expected:
        raise InvariantViolation("ip.total_length == ihl*4 + data_offset*4 + len(payload)",
                                 f"{ip.total_length} != {expected}")


def serialize_packet(seg: TcpSegment, recompute_checksums: bool = True) -> bytes:
    """IP datagram bytes for ``seg`` (no link-layer header)."""
    check_invariants(seg)
    ip_csum, tcp_csum = seg.ip.header_checksum, seg.tcp.checksum
    if recompute_checksums:
        ip_csum = compute_ip_checksum(seg.ip)
        tcp_csum = compute_tcp_checksum(seg)
    return _ip_header_bytes(seg.ip, ip_csum) + _tcp_header_bytes(seg.tcp, tcp_csum) + seg.payload


IP_STRUCT = struct.Struct("!BBHHHBBHII")
TCP_STRUCT = struct.Struct("!HHIIBBHHH")


def fold_checksum(total: int) -> int:
    # ``total`` is a plain sum of non-negative field values, congruent to
    # the word sum mod 0xFFFF; a zero residue of non-zero data folds to 0xFFFF
    folded = total % 0xFFFF
    if folded == 0 and total:
        folded = 0xFFFF
    return ~folded & 0xFFFF


def seal_packet(seg: TcpSegment) -> tuple[TcpSegment, bytes]:
    """Fix derived fields (ihl, data_offset, total_length, checksums, validity marks).

    Returns the sealed segment and its serialized IP datagram. Checksums are
    summed arithmetically from field values, the way a crafter patches a
    template; ``compute_tcp_checksum`` is the byte-level route.
    """
    ip, tcp, payload = seg.ip, seg.tcp, seg.payload
    if len(tcp.options) % 4 or len(tcp.options) > 40:
        raise InvariantViolation("tcp options length multiple of 4, at most 40", f"got {len(tcp.options)}")
    if len(ip.options) % 4 or len(ip.options) > 40:
        raise InvariantViolation("ip options length multiple of 4, at most 40", f"got {len(ip.options)}")
    data_offset = 5 + (len(tcp.options) >> 2)
    ihl = 5 + (len(ip.options) >> 2)
    tcp_len = data_offset * 4 + len(payload)
    total_length = ihl * 4 + tcp_len
    flags = int(tcp.flags) & 0xFF
    offset_byte = (data_offset << 4) | ((tcp.reserved & 0x7) << 1) | int(tcp.ns)
    src, dst = ip.src_addr, ip.dst_addr
    ver_ihl = (ip.version << 4) | ihl

    ip_csum = fold_checksum(
        (ver_ihl << 8 | ip.tos) + total_length + ip.identification + ip.flags_fragment
        + (ip.ttl << 8 | ip.protocol) + src + dst + int.from_bytes(ip.options, "big")
    )
    padded = payload + b"\x00" if len(payload) & 1 else payload
    tcp_csum = fold_checksum(
        src + dst + ip.protocol + tcp_len + tcp.src_port + tcp.dst_port + tcp.seq_number
        + tcp.ack_number + (offset_byte << 8 | flags) + tcp.window + tcp.urgent_pointer
        + int.from_bytes(tcp.options, "big") + int.from_bytes(padded, "big")
    )
    raw = (IP_STRUCT.pack(ver_ihl, ip.tos, total_length, ip.identification, ip.flags_fragment,
                           ip.ttl, ip.protocol, ip_csum, src, dst)
           + ip.options
           + TCP_STRUCT.pack(tcp.src_port, tcp.dst_port, tcp.seq_number, tcp.ack_number,
                              offset_byte, flags, tcp.window, tcp_csum, tcp.urgent_pointer)
           + tcp.options + payload)
    sealed = TcpSegment(
        Ipv4Header(src, dst, ip.identification, ip.ttl, ip.protocol, total_length,
                   ihl, ip.version, ip.tos, ip.flags_fragment, ip_csum, ip.options),
        TcpHeader(tcp.src_port, tcp.dst_port, tcp.seq_number, tcp.ack_number, tcp.flags, tcp.window,
                  data_offset, tcp.reserved, tcp_csum, tcp.urgent_pointer, tcp.options, tcp.ns),
        payload, True, True,
    )
    return sealed, raw


def seal_segment(seg: TcpSegment) -> TcpSegment:
    return seal_packet(seg)[0]


def make_record(seg: TcpSegment, timestamp: tuple[int, int], link_type: int = LINKTYPE_RAW) -> PacketRecord:
    """Record for an already-consistent segment; its stored checksums are written as-is."""
    raw = frame_packet(serialize_packet(seg, recompute_checksums=False), link_type)
    return PacketRecord(timestamp=timestamp, raw=raw, parse=seg)


def seal_record(seg: TcpSegment, timestamp: tuple[int, int], link_type: int = LINKTYPE_RAW) -> PacketRecord:
    sealed, raw = seal_packet(seg)
    return PacketRecord(timestamp, frame_packet(raw, link_type), sealed)


def try_parse(raw: bytes, link_type: int) -> Optional[TcpSegment]:
    try:
        return parse_packet(raw, link_type)
    except PacketError:
        return None


# --- pcap -----------------------------------------------------------------

def read_capture(path) -> CaptureSet:
    data = Path(path).read_bytes()
    if len(data) < PCAP_GLOBAL_HEADER_LEN:
        raise BadMagic(f"{path}: file shorter than pcap global header")
    (magic,) = struct.unpack_from("<I", data)
    if magic == PCAP_MAGIC:
        endian = "<"
    elif magic == PCAP_MAGIC_SWAPPED:
        endian = ">"
    else:
        raise BadMagic(f"{path}: magic 0x{magic:08x}")
    _, _, _, _, _, snaplen, network = struct.unpack_from(endian + "IHHiIII", data)
    capture = CaptureSet(link_type=network, snaplen=snaplen)
    pos = PCAP_GLOBAL_HEADER_LEN
    while pos < len(data):
        if len(data) - pos < PCAP_RECORD_HEADER_LEN:
            raise TruncatedRecord(f"{path}: partial record header at offset {pos}")
        ts_sec, ts_usec, incl_len, orig_len = struct.unpack_from(endian + "IIII", data, pos)
        pos += PCAP_RECORD_HEADER_LEN
        if incl_len > len(data) - pos:
            raise TruncatedRecord(f"{path}: caplen {incl_len} exceeds remaining {len(data) - pos} bytes")
        raw = data[pos:pos + incl_len]
        pos += incl_len
        parsed = try_parse(raw, network) if network in SUPPORTED_LINK_TYPES else None
        capture.records.append(PacketRecord(
            timestamp=(ts_sec, ts_usec), raw=raw, parse=parsed,
            orig_len=None if orig_len == incl_len else orig_len,
        ))
    return capture


def capture_bytes(capture: CaptureSet) -> bytes:
    out = [struct.pack("<IHHiIII", PCAP_MAGIC, 2, 4, 0, 0, capture.snaplen, capture.link_type)]
    for rec in capture.records:
        orig = len(rec.raw) if rec.orig_len is None else rec.orig_len
        out.append(struct.pack("<IIII", rec.timestamp[0], rec.timestamp[1], len(rec.raw), orig))
        out.append(rec.raw)
    return b"".join(out)


def write_capture(capture: CaptureSet, path) -> None:
    Path(path).write_bytes(capture_bytes(capture))
