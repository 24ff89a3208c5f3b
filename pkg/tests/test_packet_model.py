import struct

import dpkt
import pytest
from hypothesis import given, settings, strategies as st

from hybridcc.packet_model import (
    LINKTYPE_ETHERNET, LINKTYPE_RAW, BadMagic, BadOffset, CaptureSet, InvariantViolation, Ipv4Header, NotTcp,
    TcpFlags, TcpHeader, TcpSegment, Truncated, TruncatedRecord, UnsupportedLinkType, capture_bytes,
    check_invariants, compute_tcp_checksum, flags_label, flow_key, format_addr, internet_checksum,
    parse_addr, parse_packet, read_capture, seal_packet, seal_record, seal_segment, serialize_packet,
    write_capture,
)

from conftest import syn_template, word_sum_checksum


def test_all_zero_segment_checksum_is_ffff():
    seg = TcpSegment(Ipv4Header(0, 0, protocol=0), TcpHeader(0, 0, window=0, data_offset=0))
    # pseudo-header length field is nonzero only through payload and offset; all zero here
    assert compute_tcp_checksum(seg) == 0xFFFF


@given(st.binary(max_size=200))
def test_checksum_matches_word_sum_oracle(data):
    assert internet_checksum(data) == word_sum_checksum(data)


def test_addr_roundtrip():
    assert format_addr(parse_addr("192.168.1.254")) == "192.168.1.254"
    with pytest.raises(ValueError):
        parse_addr("1.2.3")


def test_flags_label():
    assert flags_label(TcpFlags.ACK | TcpFlags.PSH) == "ACK|PSH"
    assert flags_label(TcpFlags(0)) == "NONE"


def test_serialize_matches_dpkt():
    seg = syn_template()._replace(payload=b"hello")
    seg = seal_segment(seg._replace(tcp=seg.tcp._replace(flags=TcpFlags.PSH | TcpFlags.ACK, ack_number=7)))
    raw = serialize_packet(seg)
    ip = dpkt.ip.IP(raw)
    assert ip.src == bytes([10, 0, 0, 1]) and ip.dst == bytes([10, 1, 0, 1])
    assert ip.len == len(raw) and ip.id == 100 and ip.p == 6
    tcp = ip.data
    assert (tcp.sport, tcp.dport, tcp.seq, tcp.ack) == (40000, 80, 0x3A7F19C2, 7)
    assert tcp.flags == int(TcpFlags.PSH | TcpFlags.ACK) and tcp.data == b"hello"
    # dpkt recomputes both checksums when they are zeroed
    ip.sum = 0
    tcp.sum = 0
    assert bytes(ip) == raw


def test_parse_reports_checksum_validity():
    raw = bytearray(serialize_packet(syn_template()))
    seg = parse_packet(bytes(raw))
    assert seg.ip_checksum_ok and seg.tcp_checksum_ok
    raw[36] ^= 0xFF  # corrupt the TCP checksum
    seg = parse_packet(bytes(raw))
    assert seg.tcp_checksum_ok is False


def test_parse_errors():
    raw = serialize_packet(syn_template())
    with pytest.raises(Truncated):
        parse_packet(raw[:30])
    udp = bytearray(raw)
    udp[9] = 17
    with pytest.raises(NotTcp):
        parse_packet(bytes(udp))
    bad = bytearray(raw)
    bad[32] = 0x30  # data offset 3
    with pytest.raises(BadOffset):
        parse_packet(bytes(bad))
    with pytest.raises(UnsupportedLinkType):
        parse_packet(raw, link_type=228)


def test_ethernet_framing():
    seg = syn_template()
    rec = seal_record(seg, (1, 2), LINKTYPE_ETHERNET)
    assert len(rec.raw) == 14 + 40
    assert parse_packet(rec.raw, LINKTYPE_ETHERNET).tcp == rec.parse.tcp


def test_invariant_violation():
    seg = syn_template()
    with pytest.raises(InvariantViolation):
        check_invariants(seg._replace(tcp=seg.tcp._replace(options=b"\x01\x01\x01")))


def test_seal_packet_matches_byte_route():
    seg = syn_template()._replace(payload=b"xyz" * 5)
    seg = seg._replace(tcp=seg.tcp._replace(options=b"\x01\x01\x00\x02\x48\x69\x00\x00", reserved=5))
    sealed, raw = seal_packet(seg)
    assert raw == serialize_packet(sealed, recompute_checksums=True)
    assert sealed.tcp.checksum == compute_tcp_checksum(sealed)
    assert sealed.tcp.data_offset == 7


segments = st.builds(
    lambda src, dst, ident, sport, dport, seq, ack, flags, reserved, ns, window, urg, opt_words, payload: seal_segment(
        TcpSegment(Ipv4Header(src, dst, ident),
                   TcpHeader(sport, dport, seq, ack, TcpFlags(flags), window, reserved=reserved,
                             urgent_pointer=urg, options=b"\x01" * (4 * opt_words), ns=ns),
                   payload)),
    st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1), st.integers(0, 0xFFFF),
    st.integers(0, 0xFFFF), st.integers(0, 0xFFFF), st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1),
    st.integers(0, 255), st.integers(0, 7), st.booleans(), st.integers(0, 0xFFFF), st.integers(0, 0xFFFF),
    st.integers(0, 10), st.binary(max_size=64),
)


@given(segments)
@settings(max_examples=200)
def test_parse_serialize_roundtrip(seg):
    raw = serialize_packet(seg)
    back = parse_packet(raw)
    assert back.ip_checksum_ok and back.tcp_checksum_ok
    assert back._replace(ip_checksum_ok=None, tcp_checksum_ok=None) == seg._replace(
        ip_checksum_ok=None, tcp_checksum_ok=None)
    assert serialize_packet(back, recompute_checksums=False) == raw
    assert word_sum_checksum(raw[:20]) == 0


def test_capture_roundtrip_and_dpkt_reader(tmp_path):
    recs = [seal_record(syn_template(seq=i * 7919 + 1, ident=i), (10 + i, 500 * i)) for i in range(5)]
    path = tmp_path / "c.pcap"
    write_capture(CaptureSet(LINKTYPE_RAW, recs), path)
    back = read_capture(path)
    assert [r.raw for r in back.records] == [r.raw for r in recs]
    assert [r.timestamp for r in back.records] == [r.timestamp for r in recs]
    assert all(r.parse is not None for r in back.records)
    with open(path, "rb") as fh:
        reader = dpkt.pcap.Reader(fh)
        assert reader.datalink() == LINKTYPE_RAW
        got = [(ts, buf) for ts, buf in reader]
    assert [buf for _, buf in got] == [r.raw for r in recs]
    assert got[1][0] == pytest.approx(11.0005)


def test_capture_big_endian_and_errors(tmp_path):
    rec = seal_record(syn_template(), (3, 4))
    header = struct.pack(">IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, LINKTYPE_RAW)
    body = struct.pack(">IIII", 3, 4, len(rec.raw), len(rec.raw)) + rec.raw
    path = tmp_path / "be.pcap"
    path.write_bytes(header + body)
    back = read_capture(path)
    assert back.records[0].raw == rec.raw and back.records[0].timestamp == (3, 4)

    path.write_bytes(b"\x00" * 24)
    with pytest.raises(BadMagic):
        read_capture(path)
    path.write_bytes(header + body[:-3])
    with pytest.raises(TruncatedRecord):
        read_capture(path)


def test_unparseable_packets_are_kept_unparsed(tmp_path):
    good = seal_record(syn_template(), (0, 1))
    junk = good._replace(raw=b"\x45" + b"\x00" * 10, parse=None)
    data = capture_bytes(CaptureSet(LINKTYPE_RAW, [good, junk]))
    path = tmp_path / "j.pcap"
    path.write_bytes(data)
    back = read_capture(path)
    assert back.records[0].parse is not None and back.records[1].parse is None


def test_flow_key_text():
    assert str(flow_key(syn_template())) == "10.0.0.1:40000>10.1.0.1:80"
