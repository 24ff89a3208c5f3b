import random

import pytest

from hybridcc.packet_model import Ipv4Header, TcpFlags, TcpHeader, TcpSegment, parse_addr
from hybridcc.subliminal_dsa import generate_params, keygen


def word_sum_checksum(data: bytes) -> int:
    """Reference one's-complement checksum: 16-bit words with end-around carry."""
    if len(data) % 2:
        data += b"\x00"
    total = 0
    for i in range(0, len(data), 2):
        total += (data[i] << 8) | data[i + 1]
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def syn_template(seq=0x3A7F19C2, ident=100, sport=40000, dport=80):
    ip = Ipv4Header(parse_addr("10.0.0.1"), parse_addr("10.1.0.1"), ident)
    tcp = TcpHeader(sport, dport, seq, 0, TcpFlags.SYN)
    return TcpSegment(ip, tcp)


@pytest.fixture(scope="session")
def std_params():
    return generate_params((1024, 160), random.Random(2024))


@pytest.fixture(scope="session")
def std_key(std_params):
    return keygen(std_params, random.Random(99))


ACCEPTANCE_LINES = []


def report_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
