import math
import random
from collections import Counter

import pytest
from hypothesis import given, strategies as st
from scipy import special, stats

from hybridcc.rng_tests import (
    BitStream, Overall, SourceTag, Verdict, chi_square_bytes, chi_square_sf, igamc, monobit_test, run_suite,
    runs_test, serial_two_bit_test,
)


def test_bitstream_conversions():
    bs = BitStream.from_bytes(b"\xa5\x01")
    assert bs.bits == bytes([1, 0, 1, 0, 0, 1, 0, 1, 0, 0, 0, 0, 0, 0, 0, 1])
    assert bs.to_bytes() == b"\xa5\x01"
    ints = BitStream.from_integers([0x0102, 0x0304], 2, SourceTag.RECOVERED_NONCES)
    assert ints.to_bytes() == b"\x01\x02\x03\x04" and ints.source_tag is SourceTag.RECOVERED_NONCES
    with pytest.raises(ValueError):
        BitStream.from_bits([0, 2])


def test_monobit_reference_vector():
    bs = BitStream.from_bits([1, 0, 1, 1, 0, 1, 0, 1, 0, 1])
    r = monobit_test(bs, min_bits=10)
    assert r.p_value == pytest.approx(special.erfc(2 / math.sqrt(10) / math.sqrt(2)), abs=1e-12)
    assert abs(r.p_value - 0.527089) <= 1e-3 and r.verdict is Verdict.PASS


def test_runs_reference_vector():
    bs = BitStream.from_bits([1, 0, 0, 1, 1, 0, 1, 0, 1, 1])
    r = runs_test(bs, min_bits=10)
    assert r.statistic == 7
    assert r.p_value == pytest.approx(0.147232, abs=1e-6)


def test_runs_prerequisite():
    r = runs_test(BitStream.from_bits([1] * 90 + [0] * 10))
    assert r.verdict is Verdict.INSUFFICIENT_DATA and r.p_value is None


def test_chi_square_all_same_byte():
    r = chi_square_bytes(BitStream.from_bytes(b"\x41" * 1280))
    assert r.statistic == 326400.0
    assert r.verdict is Verdict.FAIL


def test_chi_square_matches_scipy():
    data = random.Random(3).randbytes(4000)
    r = chi_square_bytes(BitStream.from_bytes(data))
    counts = [data.count(bytes([b])) for b in range(256)]
    ref = stats.chisquare(counts)
    assert r.statistic == pytest.approx(ref.statistic, rel=1e-12)
    assert r.p_value == pytest.approx(ref.pvalue, rel=1e-9)


def test_serial_against_formula():
    bits = [random.Random(9).getrandbits(1) for _ in range(500)]
    r = serial_two_bit_test(BitStream.from_bits(bits))
    n = len(bits)
    singles = Counter(bits)
    pairs = Counter(zip(bits, bits[1:]))
    x2 = 4 / (n - 1) * sum(v * v for v in pairs.values()) - 2 / n * sum(v * v for v in singles.values()) + 1
    assert r.statistic == pytest.approx(x2, rel=1e-12)
    assert r.p_value == pytest.approx(stats.chi2.sf(x2, 2), rel=1e-9)


def test_serial_alternating_fails():
    r = serial_two_bit_test(BitStream.from_bits([0, 1] * 50))
    assert r.statistic == pytest.approx(99.02, abs=0.01) and r.verdict is Verdict.FAIL


@pytest.mark.parametrize("a", [0.5, 1.0, 2.5, 10.0, 127.5, 500.0])
@pytest.mark.parametrize("x", [0.01, 0.5, 1.0, 3.0, 20.0, 130.0, 600.0])
def test_igamc_matches_scipy(a, x):
    assert igamc(a, x) == pytest.approx(special.gammaincc(a, x), rel=1e-9, abs=1e-300)


@given(st.floats(0, 2000), st.integers(1, 300))
def test_chi_square_sf_range(stat, df):
    p = chi_square_sf(stat, df)
    assert 0.0 <= p <= 1.0


def test_insufficient_everything():
    rep = run_suite(BitStream.from_bits([1, 0] * 10))
    assert rep.overall is Overall.INSUFFICIENT_DATA
    assert all(r.p_value is None for r in rep.results)


def test_suite_verdicts():
    assert run_suite(BitStream.from_bytes(random.Random(1).randbytes(1250))).overall is Overall.RANDOM
    text = b"The quick brown fox jumps over the lazy dog. " * 40
    assert run_suite(BitStream.from_bytes(text)).overall is Overall.NON_RANDOM
