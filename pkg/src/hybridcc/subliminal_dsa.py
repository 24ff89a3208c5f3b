"""DSA with a broadband subliminal channel in the per-signature nonce.

Two trapdoors are supported: the signer picks ``k`` from covert data, or
the signer's key pair is replaced by one derived from covert bytes. A
receiver (or an escrowed warden) holding ``x`` recovers ``k`` from any
signature as ``k = s^-1 (h + x r) mod q``.

Signatures travel in TCP payloads inside a small record framing::

    "SSLR" | 0x01 | q_len (u16 BE) | h | r | s      (each q_len bytes BE)
"""

from __future__ import annotations

import enum
import hashlib
import random
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

RECORD_MAGIC = b"SSLR"
RECORD_VERSION = 1
RECORD_HEADER_LEN = 7
STANDARD_SIZES = ((1024, 160), (2048, 224), (2048, 256))
REFRAME_BYTE = 0x01


class DsaError(Exception):
    pass


class PrimeSearchFailed(DsaError):
    pass


class KeyOutOfRange(DsaError):
    pass


class DegenerateK(DsaError):
    pass


class ChunkTooLarge(DsaError):
    pass


class ChunkZero(DsaError):
    pass


class NotInvertible(DsaError):
    pass


class RecordError(DsaError):
    pass


class BadMagic(RecordError):
    pass


class TruncatedRecord(RecordError):
    pass


class BadVersion(RecordError):
    pass


class KeyProvenance(enum.Enum):
    SYSTEM_GENERATED = "SYSTEM_GENERATED"
    COVERT_REPLACED = "COVERT_REPLACED"


@dataclass(frozen=True)
class DsaDomainParams:
    p: int
    q: int
    g: int

    @property
    def q_len(self) -> int:
        return (self.q.bit_length() + 7) // 8

    def check(self) -> None:
        if (self.p - 1) % self.q:
            raise DsaError("q does not divide p-1")
        if self.g <= 1 or pow(self.g, self.q, self.p) != 1:
            raise DsaError("g does not generate the order-q subgroup")


TOY_PARAMS = DsaDomainParams(p=23, q=11, g=4)


@dataclass(frozen=True)
class DsaKeyPair:
    params: DsaDomainParams
    x: int
    y: int
    provenance: KeyProvenance = KeyProvenance.SYSTEM_GENERATED


@dataclass(frozen=True)
class DsaSignature:
    r: int
    s: int


# --- number theory --------------------------------------------------------

_SMALL_PRIMES = [p for p in range(3, 2000) if all(p % d for d in range(2, int(p ** 0.5) + 1))]


def is_probable_prime(n: int, rng: random.Random, rounds: int = 40) -> bool:
    """Miller-Rabin with ``rounds`` random bases after trial division."""
    if n < 2:
        return False
    if n in (2, 3):
        return True
    if n % 2 == 0:
        return False
    for sp in _SMALL_PRIMES:
        if n == sp:
            return True
        if n % sp == 0:
            return False
    d, r = n - 1, 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for _ in range(rounds):
        a = rng.randrange(2, n - 1)
        v = pow(a, d, n)
        if v in (1, n - 1):
            continue
        for _ in range(r - 1):
            v = v * v % n
            if v == n - 1:
                break
        else:
            return False
    return True


def _random_prime(bits: int, rng: random.Random, attempts: int) -> int:
    for _ in range(attempts):
        candidate = rng.getrandbits(bits) | (1 << (bits - 1)) | 1
        if is_probable_prime(candidate, rng):
            return candidate
    raise PrimeSearchFailed(f"no {bits}-bit prime in {attempts} attempts")


def generate_params(size="toy", rng: Optional[random.Random] = None, max_q_attempts: int = 50) -> DsaDomainParams:
    """Domain parameters: ``"toy"`` gives (23, 11, 4); otherwise ``(L, N)``.

    Follows the FIPS 186 search shape: prime q of N bits, then up to 4L
    candidates p = X - (X mod 2q) + 1 of exactly L bits per q.
    """
    if size == "toy":
        return TOY_PARAMS
    L, N = size
    if (L, N) not in STANDARD_SIZES:
        raise ValueError(f"unsupported (L, N) = {(L, N)}")
    rng = rng or random.Random(0)
    for _ in range(max_q_attempts):
        q = _random_prime(N, rng, attempts=100 * N)
        for _ in range(4 * L):
            X = rng.getrandbits(L) | (1 << (L - 1))
            p = X - (X % (2 * q)) + 1
            if p.bit_length() == L and is_probable_prime(p, rng):
                e = (p - 1) // q
                h = 2
                while True:
                    g = pow(h, e, p)
                    if g > 1:
                        return DsaDomainParams(p, q, g)
                    h += 1
    raise PrimeSearchFailed(f"no ({L}, {N}) parameters after {max_q_attempts} q candidates")


def keygen(params: DsaDomainParams, rng: Optional[random.Random] = None,
           covert_key: Optional[int] = None) -> DsaKeyPair:
    if covert_key is not None:
        if not 1 <= covert_key <= params.q - 1:
            raise KeyOutOfRange(f"x={covert_key} outside [1, {params.q - 1}]")
        return DsaKeyPair(params, covert_key, pow(params.g, covert_key, params.p), KeyProvenance.COVERT_REPLACED)
    rng = rng or random.Random()
    x = rng.randrange(1, params.q)
    return DsaKeyPair(params, x, pow(params.g, x, params.p), KeyProvenance.SYSTEM_GENERATED)


def covert_key_from_bytes(data: bytes, params: DsaDomainParams) -> int:
    """Private key chosen by the covert party: big-endian ``data`` reduced mod q."""
    x = int.from_bytes(data, "big") % params.q
    if x == 0:
        raise KeyOutOfRange("covert key bytes reduce to 0 mod q")
    return x


def hash_message(message: bytes, params: DsaDomainParams) -> int:
    """SHA-256, leftmost N bits, reduced mod q."""
    digest = int.from_bytes(hashlib.sha256(message).digest(), "big")
    n = params.q.bit_length()
    if n < 256:
        digest >>= 256 - n
    return digest % params.q


# --- sign / verify --------------------------------------------------------

def sign(h: int, key: DsaKeyPair, k: int, g_pow: Optional["FixedBasePow"] = None) -> DsaSignature:
    p, q, g = key.params.p, key.params.q, key.params.g
    if not 1 <= k <= q - 1:
        raise ValueError(f"nonce k={k} outside [1, {q - 1}]")
    r = (g_pow(k) if g_pow is not None else pow(g, k, p)) % q
    s = pow(k, -1, q) * (h + key.x * r) % q
    if r == 0 or s == 0:
        raise DegenerateK(f"k={k} gives r={r}, s={s}")
    return DsaSignature(r, s)


def verify(h: int, sig: DsaSignature, y: int, params: DsaDomainParams) -> bool:
    p, q, g = params.p, params.q, params.g
    if not (1 <= sig.r <= q - 1 and 1 <= sig.s <= q - 1):
        return False
    w = pow(sig.s, -1, q)
    u1 = h * w % q
    u2 = sig.r * w % q
    return pow(g, u1, p) * pow(y, u2, p) % p % q == sig.r


class FixedBasePow:
    """``base ** e mod modulus`` for a fixed base, from precomputed windowed tables.

    Exponents wider than ``max_bits`` fall back to the builtin ``pow``.
    """

    def __init__(self, base: int, modulus: int, max_bits: int, window: int = 8):
        self.base, self.modulus, self.max_bits, self.window = base, modulus, max_bits, window
        self.mask = (1 << window) - 1
        self.tables = []
        b = base % modulus
        for _ in range(-(-max_bits // window)):
            row = [1] * (1 << window)
            for d in range(1, 1 << window):
                row[d] = row[d - 1] * b % modulus
            self.tables.append(row)
            b = row[-1] * b % modulus  # b ** (2 ** window)

    def __call__(self, e: int) -> int:
        if e < 0 or e.bit_length() > self.max_bits:
            return pow(self.base, e, self.modulus)
        m, mask, w = self.modulus, self.mask, self.window
        result = 1
        for row in self.tables:
            if not e:
                break
            d = e & mask
            if d:
                result = result * row[d] % m
            e >>= w
        return result % m


class Verifier:
    """Signature verification for one public key, with fixed-base tables for g and y."""

    def __init__(self, y: int, params: DsaDomainParams):
        self.y, self.params = y, params
        bits = params.q.bit_length()
        self.g_pow = FixedBasePow(params.g, params.p, bits)
        self.y_pow = FixedBasePow(y, params.p, bits)

    def __call__(self, h: int, sig: DsaSignature) -> bool:
        p, q = self.params.p, self.params.q
        if not (1 <= sig.r <= q - 1 and 1 <= sig.s <= q - 1):
            return False
        w = pow(sig.s, -1, q)
        return self.g_pow(h * w % q) * self.y_pow(sig.r * w % q) % p % q == sig.r


def embed_subliminal(chunk: bytes, params: DsaDomainParams) -> int:
    k = int.from_bytes(chunk, "big")
    if k == 0:
        raise ChunkZero("chunk encodes 0")
    if k >= params.q:
        raise ChunkTooLarge(f"chunk value {k} >= q")
    return k


def extract_subliminal(sig: DsaSignature, h: int, x: int, params: DsaDomainParams) -> int:
    q = params.q
    try:
        s_inv = pow(sig.s, -1, q)
    except ValueError as exc:
        raise NotInvertible(f"s={sig.s} has no inverse mod q") from exc
    return s_inv * (h + x * sig.r) % q


# --- covert message framing over nonces -----------------------------------

def chunk_len(params: DsaDomainParams) -> int:
    # one byte short of q so every chunk value is below q
    return params.q_len - 1


def message_nonces(msg: bytes, params: DsaDomainParams) -> list[bytes]:
    """Split a length-prefixed message into nonce chunks of ``q_len - 1`` bytes."""
    width = chunk_len(params)
    if width < 1:
        raise ValueError("q too small to carry subliminal chunks")
    stream = struct.pack("!H", len(msg)) + msg
    stream += b"\x00" * (-len(stream) % width)
    return [stream[i:i + width] for i in range(0, len(stream), width)]


def sign_chunk(chunk: bytes, h: int, key: DsaKeyPair, g_pow: Optional["FixedBasePow"] = None) -> DsaSignature:
    """Sign ``h`` with the chunk as nonce; a zero or degenerate chunk is re-framed behind 0x01."""
    try:
        return sign(h, key, embed_subliminal(chunk, key.params), g_pow)
    except (ChunkZero, DegenerateK):
        return sign(h, key, embed_subliminal(bytes([REFRAME_BYTE]) + chunk, key.params), g_pow)


def nonce_to_chunk(k: int, params: DsaDomainParams) -> bytes:
    raw = k.to_bytes(params.q_len, "big")
    return raw[1:]


def recover_message(nonces: list[int], params: DsaDomainParams) -> bytes:
    stream = b"".join(nonce_to_chunk(k, params) for k in nonces)
    if len(stream) < 2:
        raise TruncatedRecord("fewer than two bytes recovered")
    (length,) = struct.unpack("!H", stream[:2])
    if len(stream) - 2 < length:
        raise TruncatedRecord(f"declared {length} bytes, {len(stream) - 2} recovered")
    return stream[2:2 + length]


# --- payload records ------------------------------------------------------

def encode_record(h: int, sig: DsaSignature, params: DsaDomainParams, q_len: Optional[int] = None) -> bytes:
    width = q_len or params.q_len
    return (RECORD_MAGIC + bytes([RECORD_VERSION]) + struct.pack("!H", width)
            + h.to_bytes(width, "big") + sig.r.to_bytes(width, "big") + sig.s.to_bytes(width, "big"))


def decode_record(data: bytes, offset: int = 0) -> tuple[int, DsaSignature, int]:
    """Decode the record at ``offset``; returns ``(h, sig, end_offset)``."""
    if data[offset:offset + 4] != RECORD_MAGIC:
        raise BadMagic(f"no record magic at offset {offset}")
    if len(data) - offset < RECORD_HEADER_LEN:
        raise TruncatedRecord(f"record header cut at offset {offset}")
    if data[offset + 4] != RECORD_VERSION:
        raise BadVersion(f"record version {data[offset + 4]}")
    (width,) = struct.unpack_from("!H", data, offset + 5)
    end = offset + RECORD_HEADER_LEN + 3 * width
    if width == 0 or end > len(data):
        raise TruncatedRecord(f"record at {offset} needs {3 * width} body bytes")
    body = offset + RECORD_HEADER_LEN
    h = int.from_bytes(data[body:body + width], "big")
    r = int.from_bytes(data[body + width:body + 2 * width], "big")
    s = int.from_bytes(data[body + 2 * width:end], "big")
    return h, DsaSignature(r, s), end


def scan_records(payload: bytes) -> tuple[list[tuple[int, DsaSignature]], list[RecordError]]:
    """All records found in ``payload`` in order, plus decode errors for broken ones."""
    records, errors = [], []
    pos = payload.find(RECORD_MAGIC)
    while pos != -1:
        try:
            h, sig, end = decode_record(payload, pos)
        except RecordError as exc:
            errors.append(exc)
            pos = payload.find(RECORD_MAGIC, pos + 1)
            continue
        records.append((h, sig))
        pos = payload.find(RECORD_MAGIC, end)
    return records, errors


# --- warden key file ------------------------------------------------------

@dataclass(frozen=True)
class WardenKey:
    """Key material handed to the detector: public key always, private key when escrowed."""

    params: DsaDomainParams
    y: int
    x: Optional[int] = None
    provenance: Optional[KeyProvenance] = None


def write_key_file(key: WardenKey, path) -> None:
    lines = [f"p={key.params.p}", f"q={key.params.q}", f"g={key.params.g}"]
    if key.x is not None:
        lines.append(f"x={key.x}")
    lines.append(f"y={key.y}")
    if key.provenance is not None:
        lines.append(f"provenance={key.provenance.value}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_key_file(path) -> WardenKey:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        name, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected name=value")
        values[name.strip()] = value.strip()
    missing = {"p", "q", "g", "y"} - values.keys()
    if missing:
        raise ValueError(f"{path}: missing {', '.join(sorted(missing))}")
    params = DsaDomainParams(int(values["p"]), int(values["q"]), int(values["g"]))
    x = int(values["x"]) if "x" in values else None
    y = int(values["y"])
    if x is not None and pow(params.g, x, params.p) != y:
        raise ValueError(f"{path}: y != g^x mod p")
    provenance = KeyProvenance(values["provenance"]) if "provenance" in values else None
    return WardenKey(params, y, x, provenance)


def warden_key_for(key: DsaKeyPair, escrow: bool = True) -> WardenKey:
    return WardenKey(key.params, key.y, key.x if escrow else None, key.provenance)
