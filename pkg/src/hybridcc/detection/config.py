"""Engine configuration: plain ``key = value`` text files.

Recognized keys::

    alpha                 significance level for statistical and randomness tests (0.01)
    t_prime               learning period length in seconds (3600)
    d_prime               learning period volume in packets (1000)
    baseline_prefix       leading capture records treated as trusted learning traffic (0)
    window_size           packets per flow window (256)
    min_syn               SYNs a window needs before ISN scoring (64)
    min_flag_packets      packets a window needs before flag-distribution scoring (32)
    min_ipid_packets      packets a window needs before the IP-ID constancy check (16)
    ipid_constant_ratio   share of identical IP IDs that flags a window (0.9)
    prior_attack          Bayes prior (0.05)
    alarm_threshold       alarm when the posterior is strictly above this (0.9)
    likelihood.<RULE_ID>  "P(s|attack), P(s|benign)"
    payload_signatures    comma-separated byte patterns, hex with a "hex:" prefix or literal text

Lines starting with ``#`` are comments.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .bayes import DEFAULT_LIKELIHOODS, BayesModel
from .rules import CATALOG


class ConfigError(ValueError):
    pass


DEFAULT_PAYLOAD_SIGNATURES = (b"/bin/sh", b"cmd.exe")


@dataclass(frozen=True)
class EngineConfig:
    alpha: float = 0.01
    t_prime: float = 3600.0
    d_prime: int = 1000
    baseline_prefix: int = 0
    window_size: int = 256
    min_syn: int = 64
    min_flag_packets: int = 32
    min_ipid_packets: int = 16
    ipid_constant_ratio: float = 0.9
    prior_attack: float = 0.05
    alarm_threshold: float = 0.9
    likelihoods: dict = field(default_factory=lambda: dict(DEFAULT_LIKELIHOODS))
    payload_signatures: tuple = DEFAULT_PAYLOAD_SIGNATURES

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must be in (0, 1)")
        if self.t_prime <= 0 or self.d_prime < 1:
            raise ConfigError("t_prime and d_prime must be positive")
        if self.window_size < 1 or self.min_syn < 1 or self.baseline_prefix < 0:
            raise ConfigError("window_size and min_syn must be positive, baseline_prefix non-negative")
        if not 0 < self.ipid_constant_ratio <= 1:
            raise ConfigError("ipid_constant_ratio must be in (0, 1]")
        unknown = set(self.likelihoods) - set(CATALOG)
        if unknown:
            raise ConfigError(f"likelihoods for unknown rules: {sorted(unknown)}")
        try:
            self.bayes_model()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def bayes_model(self) -> BayesModel:
        return BayesModel(self.prior_attack, dict(self.likelihoods), self.alarm_threshold)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["likelihoods"] = {k: list(v) for k, v in sorted(self.likelihoods.items())}
        out["payload_signatures"] = [p.hex() for p in self.payload_signatures]
        return out


_SCALARS = {f.name: f.type for f in fields(EngineConfig) if f.name not in ("likelihoods", "payload_signatures")}


def _parse_pattern(text: str) -> bytes:
    text = text.strip()
    if text.startswith("hex:"):
        return bytes.fromhex(text[4:])
    return text.encode()


def parse_config_text(text: str, source: str = "<config>") -> EngineConfig:
    values = {}
    likelihoods = dict(DEFAULT_LIKELIHOODS)
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        try:
            if key.startswith("likelihood."):
                rule = key[len("likelihood."):]
                pa, pb = (float(v) for v in value.split(","))
                likelihoods[rule] = (pa, pb)
            elif key == "payload_signatures":
                values[key] = tuple(_parse_pattern(p) for p in value.split(",") if p.strip())
            elif key in _SCALARS:
                values[key] = int(value) if _SCALARS[key] == "int" else float(value)
            else:
                raise ConfigError(f"unknown key {key!r}")
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return EngineConfig(likelihoods=likelihoods, **values)


def load_config(path) -> EngineConfig:
    return parse_config_text(Path(path).read_text(), str(path))
