"""Naive-Bayes scoring of rule symptoms and threshold alarms."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Optional


class UnknownSymptom(KeyError):
    pass


# Operator-tunable defaults: (P(symptom | attack), P(symptom | benign)).
# They are starting points for tuning, not measured rates.
DEFAULT_LIKELIHOODS: dict[str, tuple[float, float]] = {
    "RESERVED_NONZERO": (0.60, 0.001),
    "ILLEGAL_FLAG_COMBO": (0.30, 0.001),
    "URG_INCONSISTENT": (0.20, 0.002),
    "ISN_LOW24_ZERO": (0.70, 0.0001),
    "DATA_PAST_EOL": (0.50, 0.0005),
    "BAD_TCP_CHECKSUM": (0.10, 0.01),
    "FRAGMENTED_IP": (0.10, 0.01),
    "IPID_CONSTANT": (0.30, 0.02),
    "PAYLOAD_SIGNATURE": (0.40, 0.005),
    "ISN_DISTRIBUTION": (0.80, 0.01),
    "FLAG_DIST": (0.50, 0.05),
    "INVALID_SIGNATURE": (0.20, 0.01),
    "MALFORMED_RECORD": (0.20, 0.01),
    "SUBLIMINAL_NONCES": (0.90, 0.001),
    "NONRANDOM_KEY": (0.90, 0.001),
}


@dataclass(frozen=True)
class BayesModel:
    prior_attack: float = 0.05
    likelihoods: dict = field(default_factory=lambda: dict(DEFAULT_LIKELIHOODS))
    alarm_threshold: float = 0.9

    def __post_init__(self):
        if not 0 <= self.prior_attack <= 1:
            raise ValueError("prior_attack must be in [0, 1]")
        if not 0 < self.alarm_threshold <= 1:
            raise ValueError("alarm_threshold must be in (0, 1]")
        for name, (pa, pb) in self.likelihoods.items():
            if not (0 <= pa <= 1 and 0 <= pb <= 1):
                raise ValueError(f"likelihoods for {name} must be probabilities")


def bayes_posterior(model: BayesModel, symptoms_present: Iterable[str]) -> float:
    """P(attack | symptoms), multiplying likelihoods of the present symptoms only."""
    attack = model.prior_attack
    benign = 1 - model.prior_attack
    for name in sorted(set(symptoms_present)):
        if name not in model.likelihoods:
            raise UnknownSymptom(name)
        pa, pb = model.likelihoods[name]
        attack *= pa
        benign *= pb
    total = attack + benign
    return attack / total if total > 0 else 0.0


@dataclass(frozen=True)
class Alarm:
    posterior: float
    threshold: float
    symptoms: tuple
    flow: Optional[str] = None
    window_index: Optional[int] = None
    packet_index: Optional[int] = None
    timestamp: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "flow": self.flow, "window_index": self.window_index, "packet_index": self.packet_index,
            "posterior": self.posterior, "threshold": self.threshold, "symptoms": list(self.symptoms),
            "ts": self.timestamp,
        }


def evaluate_alarm(model: BayesModel, posterior: float, sink: Optional[list] = None, **context) -> Optional[Alarm]:
    """Raise an alarm when ``posterior`` strictly exceeds the threshold; append it to ``sink``."""
    if not 0 <= posterior <= 1:
        raise ValueError(f"posterior {posterior} outside [0, 1]")
    if posterior <= model.alarm_threshold:
        return None
    alarm = Alarm(posterior=posterior, threshold=model.alarm_threshold,
                  symptoms=tuple(sorted(context.pop("symptoms", ()))), **context)
    if sink is not None:
        sink.append(alarm)
    return alarm
