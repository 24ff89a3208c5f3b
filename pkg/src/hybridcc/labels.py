"""Ground-truth labels shared by the traffic simulator and the engine's metrics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

BENIGN = "BENIGN"
COVERT = "COVERT"


@dataclass(frozen=True)
class FlowLabel:
    flow_id: int
    label: str  # BENIGN or COVERT
    kind: Optional[str] = None  # covert kind for COVERT flows
    keys: tuple = ()  # directed flow keys as text, e.g. "10.0.0.1:40000>10.1.0.1:443"
    learning: bool = False

    @property
    def is_covert(self) -> bool:
        return self.label == COVERT


@dataclass
class GroundTruthLabels:
    flows: list = field(default_factory=list)
    carriers: list = field(default_factory=list)  # sorted packet indices that carry covert data
    silent_carriers: list = field(default_factory=list)  # carried bits identical to benign header values
    learning_packets: int = 0
    seed: Optional[int] = None

    def flow_for_key(self) -> dict:
        return {key: fl for fl in self.flows for key in fl.keys}

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "learning_packets": self.learning_packets,
            "flows": [dict(asdict(fl), keys=list(fl.keys)) for fl in self.flows],
            "carriers": list(self.carriers),
            "silent_carriers": list(self.silent_carriers),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GroundTruthLabels":
        flows = [FlowLabel(f["flow_id"], f["label"], f.get("kind"), tuple(f.get("keys", ())), f.get("learning", False))
                 for f in data.get("flows", [])]
        return cls(flows=flows, carriers=list(data.get("carriers", [])),
                   silent_carriers=list(data.get("silent_carriers", [])),
                   learning_packets=data.get("learning_packets", 0), seed=data.get("seed"))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def write_labels(labels: GroundTruthLabels, path) -> None:
    Path(path).write_text(labels.dumps())


def read_labels(path) -> GroundTruthLabels:
    return GroundTruthLabels.from_dict(json.loads(Path(path).read_text()))
