"""Statistical protocol-based detection of hybrid covert channels."""

from .audit import audit_signatures
from .baseline import EmptyLearningStream, SessionBaseline, learn_baseline, score_statistical
from .bayes import Alarm, BayesModel, UnknownSymptom, bayes_posterior, evaluate_alarm
from .config import ConfigError, EngineConfig, load_config, parse_config_text
from .rules import CATALOG, DetectionRule, Finding, RuleKind, Severity, analyze_header
from .session import SessionReport, run_session, write_outputs

__all__ = [
    "Alarm", "BayesModel", "CATALOG", "ConfigError", "DetectionRule", "EmptyLearningStream",
    "EngineConfig", "Finding", "RuleKind", "SessionBaseline", "SessionReport", "Severity",
    "UnknownSymptom", "analyze_header", "audit_signatures", "bayes_posterior", "evaluate_alarm",
    "learn_baseline", "load_config", "parse_config_text", "run_session", "score_statistical",
    "write_outputs",
]
