"""Dialogue disentanglement by contrastive utterance representations and clustering."""

from clucdd.corpus import Dialogue, SessionLabeling, Utterance
from clucdd.estimator import CluCDD
from clucdd.exceptions import (
    ConfigError,
    FormatError,
    ParseError,
    TrainingError,
    ValidationError,
)

__all__ = [
    "CluCDD",
    "ConfigError",
    "Dialogue",
    "FormatError",
    "ParseError",
    "SessionLabeling",
    "TrainingError",
    "Utterance",
    "ValidationError",
]

__version__ = "0.1.0"
