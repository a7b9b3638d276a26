"""Interpretable attention-based next-activity prediction for event logs."""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, NumericError, ProcAttnError  # noqa: E402
from .eventlog import (  # noqa: E402
    Event,
    LogProfile,
    PrefixTrace,
    Trace,
    build_traces,
    generate_prefixes,
    parse_log,
    parse_xes,
)
from .encode import PrefixEncoder, Vocabulary, encode_dataset, fit_vocabularies  # noqa: E402
from .estimators import SharedAttentionClassifier, SpecialisedAttentionClassifier  # noqa: E402
from .models import ModelArtifact, TrainConfig, load_artifact, predict, save_artifact, train  # noqa: E402

__all__ = [
    "ConfigError", "DataError", "NumericError", "ProcAttnError",
    "Event", "LogProfile", "PrefixTrace", "Trace",
    "build_traces", "generate_prefixes", "parse_log", "parse_xes",
    "PrefixEncoder", "Vocabulary", "encode_dataset", "fit_vocabularies",
    "SharedAttentionClassifier", "SpecialisedAttentionClassifier",
    "ModelArtifact", "TrainConfig", "load_artifact", "predict", "save_artifact", "train",
]
