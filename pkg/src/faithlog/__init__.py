"""Faithful log anomaly detection: dual-pathway attention detector plus
root-cause localization and event-perturbation faithfulness evaluation."""

from faithlog.errors import (
    CheckpointError,
    ConfigError,
    DatasetError,
    FaithLogError,
    ShapeError,
    VocabularyError,
)
from faithlog.log_pipeline import (
    DrainParser,
    EventSequence,
    EventTemplate,
    LogRecord,
    WindowConfig,
    load_dataset,
    sessionize,
    write_dataset,
)

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "ConfigError",
    "DatasetError",
    "DrainParser",
    "EventSequence",
    "EventTemplate",
    "FaithLogError",
    "LogRecord",
    "ShapeError",
    "VocabularyError",
    "WindowConfig",
    "load_dataset",
    "sessionize",
    "write_dataset",
]
