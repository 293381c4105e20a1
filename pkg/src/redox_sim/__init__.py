"""File-redirection training-data I/O: protocol engine, simulator and randomness analysis."""

from .engine import Cluster, EpochResult
from .errors import ConfigError, ProtocolViolation, RedoxError, StorageError
from .layout import (EpochTrace, FileMeta, Layout, LayoutConfig, build_layout,
                     generate_epoch_trace, make_trace)
from .metrics import MetricsReport
from .storage import CostModel

__version__ = "0.1.0"

__all__ = [
    "Cluster", "EpochResult", "ConfigError", "ProtocolViolation", "RedoxError", "StorageError",
    "EpochTrace", "FileMeta", "Layout", "LayoutConfig", "build_layout", "generate_epoch_trace",
    "make_trace", "MetricsReport", "CostModel", "__version__",
]
