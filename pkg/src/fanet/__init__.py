"""FANet building extraction on a small numpy reverse-mode autodiff core."""
from .errors import (ConfigError, FanetError, FanetIOError, NumericalError, ShapeError,
                     UsageError, ValidationError)
from .kernels import BACKEND
from .metrics import ConfusionCounts, MetricsReport, report
from .model import ABLATIONS, FANet, ModelConfig

__version__ = "0.1.0"

__all__ = [
    "ABLATIONS", "BACKEND", "ConfigError", "ConfusionCounts", "FANet", "FanetError",
    "FanetIOError", "MetricsReport", "ModelConfig", "NumericalError", "ShapeError",
    "UsageError", "ValidationError", "report",
]
