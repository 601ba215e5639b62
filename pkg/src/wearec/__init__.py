"""WEARec: wavelet-enhanced adaptive frequency filtering for sequential
recommendation, with its data pipeline, ranking evaluation, and
frequency-analysis tooling."""

from .config import RunConfig
from .evaluation import MetricReport, evaluate, train_loop
from .model import ModelConfig, WEARec
from .tape import ParamSlot, Tape

__version__ = "0.1.0"

__all__ = [
    "ModelConfig",
    "WEARec",
    "RunConfig",
    "MetricReport",
    "evaluate",
    "train_loop",
    "Tape",
    "ParamSlot",
    "__version__",
]
