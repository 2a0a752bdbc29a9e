"""Impact-based manuscript assessment: bibliometric scoring, an
attention-fusion classifier over title/abstract/metadata, classical
baselines, and the pipeline CLI."""

from .bibliometrics import (
    AifParams,
    CitationWindow,
    ImpactLabel,
    compute_aif,
    compute_jif,
    label_article,
    label_journal,
)
from .corpus import ArticleRecord, SplitSpec, ingest, split
from .errors import (
    DomainError,
    ImacError,
    TrainingDivergedError,
    ValidationError,
)
from .fusion import ForwardTrace, ImacModel, ModelConfig
from .losses import LossConfig, cross_entropy, supcon, total_loss
from .training import EvalReport, TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "AifParams",
    "ArticleRecord",
    "CitationWindow",
    "DomainError",
    "EvalReport",
    "ForwardTrace",
    "ImacError",
    "ImacModel",
    "ImpactLabel",
    "LossConfig",
    "ModelConfig",
    "SplitSpec",
    "TrainConfig",
    "TrainingDivergedError",
    "ValidationError",
    "compute_aif",
    "compute_jif",
    "cross_entropy",
    "evaluate",
    "ingest",
    "label_article",
    "label_journal",
    "split",
    "supcon",
    "total_loss",
    "train",
]
