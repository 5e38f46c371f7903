"""Desk-scale multi-level knowledge distillation for multilingual encoders.

A frozen teacher encoder transfers token, word, sentence, and structure level
knowledge to a student encoder over parallel corpora through four jointly
trained objectives.
"""

from .corpus import BatchPlan, GeneratorConfig, ParallelPair
from .masking import MaskPlan
from .model import Encoder, EncoderConfig, HeadConfig, ModelBundle, ProjectionHead
from .objectives import LossBreakdown, Objective, ObjectiveConfig
from .tokenization import ConcatenatedPair, TokenSequence, Vocabulary, WordAlignment
from .trainer import TrainConfig, TrainingState

__version__ = "0.1.0"

__all__ = [
    "BatchPlan",
    "ConcatenatedPair",
    "Encoder",
    "EncoderConfig",
    "GeneratorConfig",
    "HeadConfig",
    "LossBreakdown",
    "MaskPlan",
    "ModelBundle",
    "Objective",
    "ObjectiveConfig",
    "ParallelPair",
    "ProjectionHead",
    "TokenSequence",
    "TrainConfig",
    "TrainingState",
    "Vocabulary",
    "WordAlignment",
    "__version__",
]
