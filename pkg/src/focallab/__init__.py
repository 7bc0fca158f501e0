"""Focal loss versus shortcut learning on a synthetic NLI-like corpus."""

__version__ = "0.1.0"

from .datagen import CorpusBundle, GenSpec, generate_corpus, inject_challenge_samples, label_hardness  # noqa: E402
from .estimator import FeatureViewSelector, FocalMLPClassifier  # noqa: E402
from .losses import LossKind, LossSpec  # noqa: E402
from .optimizer import OptimSpec  # noqa: E402
from .trainer import ModelConfig, TrainSpec, train_run  # noqa: E402

__all__ = [
    "CorpusBundle", "FeatureViewSelector", "FocalMLPClassifier", "GenSpec", "LossKind", "LossSpec",
    "ModelConfig", "OptimSpec", "TrainSpec", "generate_corpus", "inject_challenge_samples",
    "label_hardness", "train_run",
]
