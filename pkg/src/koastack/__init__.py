"""Stacked CNN ensembles for Kellgren-Lawrence grading of knee radiographs."""

from . import dataset, ensemble, imaging, metrics, nn, persist
from .ensemble import GBDTClassifier, KNNClassifier, RandomForestClassifier, StackingClassifier
from .nn import CNNClassifier
from .pipeline import GradingPipeline

__version__ = "0.1.0"

__all__ = [
    "dataset", "ensemble", "imaging", "metrics", "nn", "persist",
    "CNNClassifier", "GBDTClassifier", "KNNClassifier", "RandomForestClassifier",
    "StackingClassifier", "GradingPipeline",
]
