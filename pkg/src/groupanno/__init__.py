"""Truth inference with annotator group bias."""

from .types import (
    Annotation,
    AnnotationDataset,
    AnnotatorTable,
    ClassifierParams,
    GroupBiasParams,
    Instance,
    PosteriorLabels,
    ValidationError,
    Violation,
    validate_dataset,
)
from .em import EmConfig, EmState, run
from .synth import SynthConfig, generate

__version__ = "0.1.0"

__all__ = [
    "Annotation",
    "AnnotationDataset",
    "AnnotatorTable",
    "ClassifierParams",
    "EmConfig",
    "EmState",
    "GroupBiasParams",
    "Instance",
    "PosteriorLabels",
    "SynthConfig",
    "ValidationError",
    "Violation",
    "generate",
    "run",
    "validate_dataset",
]
