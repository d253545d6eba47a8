"""annogain: online selective annotation driven by expected label gain.

Feeds every incoming sample through two predictors — the current model and a
weighted vote of its annotated near neighbors — fuses their confidences, and
annotates only where the annotator is still expected to add information. Each
new label immediately re-scores the neighborhood, and the session stops
itself when the best remaining gain is negligible.
"""

from .engine import (AnnotationEvent, EngineConfig, Event, RecheckReport,
                     SampleRecord, SelectionEngine, Status, StopDiagnostics)
from .fusion import (FusionConfig, FusionVariant, GainMode, PredictionState,
                     Source, accuracy_to_confidence, annotation_gain,
                     binary_entropy, fuse_agree, fuse_disagree,
                     fuse_predictions, knn_predict, model_confidence)
from .index import IndexConfig, NeighborHit, VectorIndex
from .model import LinearHead, predict, predict_batch, train

__version__ = "0.1.0"

__all__ = [
    "AnnotationEvent",
    "EngineConfig",
    "Event",
    "FusionConfig",
    "FusionVariant",
    "GainMode",
    "IndexConfig",
    "LinearHead",
    "NeighborHit",
    "PredictionState",
    "RecheckReport",
    "SampleRecord",
    "SelectionEngine",
    "Source",
    "Status",
    "StopDiagnostics",
    "VectorIndex",
    "accuracy_to_confidence",
    "annotation_gain",
    "binary_entropy",
    "fuse_agree",
    "fuse_disagree",
    "fuse_predictions",
    "knn_predict",
    "model_confidence",
    "predict",
    "predict_batch",
    "train",
]
