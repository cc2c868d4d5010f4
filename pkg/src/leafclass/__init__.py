"""Fine-grained retail promotion classification.

Two branches score each promotion crop: a native image classifier (or an
externally produced CNN score file) and a text classifier over an eight-way
OCR extraction ensemble. Branch scores are fused by softmax plus weighted
probability stacking; predictions whose branch argmaxes disagree are routed
to a human review queue served over HTTP.
"""

__version__ = "0.1.0"

from .corpus import (
    CorpusManifest,
    ImageRecord,
    ManifestError,
    ValidationReport,
    load_manifest,
    resize_longest_edge,
    validate_corpus,
    write_manifest,
)
from .extraction import (
    CANONICAL_METHODS,
    ExtractedDocument,
    ExtractionCache,
    ExtractionMethodSpec,
    extract_corpus,
    extract_document,
    join_method_texts,
)
from .fusion import (
    DEFAULT_TEXT_WEIGHT,
    PredictionRecord,
    fuse,
    label_confidence,
    predict_record,
    read_predictions,
    softmax,
    top_k,
    write_predictions,
)
from .text_model import (
    TextModel,
    calibrate_margins,
    fit_vectorizer,
    modified_huber,
    predict_text_scores,
    tokenize,
    train_text_model,
    vectorize,
)
from .image_model import (
    ImageModel,
    image_features,
    load_external_scores,
    predict_image_scores,
    train_image_model,
)
from .evaluation import EvaluationReport, evaluate, oracle_union
from .queue_store import ReviewItem, ReviewQueueStore, queue_low_confidence

__all__ = [
    "__version__",
    "CorpusManifest", "ImageRecord", "ManifestError", "ValidationReport",
    "load_manifest", "resize_longest_edge", "validate_corpus", "write_manifest",
    "CANONICAL_METHODS", "ExtractedDocument", "ExtractionCache",
    "ExtractionMethodSpec", "extract_corpus", "extract_document", "join_method_texts",
    "DEFAULT_TEXT_WEIGHT", "PredictionRecord", "fuse", "label_confidence",
    "predict_record", "read_predictions", "softmax", "top_k", "write_predictions",
    "TextModel", "calibrate_margins", "fit_vectorizer", "modified_huber",
    "predict_text_scores", "tokenize", "train_text_model", "vectorize",
    "ImageModel", "image_features", "load_external_scores", "predict_image_scores",
    "train_image_model",
    "EvaluationReport", "evaluate", "oracle_union",
    "ReviewItem", "ReviewQueueStore", "queue_low_confidence",
]
