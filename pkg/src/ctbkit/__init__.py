"""Contextual text block detection toolkit."""
from ._accel import backend, current_backend, numba_enabled, set_backend
from .baselines import BaselineConfig, baseline_predict, mean_shift_group, reading_order_sort
from .dataset import (
    ContextualBlock,
    Dataset,
    DatasetStats,
    ImageAnnotation,
    IntegralUnit,
    PredictionSet,
    compute_stats,
    parse_ground_truth,
    parse_predictions,
    serialize_dataset,
    serialize_predictions,
    validate_dataset,
)
from .embeddings import (
    EmbeddingConfig,
    FeatureMap,
    TensorArchive,
    TokenMatrix,
    build_tokens,
    feature_embedding,
    indexing_embedding,
    load_archive,
    roi_align,
    save_archive,
    spatial_embedding,
    spatial_vector,
)
from .generator import (
    GeneratorWeights,
    attention_forward,
    build_graph,
    build_targets,
    cross_entropy,
    extract_blocks,
    predict_indices,
)
from .geometry import Matching, Polygon, Rect, iou, match_detections, polygon_bounds
from .metrics import PRESETS, IouSchedule, MetricReport, evaluate

__version__ = "0.1.0"

__all__ = [
    "attention_forward",
    "backend",
    "baseline_predict",
    "BaselineConfig",
    "build_graph",
    "build_targets",
    "build_tokens",
    "compute_stats",
    "ContextualBlock",
    "cross_entropy",
    "current_backend",
    "Dataset",
    "DatasetStats",
    "EmbeddingConfig",
    "evaluate",
    "extract_blocks",
    "feature_embedding",
    "FeatureMap",
    "GeneratorWeights",
    "ImageAnnotation",
    "indexing_embedding",
    "IntegralUnit",
    "iou",
    "IouSchedule",
    "load_archive",
    "match_detections",
    "Matching",
    "mean_shift_group",
    "MetricReport",
    "numba_enabled",
    "parse_ground_truth",
    "parse_predictions",
    "Polygon",
    "polygon_bounds",
    "predict_indices",
    "PredictionSet",
    "PRESETS",
    "reading_order_sort",
    "Rect",
    "roi_align",
    "save_archive",
    "serialize_dataset",
    "serialize_predictions",
    "set_backend",
    "spatial_embedding",
    "spatial_vector",
    "TensorArchive",
    "TokenMatrix",
    "validate_dataset",
]
