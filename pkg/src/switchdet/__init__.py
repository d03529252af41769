"""Part-based object detection with per-node detectability switches.

Given per-node hypothesis lists (scored candidate boxes for a holistic
object and its body parts), this package learns and applies a fully
connected graphical model that adaptively switches nodes off, producing
detections with part-level descriptions.
"""

from ._version import __version__
from .geometry import Box, iou, union_box
from .model import (
    Configuration,
    GraphSpec,
    Hypothesis,
    HypothesisStore,
    ModelParams,
    feature_vector,
    normalize_unary,
    pairwise_features,
    pattern_bits,
    pattern_index,
    scale_features,
    score_configuration,
    spatial_features,
    validate_configuration,
)
from .inference import (
    DetectConfig,
    PruneConfig,
    ScoredConfiguration,
    detect,
    prune_hypotheses,
)
from .learning import (
    LabeledExample,
    TrainConfig,
    TrainResult,
    assign_switch_labels,
    calibrate_prune_thresholds,
    mine_hard_negatives,
    solve_max_margin,
    svm_objective,
    train,
)
from .postprocess import (
    BoxRegressor,
    Detection,
    fit_box_regressors,
    generate_box,
    part_corner_vector,
    part_nms,
)
from .metrics import (
    EvalConfig,
    PartMetrics,
    average_precision,
    holistic_only_rate_by_size,
    pcp_pop,
    precision_recall,
    size_classes,
)
from .synthetic import (
    SynthConfig,
    SyntheticDataset,
    brute_force_best,
    canonical_part_layout,
    default_planted_params,
    default_spec,
    generate_dataset,
)
from .dataio import (
    DataFormatError,
    ImageSample,
    ModelBundle,
    ObjectAnnotation,
    load_model,
    save_model,
)

__all__ = [
    "__version__",
    "Box",
    "iou",
    "union_box",
    "Configuration",
    "GraphSpec",
    "Hypothesis",
    "HypothesisStore",
    "ModelParams",
    "feature_vector",
    "normalize_unary",
    "pairwise_features",
    "pattern_bits",
    "pattern_index",
    "scale_features",
    "score_configuration",
    "spatial_features",
    "validate_configuration",
    "DetectConfig",
    "PruneConfig",
    "ScoredConfiguration",
    "detect",
    "prune_hypotheses",
    "LabeledExample",
    "TrainConfig",
    "TrainResult",
    "assign_switch_labels",
    "calibrate_prune_thresholds",
    "mine_hard_negatives",
    "solve_max_margin",
    "svm_objective",
    "train",
    "BoxRegressor",
    "Detection",
    "fit_box_regressors",
    "generate_box",
    "part_corner_vector",
    "part_nms",
    "EvalConfig",
    "PartMetrics",
    "average_precision",
    "holistic_only_rate_by_size",
    "pcp_pop",
    "precision_recall",
    "size_classes",
    "SynthConfig",
    "SyntheticDataset",
    "brute_force_best",
    "canonical_part_layout",
    "default_planted_params",
    "default_spec",
    "generate_dataset",
    "DataFormatError",
    "ImageSample",
    "ModelBundle",
    "ObjectAnnotation",
    "load_model",
    "save_model",
]
