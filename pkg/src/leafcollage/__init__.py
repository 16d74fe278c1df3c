"""Collage-based synthetic dataset generation for leaf instance
segmentation, with the matching evaluation metrics.

The pipeline: ingest annotated plant images into a leaf bank
(``leafbank``), composite bank leaves onto backgrounds with either the
structured or the random generator (``synth`` on top of ``raster``),
persist scenes and reports (``dataset_io``), and score predictions
(``metrics``). ``cli`` binds it all to the ``leafcollage`` command.
"""

from .errors import (
    ConfigurationError,
    DegenerateMaskError,
    DegenerateScaleError,
    EmptyExtractionError,
    EvaluationError,
    IngestionError,
    InvalidInputError,
    InvalidPlacementError,
    LeafCollageError,
    PreparationError,
)
from .leafbank import (
    AnnotatedImage,
    FilterReport,
    FilterThresholds,
    LeafBank,
    LeafCutout,
    align_canonical,
    build_bank,
    extract_leaves,
    filter_leaves,
    prescale_cutout,
    principal_axis,
)
from .metrics import (
    ImageMetrics,
    MetricsReport,
    best_dice,
    count_diffs,
    dice,
    evaluate_dataset,
    fgbg_dice,
    iou_detection_eval,
    score_pair,
)
from .raster import (
    Placement,
    Scene,
    composite_leaf,
    connected_components,
    farthest_point,
    rotate,
    scale,
)
from .synth import (
    NaiveParams,
    PRESETS,
    SceneManifest,
    SubsetParams,
    angle_schedule,
    generate_batch,
    generate_naive,
    generate_structured,
    pick_plant_center,
    replay_manifest,
)

__version__ = "0.1.0"

__all__ = [
    "AnnotatedImage",
    "ConfigurationError",
    "DegenerateMaskError",
    "DegenerateScaleError",
    "EmptyExtractionError",
    "EvaluationError",
    "FilterReport",
    "FilterThresholds",
    "ImageMetrics",
    "IngestionError",
    "InvalidInputError",
    "InvalidPlacementError",
    "LeafBank",
    "LeafCollageError",
    "LeafCutout",
    "MetricsReport",
    "NaiveParams",
    "PRESETS",
    "Placement",
    "PreparationError",
    "Scene",
    "SceneManifest",
    "SubsetParams",
    "align_canonical",
    "angle_schedule",
    "best_dice",
    "build_bank",
    "composite_leaf",
    "connected_components",
    "count_diffs",
    "dice",
    "evaluate_dataset",
    "extract_leaves",
    "farthest_point",
    "fgbg_dice",
    "filter_leaves",
    "generate_batch",
    "generate_naive",
    "generate_structured",
    "iou_detection_eval",
    "pick_plant_center",
    "prescale_cutout",
    "principal_axis",
    "replay_manifest",
    "rotate",
    "scale",
    "score_pair",
]
