"""artwalk: crosswalk art injection and pedestrian-detector robustness evaluation."""

__version__ = "0.1.0"

from .attack import (
    AttackConfig,
    AttackTrace,
    Perturbation,
    estimate_gradient,
    objectness_loss,
    optimize_perturbation,
)
from .compose import (
    ForegroundCutout,
    GroundTruthBox,
    LoadedScene,
    SceneManifest,
    apply_perturbation,
    compose_scene,
    inject_art,
)
from .detect import (
    Detection,
    DetectorClient,
    DetectorConfig,
    SyntheticDetector,
    external_detect,
    synthetic_detect,
    tuned_detector_config,
)
from .geometry import (
    Homography,
    Polygon,
    Quad,
    apply_homography,
    convex_hull,
    homography_from_correspondences,
    min_enclosing_quad,
    polygon_to_mask,
    warp_into_region,
)
from .metrics import MetricsReport, ap50, evaluate_dataset, fdr, iou, match, max_f1, pr_curve
from .raster import BinaryMask, Raster, load_image, sample_bilinear, save_image
from .scenegen import SceneGenConfig, generate_dataset, generate_scene, solid_art, stripe_art

__all__ = [
    "AttackConfig",
    "AttackTrace",
    "BinaryMask",
    "Detection",
    "DetectorClient",
    "DetectorConfig",
    "ForegroundCutout",
    "GroundTruthBox",
    "Homography",
    "LoadedScene",
    "MetricsReport",
    "Perturbation",
    "Polygon",
    "Quad",
    "Raster",
    "SceneGenConfig",
    "SceneManifest",
    "SyntheticDetector",
    "apply_homography",
    "apply_perturbation",
    "ap50",
    "compose_scene",
    "convex_hull",
    "estimate_gradient",
    "evaluate_dataset",
    "external_detect",
    "fdr",
    "generate_dataset",
    "generate_scene",
    "homography_from_correspondences",
    "inject_art",
    "iou",
    "load_image",
    "match",
    "max_f1",
    "min_enclosing_quad",
    "objectness_loss",
    "optimize_perturbation",
    "polygon_to_mask",
    "pr_curve",
    "sample_bilinear",
    "save_image",
    "solid_art",
    "stripe_art",
    "synthetic_detect",
    "tuned_detector_config",
    "warp_into_region",
]
