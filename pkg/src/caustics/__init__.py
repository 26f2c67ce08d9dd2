"""Pixelwise removal of rippling-caustics artifacts from shallow-water imagery.

The package covers the full correction chain: caustics segmentation,
color-statistics transfer between overlapping views, mask-gated feature
matching with robust epipolar geometry, uncalibrated rectification, dense
semi-global disparity, geometric pixel replacement, and back-projection,
plus the ground-truth tooling for fixed-pose image stacks.
"""

from .colortransfer import ChannelStats, channel_stats, transfer_color
from .correction import (
    CorrectionReport,
    CorrectPairResult,
    RectifiedBundle,
    back_project,
    correct_pair,
    replace_pixels,
)
from .dataset import (
    DifferenceImage,
    ImageStack,
    difference_image,
    generate_ground_truth,
    reference_min_luminosity,
)
from .epipolar import (
    FundamentalMatrix,
    Keypoints,
    MatchSet,
    RectifyingPair,
    detect_masked_features,
    match_descriptors,
    ransac_fundamental,
    rectify_pair,
    warp_image,
    warp_mask,
    warp_with_homography,
)
from .errors import (
    DimensionError,
    InsufficientMatchesError,
    NotFittedError,
    ParameterError,
    PipelineError,
    RectificationError,
)
from .image import (
    BinaryMask,
    CameraCalibration,
    LabImage,
    RasterImage,
    canny_edges,
    gaussian_blur,
    lab_to_rgb,
    median_filter,
    normalize_minmax,
    rgb_to_lab,
    undistort,
)
from .segmentation import (
    ConfusionCounts,
    MetricsReport,
    PatchGrid,
    compute_metrics,
    extract_patches,
    mask_fraction,
    predict_mask,
    threshold_classifier,
    train_classifier,
)
from .stereo import (
    CostVolume,
    DisparityMap,
    SgmParams,
    StereoResult,
    aggregate_paths,
    census_cost,
    compute_disparity,
    interpolate_invalid,
    lr_consistency,
    mi_cost,
    wta_disparity,
)

__version__ = "0.1.0"
