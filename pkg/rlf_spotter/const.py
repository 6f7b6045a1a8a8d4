"""RLF Spotter Constants."""
from enum import StrEnum
from logging import Logger, getLogger

_LOGGER: Logger = getLogger(__package__)

ENV_CACHE_DIR = "RLF_SPOTTER_CACHE_DIR"

# Preprocessing
CONF_SIGMA_FINE = "sigma_fine"
CONF_SIGMA_COARSE = "sigma_coarse"
CONF_SIGMA_FINE_FACTOR = "sigma_fine_factor"
CONF_SIGMA_COARSE_FACTOR = "sigma_coarse_factor"
CONF_MASK_THRESHOLD = "mask_threshold"

# Keypoint Detection
CONF_SIGMA_D_FACTOR = "sigma_d_factor"
CONF_SIGMA_I_FACTOR = "sigma_i_factor"
CONF_HARRIS_KAPPA = "harris_kappa"
CONF_CORNER_THRESHOLD = "corner_threshold"
CONF_BLOB_THRESHOLD = "blob_threshold"
CONF_SADDLE_THRESHOLD = "saddle_threshold"
CONF_EDGE_THRESHOLD = "edge_threshold"
CONF_NMS_RADIUS_FACTOR = "nms_radius_factor"
CONF_STATIONARITY = "stationarity"
CONF_MAX_PER_CHARACTER = "max_per_character"

# Descriptor
CONF_RADIUS_FACTOR = "radius_factor"
CONF_R_MIN = "r_min"
CONF_FREQUENCIES = "frequencies"
CONF_RADIAL_LINES = "radial_lines"
CONF_RINGS = "rings"
CONF_INTERPOLATION = "interpolation"

# Matching
CONF_RATIO_THRESHOLD = "ratio_threshold"
CONF_BIN_WIDTH_FACTOR = "bin_width_factor"
CONF_INLIER_RADIUS_FACTOR = "inlier_radius_factor"
CONF_MIN_INLIERS = "min_inliers"
CONF_MIN_INLIERS_PER_PART = "min_inliers_per_part"
CONF_CONSISTENCY_FACTOR = "consistency_factor"
CONF_PART_DIVISOR = "part_divisor"
CONF_MAX_PARTS = "max_parts"
CONF_PARTS = "parts"

# Spotting
CONF_WINDOW_STEP = "window_step"
CONF_BBOX_PADDING = "bbox_padding"

# Evaluation
CONF_OVERLAP_RULE = "overlap_rule"

# Execution
CONF_JOBS = "jobs"
CONF_CACHE_DIR = "cache_dir"

# Binary formats
DESCRIPTOR_MAGIC = b"RLFD"
DESCRIPTOR_VERSION = 1
INDEX_MAGIC = b"RLFI"
INDEX_VERSION = 1

# Exit codes
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PROCESSING = 2


class KeypointKind(StrEnum):
    """The structural phenomenon a keypoint detector responds to."""

    CORNER = "corner"
    BLOB = "blob"
    SADDLE = "saddle"
    EDGE = "edge"


# Stable order used for sorting and binary records
KIND_ORDER: dict[KeypointKind, int] = {
    KeypointKind.CORNER: 0,
    KeypointKind.BLOB: 1,
    KeypointKind.SADDLE: 2,
    KeypointKind.EDGE: 3,
}


class Interpolation(StrEnum):
    """Sub-pixel interpolation used by log-polar sampling."""

    GAUSSIAN = "gaussian"
    BILINEAR = "bilinear"


class OverlapRule(StrEnum):
    """Rule deciding whether a retrieved region hits a ground truth box."""

    AREA = "area"
    IOU = "iou"
