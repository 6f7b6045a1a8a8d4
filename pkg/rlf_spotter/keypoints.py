"""Corner, blob, saddle and stroke-edge keypoint detectors."""
from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
import math

import numpy as np
from scipy.ndimage import maximum_filter
from scipy.spatial import cKDTree

from .const import _LOGGER, KIND_ORDER, KeypointKind
from .imageio import GrayImage
from .preprocess import blur_array, gaussian_kernel, separable_filter
from .utilities import InvalidInputError, InvalidParameterError, require_positive

DEFAULT_SIGMA_D_FACTOR = 0.1
DEFAULT_SIGMA_I_FACTOR = 2.0
DEFAULT_HARRIS_KAPPA = 0.04
DEFAULT_NMS_RADIUS_FACTOR = 0.2
DEFAULT_STATIONARITY = 1.0
DEFAULT_MAX_PER_CHARACTER = 10.0

# Thresholds apply to scale-normalized responses
DEFAULT_THRESHOLDS: dict[KeypointKind, float] = {
    KeypointKind.CORNER: 1e-6,
    KeypointKind.BLOB: 1e-7,
    KeypointKind.SADDLE: 1e-5,
    KeypointKind.EDGE: 1e-3,
}

EPSILON = 1e-12


@dataclass(frozen=True)
class Keypoint:
    """A located interest point; x and y may carry sub-pixel offsets."""

    x: float
    y: float
    kind: KeypointKind
    response: float

    @property
    def sort_key(self) -> tuple[float, float, int]:
        """Deterministic ordering key (y, x, kind)."""
        return (self.y, self.x, KIND_ORDER[self.kind])

    def to_record(self) -> dict[str, object]:
        """Serialize for JSON lines output."""
        return {"x": self.x, "y": self.y, "kind": str(self.kind), "response": self.response}


@dataclass(frozen=True)
class DetectorParams:
    """Scales, thresholds and suppression settings shared by the four detectors."""

    sigma_d: float
    sigma_i: float
    harris_kappa: float = DEFAULT_HARRIS_KAPPA
    thresholds: Mapping[KeypointKind, float] = field(default_factory=lambda: dict(DEFAULT_THRESHOLDS))
    nms_radius: float = 1.0
    stationarity: float = DEFAULT_STATIONARITY
    max_per_character: float | None = DEFAULT_MAX_PER_CHARACTER

    def __post_init__(self) -> None:
        """Validate the detector settings."""
        require_positive(self.sigma_d, "sigma_d")
        require_positive(self.harris_kappa, "harris_kappa")
        require_positive(self.stationarity, "stationarity")

        if self.sigma_i < self.sigma_d:
            raise InvalidParameterError(f"sigma_i ({self.sigma_i}) must not be smaller than sigma_d ({self.sigma_d})")
        elif self.nms_radius < 1.0:
            raise InvalidParameterError(f"nms_radius must be >= 1, got {self.nms_radius}")
        elif any(value < 0.0 for value in self.thresholds.values()):
            raise InvalidParameterError("Detector thresholds must be >= 0")
        elif self.max_per_character is not None:
            require_positive(self.max_per_character, "max_per_character")

    @classmethod
    def for_core_height(
        cls,
        core_height: float,
        sigma_d_factor: float = DEFAULT_SIGMA_D_FACTOR,
        sigma_i_factor: float = DEFAULT_SIGMA_I_FACTOR,
        nms_radius_factor: float = DEFAULT_NMS_RADIUS_FACTOR,
        **kwargs,
    ) -> DetectorParams:
        """Derive the detection scale from the core text height."""
        sigma_d = sigma_d_factor * core_height

        return cls(
            sigma_d=sigma_d,
            sigma_i=sigma_i_factor * sigma_d,
            nms_radius=max(1.0, nms_radius_factor * core_height),
            **kwargs,
        )

    def threshold(self, kind: KeypointKind) -> float:
        """Response threshold for a keypoint kind."""
        return self.thresholds.get(kind, DEFAULT_THRESHOLDS[kind])


@dataclass(frozen=True)
class DerivativeFields:
    """Gaussian derivative responses, indexed [y, x]."""

    ix: np.ndarray
    iy: np.ndarray
    ixx: np.ndarray
    ixy: np.ndarray
    iyy: np.ndarray


@dataclass(frozen=True)
class ResponseFields:
    """Scale-normalized detector responses computed once per image."""

    harris: np.ndarray
    blob: np.ndarray
    saddle: np.ndarray
    edge: np.ndarray
    orientation: np.ndarray


def derivative_kernels(sigma: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sampled Gaussian, first and second derivative correlation kernels.

    The derivative kernels are moment-normalized so a unit ramp yields exactly 1
    and a parabola x^2 yields exactly 2 despite truncation.
    """
    smooth = gaussian_kernel(sigma)
    radius = len(smooth) // 2
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)

    first = offsets * smooth
    first /= np.sum(offsets * first)

    second = (offsets**2 / sigma**4 - 1.0 / sigma**2) * smooth
    second -= smooth * second.sum()
    second *= 2.0 / np.sum(offsets**2 * second)

    return smooth, first, second


def derivatives(img: GrayImage, sigma_d: float) -> DerivativeFields:
    """Gradient and Hessian fields at scale sigma_d."""
    smooth, first, second = derivative_kernels(require_positive(sigma_d, "sigma_d"))
    pixels = img.pixels

    return DerivativeFields(
        ix=separable_filter(pixels, smooth, first),
        iy=separable_filter(pixels, first, smooth),
        ixx=separable_filter(pixels, smooth, second),
        ixy=separable_filter(pixels, first, first),
        iyy=separable_filter(pixels, second, smooth),
    )


def compute_responses(img: GrayImage, p: DetectorParams) -> ResponseFields:
    """Compute every detector response from one set of derivatives."""
    fields = derivatives(img, p.sigma_d)
    sigma = p.sigma_d

    ix = sigma * fields.ix
    iy = sigma * fields.iy
    doh = sigma**4 * (fields.ixx * fields.iyy - fields.ixy**2)

    # Structure tensor
    sxx = blur_array(ix * ix, p.sigma_i)
    syy = blur_array(iy * iy, p.sigma_i)
    sxy = blur_array(ix * iy, p.sigma_i)
    trace = sxx + syy
    determinant = sxx * syy - sxy * sxy
    spread = np.sqrt((sxx - syy) ** 2 + 4.0 * sxy * sxy)

    # Critical points have a vanishing gradient relative to their curvature
    stationarity = np.hypot(ix, iy) / (np.sqrt(np.abs(doh)) + EPSILON)
    critical = np.where(stationarity <= p.stationarity, np.exp(-(stationarity**2)), 0.0)

    return ResponseFields(
        harris=determinant - p.harris_kappa * trace**2,
        blob=np.where(doh > 0.0, doh**2, 0.0) * critical,
        saddle=np.where(doh < 0.0, -doh, 0.0) * critical,
        edge=(spread / (trace + EPSILON)) ** 2 * trace,
        orientation=0.5 * np.arctan2(2.0 * sxy, sxx - syy),
    )


def edge_response(img: GrayImage, p: DetectorParams) -> np.ndarray:
    """Eigenvalue-asymmetry map of the structure tensor."""
    return compute_responses(img, p).edge


def harris_corners(img: GrayImage, p: DetectorParams, responses: ResponseFields | None = None) -> list[Keypoint]:
    """Local maxima of the Harris measure."""
    responses = responses or compute_responses(img, p)

    return _detect(responses.harris, _local_maxima(responses.harris), KeypointKind.CORNER, p)


def doh_blobs(img: GrayImage, p: DetectorParams, responses: ResponseFields | None = None) -> list[Keypoint]:
    """Dark and bright blobs from the squared determinant of Hessian."""
    responses = responses or compute_responses(img, p)

    return _detect(responses.blob, _local_maxima(responses.blob), KeypointKind.BLOB, p)


def saddle_points(img: GrayImage, p: DetectorParams, responses: ResponseFields | None = None) -> list[Keypoint]:
    """Saddle points from the negative determinant of Hessian."""
    responses = responses or compute_responses(img, p)

    return _detect(responses.saddle, _local_maxima(responses.saddle), KeypointKind.SADDLE, p)


def edge_points(img: GrayImage, p: DetectorParams, responses: ResponseFields | None = None) -> list[Keypoint]:
    """Stroke edges, thinned across the dominant structure tensor direction."""
    responses = responses or compute_responses(img, p)
    edge = responses.edge

    step_x = np.rint(np.cos(responses.orientation)).astype(int)
    step_y = np.rint(np.sin(responses.orientation)).astype(int)
    rows, cols = np.indices(edge.shape)
    height, width = edge.shape

    ahead = edge[np.clip(rows + step_y, 0, height - 1), np.clip(cols + step_x, 0, width - 1)]
    behind = edge[np.clip(rows - step_y, 0, height - 1), np.clip(cols - step_x, 0, width - 1)]

    return _detect(edge, (edge >= ahead) & (edge >= behind), KeypointKind.EDGE, p)


def detect_all(img: GrayImage, p: DetectorParams) -> list[Keypoint]:
    """Run the four detectors on shared response fields.

    Suppression happens within each kind only; a location may hold keypoints of
    several kinds.
    """
    responses = compute_responses(img, p)
    keypoints = (
        harris_corners(img, p, responses)
        + doh_blobs(img, p, responses)
        + saddle_points(img, p, responses)
        + edge_points(img, p, responses)
    )
    keypoints.sort(key=lambda kp: kp.sort_key)

    _LOGGER.debug("Detected %d keypoints on a %dx%d image", len(keypoints), img.width, img.height)

    return keypoints


def _local_maxima(response: np.ndarray) -> np.ndarray:
    return response == maximum_filter(response, size=3, mode="nearest")


def _detect(response: np.ndarray, candidates: np.ndarray, kind: KeypointKind, p: DetectorParams) -> list[Keypoint]:
    floor = max(p.threshold(kind), EPSILON)
    ys, xs = np.nonzero(candidates & (response > floor))

    if len(ys) == 0:
        return []

    values = response[ys, xs]
    sub_x, sub_y = _refine(response, ys, xs)
    kept = _suppress(sub_x, sub_y, values, p.nms_radius)

    limit = _density_limit(response.shape, p)
    if limit is not None and len(kept) > limit:
        kept = kept[:limit]

    height, width = response.shape

    return [
        Keypoint(
            x=float(min(max(sub_x[i], 0.0), width - 1)),
            y=float(min(max(sub_y[i], 0.0), height - 1)),
            kind=kind,
            response=float(values[i]),
        )
        for i in kept
    ]


def _refine(response: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sub-pixel peak position from a quadratic fit in the 3x3 neighbourhood."""
    height, width = response.shape
    padded = np.pad(response, 1, mode="edge")
    center = padded[ys + 1, xs + 1]

    offsets = []
    for before, after in (
        (padded[ys + 1, xs], padded[ys + 1, xs + 2]),
        (padded[ys, xs + 1], padded[ys + 2, xs + 1]),
    ):
        curvature = before - 2.0 * center + after
        with np.errstate(divide="ignore", invalid="ignore"):
            offset = np.where(curvature < 0.0, 0.5 * (before - after) / curvature, 0.0)
        offsets.append(np.clip(offset, -0.5, 0.5))

    # Border pixels keep their integer position
    border = (xs == 0) | (ys == 0) | (xs == width - 1) | (ys == height - 1)
    offset_x = np.where(border, 0.0, offsets[0])
    offset_y = np.where(border, 0.0, offsets[1])

    return xs + offset_x, ys + offset_y


def _suppress(xs: np.ndarray, ys: np.ndarray, values: np.ndarray, radius: float) -> np.ndarray:
    """Greedy radius suppression, strongest first with ties broken by (y, x)."""
    order = np.lexsort((xs, ys, -values))
    tree = cKDTree(np.column_stack((xs, ys)))
    suppressed = np.zeros(len(xs), dtype=bool)
    kept: list[int] = []

    for index in order:
        if suppressed[index]:
            continue

        kept.append(int(index))
        suppressed[tree.query_ball_point((xs[index], ys[index]), radius)] = True

    return np.asarray(kept, dtype=int)


def _density_limit(shape: tuple[int, int], p: DetectorParams) -> int | None:
    if p.max_per_character is None:
        return None

    character_area = (p.sigma_d / DEFAULT_SIGMA_D_FACTOR) ** 2

    return math.ceil(p.max_per_character * shape[0] * shape[1] / character_area)


def keypoints_to_arrays(keypoints: list[Keypoint]) -> tuple[np.ndarray, np.ndarray]:
    """Positions (n, 2) as (x, y) and kind codes (n,) for vectorized work."""
    if len(keypoints) == 0:
        return np.zeros((0, 2), dtype=np.float64), np.zeros(0, dtype=np.int8)

    positions = np.array([(kp.x, kp.y) for kp in keypoints], dtype=np.float64)
    kinds = np.array([KIND_ORDER[kp.kind] for kp in keypoints], dtype=np.int8)

    return positions, kinds


def kind_from_code(code: int) -> KeypointKind:
    """Inverse of KIND_ORDER."""
    for kind, value in KIND_ORDER.items():
        if value == code:
            return kind

    raise InvalidInputError(f"Unknown keypoint kind code {code}")
