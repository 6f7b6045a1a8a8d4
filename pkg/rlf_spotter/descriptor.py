"""Radial Line Fourier descriptor: log-polar sampling and a few DFT amplitudes per radial line."""
from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from functools import lru_cache
import math
from pathlib import Path
import struct

import numpy as np

from .const import _LOGGER, DESCRIPTOR_MAGIC, DESCRIPTOR_VERSION, Interpolation
from .imageio import GrayImage
from .keypoints import Keypoint
from .utilities import CacheError, InvalidInputError, InvalidParameterError, require_positive

DEFAULT_RADIAL_LINES = 16
DEFAULT_RINGS = 16
DEFAULT_FREQUENCIES = (2, 4)
DEFAULT_RADIUS_FACTOR = 0.75
DEFAULT_R_MIN = 1.0

# Width of the Gaussian interpolation kernel inside the 3x3 neighbourhood
INTERPOLATION_SIGMA = 0.5
# Raw vectors with a smaller norm are rounding noise of a flat patch
ZERO_NORM = 1e-10
CHUNK_SIZE = 1024
NEIGHBOURS = (-1, 0, 1)

HEADER = struct.Struct("<4sHII")


@dataclass(frozen=True)
class DescriptorParams:
    """Sampling geometry and frequency selection of the descriptor."""

    radius_factor: float = DEFAULT_RADIUS_FACTOR
    r_min: float = DEFAULT_R_MIN
    frequencies: tuple[int, ...] = DEFAULT_FREQUENCIES
    radial_lines: int = DEFAULT_RADIAL_LINES
    rings: int = DEFAULT_RINGS
    interpolation: Interpolation = Interpolation.GAUSSIAN

    def __post_init__(self) -> None:
        """Validate the descriptor layout."""
        require_positive(self.radius_factor, "radius_factor")
        require_positive(self.r_min, "r_min")

        if self.radial_lines < 1:
            raise InvalidParameterError(f"radial_lines must be >= 1, got {self.radial_lines}")
        elif self.rings < 2:
            raise InvalidParameterError(f"rings must be >= 2, got {self.rings}")
        elif len(self.frequencies) == 0:
            raise InvalidParameterError("At least one frequency is required")
        elif any(k < 0 or k >= self.rings for k in self.frequencies):
            raise InvalidParameterError(f"Frequencies must lie in [0, {self.rings}), got {self.frequencies}")

    @property
    def dimension(self) -> int:
        """Length of a descriptor vector."""
        return self.radial_lines * len(self.frequencies)


@dataclass(frozen=True, eq=False)
class LogPolarPatch:
    """Samples on radial lines (rows) and log-spaced rings (columns) around a center."""

    samples: np.ndarray
    center: tuple[float, float]
    r_min: float
    r_max: float

    def __post_init__(self) -> None:
        """Validate the patch."""
        if self.samples.ndim != 2:
            raise InvalidInputError(f"Patch samples must be two dimensional, got shape {self.samples.shape}")
        elif not np.all(np.isfinite(self.samples)):
            raise InvalidInputError("Patch samples must be finite")
        elif not 0 < self.r_min < self.r_max:
            raise InvalidParameterError(f"Radii must satisfy 0 < r_min < r_max, got {self.r_min}, {self.r_max}")

    @property
    def radii(self) -> np.ndarray:
        """Ring radii, strictly increasing."""
        return ring_radii(self.r_min, self.r_max, self.samples.shape[1])


def ring_radii(r_min: float, r_max: float, rings: int) -> np.ndarray:
    """Log-spaced radii r_j = r_min * (r_max / r_min) ** (j / (rings - 1))."""
    return r_min * (r_max / r_min) ** (np.arange(rings, dtype=np.float64) / (rings - 1))


def line_angles(radial_lines: int) -> np.ndarray:
    """Angles 2 pi a / L from the +x axis."""
    return 2.0 * math.pi * np.arange(radial_lines, dtype=np.float64) / radial_lines


def log_polar_sample(
    img: GrayImage,
    center: tuple[float, float],
    r_min: float,
    r_max: float,
    radial_lines: int = DEFAULT_RADIAL_LINES,
    rings: int = DEFAULT_RINGS,
    interpolation: Interpolation = Interpolation.GAUSSIAN,
) -> LogPolarPatch:
    """Sample a circular neighbourhood on radial lines and log-spaced rings."""
    if not 0 < r_min < r_max:
        raise InvalidParameterError(f"Radii must satisfy 0 < r_min < r_max, got {r_min}, {r_max}")

    offset_x, offset_y = _sampling_offsets(r_min, r_max, radial_lines, rings)
    samples = interpolate(img.pixels, center[0] + offset_x, center[1] + offset_y, interpolation)

    return LogPolarPatch(samples, (float(center[0]), float(center[1])), float(r_min), float(r_max))


def interpolate(pixels: np.ndarray, xs: np.ndarray, ys: np.ndarray, mode: Interpolation) -> np.ndarray:
    """Sample an image at real-valued positions, replicating edges outside the image."""
    if mode == Interpolation.BILINEAR:
        return _bilinear(pixels, xs, ys)

    return _gaussian(pixels, xs, ys)


def _gaussian(pixels: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    height, width = pixels.shape
    flat = pixels.ravel()
    columns = np.rint(xs).astype(np.int64)
    rows = np.rint(ys).astype(np.int64)

    # exp(-d^2 / 2s^2) factors into x and y terms
    weights_x = _kernel_weights(columns - xs)
    weights_y = _kernel_weights(rows - ys)

    result = np.zeros(xs.shape, dtype=np.float64)
    for weight_y, dy in zip(weights_y, NEIGHBOURS):
        offsets = np.clip(rows + dy, 0, height - 1) * width
        line = np.zeros(xs.shape, dtype=np.float64)
        for weight_x, dx in zip(weights_x, NEIGHBOURS):
            line += weight_x * flat.take(offsets + np.clip(columns + dx, 0, width - 1))
        result += weight_y * line

    return result


def _kernel_weights(shift: np.ndarray) -> list[np.ndarray]:
    """Normalized weights of the three neighbours -1, 0, 1 around a rounded position."""
    weights = [np.exp(-((shift + d) ** 2) / (2.0 * INTERPOLATION_SIGMA**2)) for d in NEIGHBOURS]
    total = weights[0] + weights[1] + weights[2]

    return [weight / total for weight in weights]


def _bilinear(pixels: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    height, width = pixels.shape
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0

    left = np.clip(x0, 0, width - 1)
    right = np.clip(x0 + 1, 0, width - 1)
    top = np.clip(y0, 0, height - 1)
    bottom = np.clip(y0 + 1, 0, height - 1)

    upper = pixels[top, left] * (1.0 - fx) + pixels[top, right] * fx
    lower = pixels[bottom, left] * (1.0 - fx) + pixels[bottom, right] * fx

    return upper * (1.0 - fy) + lower * fy


@lru_cache(maxsize=64)
def chebyshev_basis(n: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """cos(2 pi n k / N) and sin(2 pi n k / N) for n = 0..N-1 via the Chebyshev recurrence.

    Only cos(phi) and sin(phi) are evaluated directly; every further term follows
    from t(n+1) = 2 cos(phi) t(n) - t(n-1).
    """
    phi = 2.0 * math.pi * k / n
    cosines = np.empty(n, dtype=np.float64)
    sines = np.empty(n, dtype=np.float64)
    cosines[0] = 1.0
    sines[0] = 0.0

    if n > 1:
        cosines[1] = math.cos(phi)
        sines[1] = math.sin(phi)
        two_cos = 2.0 * cosines[1]
        for i in range(2, n):
            cosines[i] = two_cos * cosines[i - 1] - cosines[i - 2]
            sines[i] = two_cos * sines[i - 1] - sines[i - 2]

    cosines.setflags(write=False)
    sines.setflags(write=False)

    return cosines, sines


def dft_element(f: Sequence[float] | np.ndarray, k: int) -> complex:
    """A single DFT element sum f(n) cos(2 pi n k / N) - i sum f(n) sin(2 pi n k / N)."""
    values = np.asarray(f, dtype=np.float64)
    n = len(values)

    if n < 1:
        raise InvalidParameterError("The sequence must hold at least one value")
    elif int(k) != k or k < 0 or k >= n:
        raise InvalidParameterError(f"Frequency k must be an integer in [0, {n}), got {k}")

    cosines, sines = chebyshev_basis(n, int(k))

    return complex(float(values @ cosines), -float(values @ sines))


def dft_amplitude(f: Sequence[float] | np.ndarray, k: int) -> float:
    """Amplitude of a single DFT element."""
    element = dft_element(f, k)

    return math.hypot(element.real, element.imag)


def rlf_amplitudes(patch: LogPolarPatch, frequencies: Sequence[int] = DEFAULT_FREQUENCIES) -> np.ndarray:
    """Unnormalized descriptor: one block of per-line amplitudes for each frequency."""
    return _amplitudes(patch.samples[None, ...], tuple(frequencies))[0]


def rlf_describe(patch: LogPolarPatch, frequencies: Sequence[int] = DEFAULT_FREQUENCIES) -> np.ndarray:
    """L2-normalized descriptor of a patch; a flat patch gives the zero vector."""
    return _normalize(rlf_amplitudes(patch, frequencies)[None, :])[0]


def describe_keypoints(
    img: GrayImage,
    kps: Sequence[Keypoint],
    core_height: float,
    params: DescriptorParams | None = None,
) -> np.ndarray:
    """Describe every keypoint; row i of the result belongs to kps[i]."""
    params = params or DescriptorParams()
    core_height = require_positive(core_height, "core_height")
    r_max = params.radius_factor * core_height

    if r_max <= params.r_min:
        raise InvalidParameterError(f"Sampling radius {r_max:.2f} does not exceed r_min {params.r_min}")

    result = np.zeros((len(kps), params.dimension), dtype=np.float64)
    if len(kps) == 0:
        return result

    offset_x, offset_y = _sampling_offsets(params.r_min, r_max, params.radial_lines, params.rings)
    centers = np.array([(kp.x, kp.y) for kp in kps], dtype=np.float64)

    for start in range(0, len(kps), CHUNK_SIZE):
        chunk = centers[start : start + CHUNK_SIZE]
        xs = chunk[:, 0, None, None] + offset_x
        ys = chunk[:, 1, None, None] + offset_y
        samples = interpolate(img.pixels, xs, ys, params.interpolation)
        result[start : start + len(chunk)] = _normalize(_amplitudes(samples, params.frequencies))

    _LOGGER.debug("Described %d keypoints with radius %.2f px", len(kps), r_max)

    return result


def _sampling_offsets(r_min: float, r_max: float, radial_lines: int, rings: int) -> tuple[np.ndarray, np.ndarray]:
    radii = ring_radii(r_min, r_max, rings)
    angles = line_angles(radial_lines)

    return np.outer(np.cos(angles), radii), np.outer(np.sin(angles), radii)


def _amplitudes(samples: np.ndarray, frequencies: tuple[int, ...]) -> np.ndarray:
    """Amplitudes for a stack of patches (n, lines, rings) -> (n, lines * len(frequencies))."""
    rings = samples.shape[-1]
    blocks = []

    for k in frequencies:
        if k < 0 or k >= rings:
            raise InvalidParameterError(f"Frequency k must lie in [0, {rings}), got {k}")

        cosines, sines = chebyshev_basis(rings, k)
        blocks.append(np.hypot(samples @ cosines, samples @ sines))

    return np.concatenate(blocks, axis=-1)


def _normalize(raw: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    flat = norms[:, 0] <= ZERO_NORM
    safe = np.where(norms > ZERO_NORM, norms, 1.0)
    result = raw / safe
    result[flat] = 0.0

    return result


def write_descriptors(path: str | Path, descriptors: np.ndarray) -> None:
    """Write descriptors as a header followed by little-endian float32 records."""
    descriptors = np.asarray(descriptors)
    if descriptors.ndim != 2:
        raise InvalidInputError(f"Descriptors must be a 2D array, got shape {descriptors.shape}")

    with open(path, "wb") as handle:
        handle.write(HEADER.pack(DESCRIPTOR_MAGIC, DESCRIPTOR_VERSION, descriptors.shape[0], descriptors.shape[1]))
        handle.write(descriptors.astype("<f4").tobytes())


def read_descriptors(path: str | Path) -> np.ndarray:
    """Read a descriptor file written by write_descriptors."""
    data = Path(path).read_bytes()

    if len(data) < HEADER.size:
        raise CacheError(f"{path}: truncated descriptor header")

    magic, version, count, dimension = HEADER.unpack_from(data)
    if magic != DESCRIPTOR_MAGIC:
        raise CacheError(f"{path}: not a descriptor file")
    elif version != DESCRIPTOR_VERSION:
        raise CacheError(f"{path}: unsupported descriptor file version {version}")
    elif len(data) != HEADER.size + 4 * count * dimension:
        raise CacheError(f"{path}: expected {count} records of {dimension} values")

    if count == 0:
        return np.zeros((0, dimension), dtype=np.float32)

    return np.frombuffer(data, dtype="<f4", offset=HEADER.size).reshape(count, dimension).astype(np.float32)
