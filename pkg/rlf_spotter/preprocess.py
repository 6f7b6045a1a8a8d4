"""Background removal with two band-pass filters and core text height estimation."""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np
from scipy.ndimage import correlate1d
from scipy.signal import fftconvolve

from .const import _LOGGER
from .imageio import GrayImage
from .utilities import InvalidParameterError, NoTextError, require_positive, require_range

BACKGROUND_LEVEL = 1.0
DEFAULT_SIGMA_FINE_FACTOR = 0.2
DEFAULT_SIGMA_COARSE_FACTOR = 2.0
DEFAULT_MASK_THRESHOLD = 0.05

# Kernels wider than this are applied through the FFT
FFT_RADIUS = 32

# Ink darker than the background by less than this is treated as paper texture
INK_FLOOR = 0.1
PROFILE_SIGMA = 0.5
# Bands carrying less ink than this fraction of the strongest band are noise
MIN_BAND_MASS = 0.05
# Bands thinner than this are isolated specks, not text lines
MIN_BAND_HEIGHT = 6
NOISE_FLOOR = 1e-12


@dataclass(frozen=True)
class PreprocessParams:
    """Filter scales of the two band-pass filters."""

    sigma_fine: float
    sigma_coarse: float
    mask_threshold: float = DEFAULT_MASK_THRESHOLD

    def __post_init__(self) -> None:
        """Validate the filter scales."""
        require_positive(self.sigma_fine, "sigma_fine")
        require_positive(self.sigma_coarse, "sigma_coarse")
        require_range(self.mask_threshold, "mask_threshold", 0.0, 1.0)

        if self.sigma_fine >= self.sigma_coarse:
            raise InvalidParameterError(
                f"sigma_fine ({self.sigma_fine}) must be smaller than sigma_coarse ({self.sigma_coarse})"
            )

    @classmethod
    def for_core_height(
        cls,
        core_height: float,
        fine_factor: float = DEFAULT_SIGMA_FINE_FACTOR,
        coarse_factor: float = DEFAULT_SIGMA_COARSE_FACTOR,
        mask_threshold: float = DEFAULT_MASK_THRESHOLD,
    ) -> PreprocessParams:
        """Tie the filter bands to the text scale."""
        return cls(fine_factor * core_height, coarse_factor * core_height, mask_threshold)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Sampled Gaussian truncated at ceil(3 sigma) and normalized to sum 1."""
    sigma = require_positive(sigma, "sigma")
    radius = math.ceil(3.0 * sigma)
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(offsets**2) / (2.0 * sigma * sigma))

    return kernel / kernel.sum()


def gaussian_blur(img: GrayImage, sigma: float) -> GrayImage:
    """Separable Gaussian blur with edge replication at the borders."""
    return GrayImage(blur_array(img.pixels, sigma))


def blur_array(pixels: np.ndarray, sigma: float) -> np.ndarray:
    """Blur a raw array; shared by every stage that needs smoothing."""
    kernel = gaussian_kernel(sigma)

    return separable_filter(pixels, kernel, kernel)


def separable_filter(pixels: np.ndarray, kernel_y: np.ndarray, kernel_x: np.ndarray) -> np.ndarray:
    """Correlate with a column kernel then a row kernel, replicating edges."""
    result = _filter_axis(np.asarray(pixels, dtype=np.float64), kernel_y, axis=0)

    return _filter_axis(result, kernel_x, axis=1)


def _filter_axis(pixels: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = len(kernel) // 2

    if radius <= FFT_RADIUS:
        return correlate1d(pixels, kernel, axis=axis, mode="nearest")

    pad = [(0, 0), (0, 0)]
    pad[axis] = (radius, radius)
    padded = np.pad(pixels, pad, mode="edge")
    shape = [1, 1]
    shape[axis] = len(kernel)

    # Convolution with the flipped kernel is correlation
    return fftconvolve(padded, kernel[::-1].reshape(shape), mode="valid", axes=axis)


def remove_background(img: GrayImage, p: PreprocessParams) -> GrayImage:
    """Separate fine text detail from the background and mask regions without text.

    The fine band keeps stroke gray-levels; the coarse band magnitude builds a soft
    mask that fades out everything far from text evidence. The result sits on a
    constant background level.
    """
    pixels = img.pixels
    fine_blur = blur_array(pixels, p.sigma_fine)
    coarse_blur = blur_array(pixels, p.sigma_coarse)

    fine_band = pixels - fine_blur
    coarse_magnitude = np.abs(fine_blur - coarse_blur)
    peak = float(coarse_magnitude.max())

    if peak <= NOISE_FLOOR:
        mask = np.zeros_like(pixels)
    elif p.mask_threshold <= 0.0:
        mask = np.ones_like(pixels)
    else:
        mask = np.clip(coarse_magnitude / (p.mask_threshold * peak), 0.0, 1.0)

    _LOGGER.debug(
        "Background removal with sigma_fine=%.2f sigma_coarse=%.2f kept %.1f%% of the page",
        p.sigma_fine,
        p.sigma_coarse,
        100.0 * float(mask.mean()),
    )

    return GrayImage(BACKGROUND_LEVEL + fine_band * mask)


def ink_response(img: GrayImage) -> np.ndarray:
    """Per-pixel darkness relative to the dominant (median) background level."""
    ink = float(np.median(img.pixels)) - img.pixels
    ink[ink < INK_FLOOR] = 0.0

    return ink


def estimate_core_height(img: GrayImage) -> float:
    """Estimate the dominant text line height from the horizontal projection profile.

    Text-line bands are maximal runs where the smoothed profile exceeds half of its
    mean over the ink-bearing rows; the median band height is returned. Sparse
    ascender and descender rows fall below that level, so the result tracks the
    x-height band. Specks thinner than MIN_BAND_HEIGHT are not text.
    """
    profile = ink_response(img).sum(axis=1)

    if not np.any(profile > 0.0):
        raise NoTextError("The image holds no ink to estimate a text height from")

    smoothed = correlate1d(profile, gaussian_kernel(PROFILE_SIGMA), mode="constant")
    level = 0.5 * float(smoothed[smoothed > 0.0].mean())
    bands = _runs_above(smoothed, level)

    strongest = max(mass for _, mass in bands)
    heights = [height for height, mass in bands if mass >= MIN_BAND_MASS * strongest and height >= MIN_BAND_HEIGHT]

    if len(heights) == 0:
        raise NoTextError(f"No ink band of the image is at least {MIN_BAND_HEIGHT} px tall")

    core_height = float(np.median(heights))

    _LOGGER.debug("Found %d text bands, core height %.1f px", len(heights), core_height)

    return core_height


def _runs_above(profile: np.ndarray, level: float) -> list[tuple[int, float]]:
    """Return (length, mass) of every maximal run of values above the level."""
    above = np.concatenate(([False], profile > level, [False]))
    changes = np.flatnonzero(above[1:] != above[:-1])
    starts = changes[0::2]
    stops = changes[1::2]

    return [(int(stop - start), float(profile[start:stop].sum())) for start, stop in zip(starts, stops)]
