"""Raster loading/saving, region geometry and result overlays."""
from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
import math
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, UnidentifiedImageError

from .const import _LOGGER
from .utilities import ImageFormatError, ImageReadError, InvalidInputError

# Pillow reports portable any-maps (pbm/pgm/ppm) as "PPM"
SUPPORTED_FORMATS = ("PPM", "PNG")
SAVE_FORMATS = {".pgm": "PPM", ".ppm": "PPM", ".png": "PNG"}

# Rec. 601 luma weights
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float64)

OUTLINE_COLOR = (255, 0, 0)
INLIER_COLOR = (0, 200, 0)
OUTLIER_COLOR = (255, 0, 0)
LABEL_COLOR = (0, 0, 255)


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Immutable luminance raster, indexed as pixels[y, x]."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        """Validate and freeze the raster."""
        pixels = np.array(self.pixels, dtype=np.float64, copy=True)

        if pixels.ndim != 2:
            raise InvalidInputError(f"A gray image must be two dimensional, got shape {pixels.shape}")
        elif pixels.shape[0] == 0 or pixels.shape[1] == 0:
            raise InvalidInputError("A gray image must have non-zero dimensions")
        elif not np.all(np.isfinite(pixels)):
            raise InvalidInputError("A gray image must only hold finite values")

        pixels.setflags(write=False)
        object.__setattr__(self, "pixels", pixels)

    @property
    def width(self) -> int:
        """Width in pixels."""
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        """Height in pixels."""
        return int(self.pixels.shape[0])

    def crop(self, box: BBox) -> GrayImage:
        """Return the part of the image covered by the box, clipped to the image."""
        clipped = box.clipped(self.width, self.height)
        if clipped is None:
            raise InvalidInputError(f"Box {box} lies outside the image")

        return GrayImage(self.pixels[clipped.y : clipped.y2, clipped.x : clipped.x2])


@dataclass(frozen=True)
class BBox:
    """Axis-aligned pixel box; (x, y) is the top-left corner."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self) -> None:
        """Validate the box dimensions."""
        if self.w <= 0 or self.h <= 0:
            raise InvalidInputError(f"A box needs a positive size, got {self.w}x{self.h}")

    @classmethod
    def from_extent(cls, x0: float, y0: float, x1: float, y1: float) -> BBox:
        """Create the smallest integer box covering the real interval [x0, x1] x [y0, y1]."""
        left = math.floor(x0)
        top = math.floor(y0)
        right = max(math.ceil(x1), left + 1)
        bottom = max(math.ceil(y1), top + 1)

        return cls(left, top, right - left, bottom - top)

    @property
    def x2(self) -> int:
        """Exclusive right edge."""
        return self.x + self.w

    @property
    def y2(self) -> int:
        """Exclusive bottom edge."""
        return self.y + self.h

    @property
    def area(self) -> int:
        """Area in pixels."""
        return self.w * self.h

    def intersection_area(self, other: BBox) -> int:
        """Area shared with another box."""
        overlap_w = min(self.x2, other.x2) - max(self.x, other.x)
        overlap_h = min(self.y2, other.y2) - max(self.y, other.y)

        return max(0, overlap_w) * max(0, overlap_h)

    def union_area(self, other: BBox) -> int:
        """Area covered by either box."""
        return self.area + other.area - self.intersection_area(other)

    def iou(self, other: BBox) -> float:
        """Intersection over union."""
        return self.intersection_area(other) / self.union_area(other)

    def padded(self, padding: float) -> BBox:
        """Grow the box by the padding on every side."""
        return BBox.from_extent(self.x - padding, self.y - padding, self.x2 + padding, self.y2 + padding)

    def clipped(self, width: int, height: int) -> BBox | None:
        """Clip the box to an image, None when nothing remains."""
        left = max(0, self.x)
        top = max(0, self.y)
        right = min(width, self.x2)
        bottom = min(height, self.y2)

        if right <= left or bottom <= top:
            return None

        return BBox(left, top, right - left, bottom - top)

    def contains(self, x: float, y: float) -> bool:
        """Check if a real-valued point lies inside the box."""
        return self.x <= x < self.x2 and self.y <= y < self.y2


def load_gray(path: str | Path) -> GrayImage:
    """Load a raster file as luminance normalized to [0, 1]."""
    path = Path(path)

    try:
        with Image.open(path) as image:
            image.load()
            if image.format not in SUPPORTED_FORMATS:
                raise ImageFormatError(f"{path}: unsupported raster format {image.format}")

            pixels = _to_luminance(image)
    except UnidentifiedImageError as error:
        raise ImageFormatError(f"{path}: not a recognised raster image") from error
    except OSError as error:
        raise ImageReadError(f"{path}: {error}") from error

    if pixels.size == 0:
        raise InvalidInputError(f"{path}: image has a zero dimension")

    _LOGGER.debug("Loaded %s (%dx%d)", path, pixels.shape[1], pixels.shape[0])

    return GrayImage(pixels)


def save_gray(img: GrayImage, path: str | Path) -> None:
    """Save an image losslessly with 8 bit depth; the extension picks the format."""
    path = Path(path)
    image_format = SAVE_FORMATS.get(path.suffix.lower())

    if image_format is None:
        raise ImageFormatError(f"{path}: cannot save with extension '{path.suffix}'")

    Image.fromarray(to_uint8(img), mode="L").save(path, format=image_format)


def to_uint8(img: GrayImage) -> np.ndarray:
    """Quantize an image to 8 bits, clipping values outside [0, 1]."""
    return np.round(np.clip(img.pixels, 0.0, 1.0) * 255.0).astype(np.uint8)


def render_overlay(
    img: GrayImage,
    regions: Sequence[tuple[BBox, float]],
    path: str | Path | None = None,
    labels: bool = True,
) -> Image.Image:
    """Draw ranked region outlines on a color copy of the image.

    Regions are labeled with their 1-based rank in the given order. Regions that
    are entirely outside the image are skipped.
    """
    canvas = _to_rgb(img)
    draw = ImageDraw.Draw(canvas)

    for rank, (box, score) in enumerate(regions, start=1):
        if box.clipped(img.width, img.height) is None:
            _LOGGER.warning("Region %s (score %.3f) is outside the %dx%d image, skipping", box, score, img.width, img.height)
            continue

        draw.rectangle([box.x, box.y, box.x2 - 1, box.y2 - 1], outline=OUTLINE_COLOR)
        if labels is True:
            draw.text((box.x + 2, box.y + 2), str(rank), fill=LABEL_COLOR)

    if path is not None:
        canvas.save(path)

    return canvas


def render_matches(
    img: GrayImage,
    inliers: Sequence[tuple[float, float]],
    outliers: Sequence[tuple[float, float]],
    path: str | Path | None = None,
    marker_size: int = 2,
) -> Image.Image:
    """Mark matched keypoints: inliers in green, preconditioner-discarded points in red."""
    canvas = _to_rgb(img)
    draw = ImageDraw.Draw(canvas)

    for points, color in ((outliers, OUTLIER_COLOR), (inliers, INLIER_COLOR)):
        for x, y in points:
            cx = int(round(x))
            cy = int(round(y))
            draw.line([(cx - marker_size, cy), (cx + marker_size, cy)], fill=color)
            draw.line([(cx, cy - marker_size), (cx, cy + marker_size)], fill=color)

    if path is not None:
        canvas.save(path)

    return canvas


def _to_luminance(image: Image.Image) -> np.ndarray:
    if image.mode == "L":
        return np.asarray(image, dtype=np.float64) / 255.0
    elif image.mode in ("I;16", "I;16B", "I;16L", "I"):
        return np.asarray(image, dtype=np.float64) / 65535.0
    elif image.mode == "1":
        return np.asarray(image.convert("L"), dtype=np.float64) / 255.0
    elif image.mode in ("RGB", "RGBA", "P", "LA", "PA", "CMYK"):
        rgb = np.asarray(image.convert("RGB"), dtype=np.float64)
        return (rgb @ LUMA_WEIGHTS) / 255.0

    raise ImageFormatError(f"Unsupported pixel mode {image.mode}")


def _to_rgb(img: GrayImage) -> Image.Image:
    return Image.fromarray(to_uint8(img), mode="L").convert("RGB")
