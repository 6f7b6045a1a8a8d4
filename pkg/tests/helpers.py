"""Synthetic images shared by the tests."""
import numpy as np
from PIL import Image, ImageDraw

from rlf_spotter.imageio import BBox, GrayImage

UNIT = 20


def draw_word(draw: ImageDraw.ImageDraw, x: int, y: int, unit: int = UNIT) -> None:
    """Draw a glyph-like word whose x-height band starts at y and spans one unit."""
    stroke = max(2, unit // 5)

    # Ring
    draw.ellipse([x, y, x + unit, y + unit], outline=0, width=stroke)
    # Ascender
    draw.line([(x + 1.5 * unit, y - unit), (x + 1.5 * unit, y + unit)], fill=0, width=stroke)
    # V
    draw.line([(x + 2 * unit, y), (x + 2.5 * unit, y + unit), (x + 3 * unit, y)], fill=0, width=stroke)
    # Arch
    draw.line([(x + 3.4 * unit, y + unit), (x + 3.4 * unit, y + 0.2 * unit)], fill=0, width=stroke)
    draw.arc([x + 3.4 * unit, y, x + 4.2 * unit, y + 0.8 * unit], 180, 360, fill=0, width=stroke)
    draw.line([(x + 4.2 * unit, y + 0.4 * unit), (x + 4.2 * unit, y + unit)], fill=0, width=stroke)
    # Cross
    draw.line([(x + 4.6 * unit, y), (x + 5.4 * unit, y + unit)], fill=0, width=stroke)
    draw.line([(x + 4.6 * unit, y + unit), (x + 5.4 * unit, y)], fill=0, width=stroke)
    # Barred ring
    draw.ellipse([x + 5.8 * unit, y, x + 7 * unit, y + unit], outline=0, width=stroke)
    draw.line([(x + 5.8 * unit, y + 0.5 * unit), (x + 7 * unit, y + 0.5 * unit)], fill=0, width=stroke)


def word_box(x: int, y: int, unit: int = UNIT) -> BBox:
    """Ink extent of draw_word."""
    stroke = max(2, unit // 5)

    return BBox.from_extent(x - stroke, y - unit - stroke, x + 7 * unit + stroke, y + unit + stroke)


def query_box(x: int, y: int, unit: int = UNIT) -> BBox:
    """Crop around draw_word with a one unit margin."""
    return BBox(x - unit, y - 2 * unit, 9 * unit, 4 * unit)


def page_with_words(width: int, height: int, origins: list[tuple[int, int]], unit: int = UNIT) -> GrayImage:
    """White page with draw_word planted at every origin."""
    canvas = Image.new("L", (width, height), 255)
    draw = ImageDraw.Draw(canvas)

    for x, y in origins:
        draw_word(draw, x, y, unit)

    return GrayImage(np.asarray(canvas, dtype=np.float64) / 255.0)


def square_image(size: int = 40, start: int = 10, stop: int = 30) -> GrayImage:
    """White image with a black square covering [start, stop) in both axes."""
    pixels = np.ones((size, size))
    pixels[start:stop, start:stop] = 0.0

    return GrayImage(pixels)


def gaussian_spot(size: int = 41, sigma: float = 3.0, depth: float = 0.8) -> GrayImage:
    """Dark isotropic Gaussian spot centered in the image."""
    ys, xs = np.mgrid[0:size, 0:size]
    center = (size - 1) / 2
    spot = np.exp(-((xs - center) ** 2 + (ys - center) ** 2) / (2.0 * sigma * sigma))

    return GrayImage(1.0 - depth * spot)
