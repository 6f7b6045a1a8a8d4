"""Seeded synthetic corpora: rendered word exemplars planted on noisy pages with ground truth."""
from __future__ import annotations

from dataclasses import dataclass
import json
import math
from pathlib import Path
from typing import Any

import numpy as np
from PIL import Image, ImageDraw, ImageFont
import voluptuous as vol

from .const import _LOGGER
from .evaluation import GroundTruthEntry, ground_truth_record
from .imageio import BBox, GrayImage, save_gray
from .utilities import ConfigError, InvalidInputError

CONF_SEED = "seed"
CONF_PAGES = "pages"
CONF_PAGE_WIDTH = "page_width"
CONF_PAGE_HEIGHT = "page_height"
CONF_FONT_SIZE = "font_size"
CONF_PLACEMENTS = "placements"
CONF_TEXT = "text"
CONF_COUNT = "count"
CONF_PAGE = "page"
CONF_X = "x"
CONF_Y = "y"
CONF_SCALE_JITTER = "scale_jitter"
CONF_CONTRAST_JITTER = "contrast_jitter"
CONF_NOISE_LEVEL = "noise_level"
CONF_STAINS = "stains"
CONF_QUERIES = "queries"

GROUND_TRUTH_FILE = "groundtruth.jsonl"
QUERY_DIR = "queries"
PAGE_PATTERN = "page_{:03d}.png"

# Ink lighter than this counts as background when measuring word extents
INK_LEVEL = 0.98
LINE_SPACING = 2.2

PLACEMENT_SCHEMA = vol.Schema(
    {
        vol.Required(CONF_TEXT): vol.All(str, vol.Length(min=1)),
        vol.Optional(CONF_COUNT, default=1): vol.All(vol.Coerce(int), vol.Range(min=0)),
        vol.Optional(CONF_PAGE): vol.All(vol.Coerce(int), vol.Range(min=0)),
        vol.Optional(CONF_X): vol.Coerce(int),
        vol.Optional(CONF_Y): vol.Coerce(int),
        vol.Optional(CONF_SCALE_JITTER, default=0.0): vol.All(vol.Coerce(float), vol.Range(min=0, max=0.5)),
        vol.Optional(CONF_CONTRAST_JITTER, default=0.0): vol.All(vol.Coerce(float), vol.Range(min=0, max=0.9)),
    }
)

SYNTHETIC_SPEC_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_SEED, default=0): vol.Coerce(int),
        vol.Optional(CONF_PAGES, default=1): vol.All(vol.Coerce(int), vol.Range(min=1)),
        vol.Optional(CONF_PAGE_WIDTH, default=1000): vol.All(vol.Coerce(int), vol.Range(min=16)),
        vol.Optional(CONF_PAGE_HEIGHT, default=800): vol.All(vol.Coerce(int), vol.Range(min=16)),
        vol.Optional(CONF_FONT_SIZE, default=48): vol.All(vol.Coerce(int), vol.Range(min=8)),
        vol.Optional(CONF_PLACEMENTS, default=[]): [PLACEMENT_SCHEMA],
        vol.Optional(CONF_NOISE_LEVEL, default=0.0): vol.All(vol.Coerce(float), vol.Range(min=0)),
        vol.Optional(CONF_STAINS, default=0): vol.All(vol.Coerce(int), vol.Range(min=0)),
        vol.Optional(CONF_QUERIES, default=[]): [vol.All(str, vol.Length(min=1))],
    }
)


@dataclass(frozen=True)
class WordPlacement:
    """One or more instances of a word; without a position the layout places them."""

    text: str
    count: int = 1
    page: int | None = None
    x: int | None = None
    y: int | None = None
    scale_jitter: float = 0.0
    contrast_jitter: float = 0.0

    @property
    def is_fixed(self) -> bool:
        """Gets a flag indicating if the position is given explicitly."""
        return self.page is not None and self.x is not None and self.y is not None


@dataclass(frozen=True)
class SyntheticSpec:
    """Everything needed to regenerate a corpus bit for bit."""

    seed: int = 0
    pages: int = 1
    page_width: int = 1000
    page_height: int = 800
    font_size: int = 48
    placements: tuple[WordPlacement, ...] = ()
    noise_level: float = 0.0
    stains: int = 0
    queries: tuple[str, ...] = ()

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SyntheticSpec:
        """Validate a spec document."""
        try:
            config = SYNTHETIC_SPEC_SCHEMA(data)
        except vol.Invalid as error:
            key = str(error.path[0]) if len(error.path) > 0 else None
            raise ConfigError(f"Invalid synthetic spec: {error}", key=key) from error

        placements = tuple(WordPlacement(**placement) for placement in config.pop(CONF_PLACEMENTS))
        for placement in placements:
            if placement.page is not None and placement.page >= config[CONF_PAGES]:
                raise ConfigError(f"Placement of '{placement.text}' refers to missing page {placement.page}", key=CONF_PAGE)

        return cls(placements=placements, queries=tuple(config.pop(CONF_QUERIES)), **config)

    @classmethod
    def from_file(cls, path: str | Path) -> SyntheticSpec:
        """Load a JSON spec file."""
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as error:
            raise ConfigError(f"{path}: malformed JSON ({error.msg})") from error

        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a JSON object")

        return cls.from_dict(data)


@dataclass(frozen=True)
class SyntheticCorpus:
    """Paths and ground truth of a generated corpus."""

    pages: tuple[Path, ...]
    queries: tuple[Path, ...]
    ground_truth: tuple[GroundTruthEntry, ...]


def render_word(text: str, font_size: int, scale: float = 1.0, contrast: float = 1.0) -> GrayImage:
    """Render dark text on a white background with a margin of a quarter font size."""
    if text == "":
        raise InvalidInputError("Cannot render an empty word")

    size = max(1, round(font_size * scale))
    font = ImageFont.load_default(size=size)
    left, top, right, bottom = font.getbbox(text)
    margin = math.ceil(0.25 * size)

    canvas = Image.new("L", (right - left + 2 * margin, bottom - top + 2 * margin), 255)
    ImageDraw.Draw(canvas).text((margin - left, margin - top), text, fill=0, font=font)

    ink = 1.0 - np.asarray(canvas, dtype=np.float64) / 255.0

    return GrayImage(1.0 - contrast * ink)


def render_query(text: str, spec: SyntheticSpec, path: str | Path | None = None) -> GrayImage:
    """Clean exemplar of a word at the corpus font size."""
    image = render_word(text, spec.font_size)

    if path is not None:
        save_gray(image, path)

    return image


def generate_corpus(spec: SyntheticSpec, out_dir: str | Path) -> SyntheticCorpus:
    """Write pages, ground truth JSON lines and query exemplars into out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)

    pages = [np.ones((spec.page_height, spec.page_width), dtype=np.float64) for _ in range(spec.pages)]
    ground_truth: list[GroundTruthEntry] = []

    for page_number, x, y, word in _layout(spec, rng):
        box = _plant(pages[page_number], word, x, y)
        if box is not None:
            ground_truth.append(GroundTruthEntry(_page_id(page_number), box, word.text))

    page_paths = []
    for page_number, page in enumerate(pages):
        _stain(page, spec, rng)
        if spec.noise_level > 0:
            page += rng.normal(0.0, spec.noise_level, page.shape)

        path = out_dir / PAGE_PATTERN.format(page_number)
        save_gray(GrayImage(np.clip(page, 0.0, 1.0)), path)
        page_paths.append(path)

    with open(out_dir / GROUND_TRUTH_FILE, "w", encoding="utf-8") as handle:
        for entry in ground_truth:
            handle.write(json.dumps(ground_truth_record(entry)) + "\n")

    query_dir = out_dir / QUERY_DIR
    query_dir.mkdir(exist_ok=True)
    query_paths = []
    for text in spec.queries:
        path = query_dir / f"{text}.png"
        render_query(text, spec, path)
        query_paths.append(path)

    _LOGGER.info("Generated %d pages with %d words and %d queries", len(pages), len(ground_truth), len(query_paths))

    return SyntheticCorpus(tuple(page_paths), tuple(query_paths), tuple(ground_truth))


class _Instance:
    """A word instance with its jitter already drawn."""

    text: str
    image: GrayImage

    def __init__(self, text: str, image: GrayImage):
        """Initialize a new instance of the _Instance class."""
        self.text = text
        self.image = image


def _layout(spec: SyntheticSpec, rng: np.random.Generator) -> list[tuple[int, int, int, _Instance]]:
    """Render every instance and assign fixed or flowed positions."""
    fixed = []
    flowing = []

    for placement in spec.placements:
        for _ in range(placement.count):
            scale = 1.0 + rng.uniform(-placement.scale_jitter, placement.scale_jitter)
            contrast = 1.0 - rng.uniform(0.0, placement.contrast_jitter)
            instance = _Instance(placement.text, render_word(placement.text, spec.font_size, scale, contrast))

            if placement.is_fixed is True:
                fixed.append((placement.page, placement.x, placement.y, instance))
            else:
                flowing.append(instance)

    order = rng.permutation(len(flowing))
    line_height = math.ceil(LINE_SPACING * spec.font_size)
    page_number, x, y = 0, spec.font_size, spec.font_size
    flowed = []

    for position in order:
        instance = flowing[position]
        width = instance.image.width

        if x + width > spec.page_width - spec.font_size:
            x = spec.font_size
            y += line_height
        if y + line_height > spec.page_height:
            page_number += 1
            x, y = spec.font_size, spec.font_size
        if page_number >= spec.pages or width > spec.page_width:
            raise InvalidInputError(f"The {spec.pages} pages are too small for {len(flowing)} words")

        flowed.append((page_number, x, y, instance))
        x += width + int(rng.integers(spec.font_size // 2, spec.font_size * 3 // 2 + 1))

    return fixed + flowed


def _plant(page: np.ndarray, word: _Instance, x: int, y: int) -> BBox | None:
    """Darken the page with the word image; returns the clipped ink extent."""
    pixels = word.image.pixels
    box = BBox(x, y, pixels.shape[1], pixels.shape[0]).clipped(page.shape[1], page.shape[0])
    if box is None:
        _LOGGER.warning("Word '%s' at (%d, %d) is outside the page, skipping", word.text, x, y)
        return None

    patch = pixels[box.y - y : box.y2 - y, box.x - x : box.x2 - x]
    page[box.y : box.y2, box.x : box.x2] = np.minimum(page[box.y : box.y2, box.x : box.x2], patch)

    rows = np.flatnonzero(np.any(patch < INK_LEVEL, axis=1))
    cols = np.flatnonzero(np.any(patch < INK_LEVEL, axis=0))
    if len(rows) == 0:
        return None

    return BBox(box.x + int(cols[0]), box.y + int(rows[0]), int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1))


def _stain(page: np.ndarray, spec: SyntheticSpec, rng: np.random.Generator) -> None:
    """Darken smooth Gaussian blotches into the page."""
    height, width = page.shape
    ys, xs = np.mgrid[0:height, 0:width]

    for _ in range(spec.stains):
        cx = rng.uniform(0, width)
        cy = rng.uniform(0, height)
        radius = rng.uniform(0.5, 2.0) * spec.font_size
        darkness = rng.uniform(0.05, 0.2)
        page -= darkness * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * radius * radius))


def _page_id(page_number: int) -> str:
    return Path(PAGE_PATTERN.format(page_number)).stem
