"""Page indexing, query preparation and the sliding-window word search."""
from __future__ import annotations

from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
import heapq
import math

import numpy as np

from .config import RunConfig
from .const import _LOGGER
from .descriptor import describe_keypoints
from .imageio import BBox, GrayImage
from .keypoints import Keypoint, detect_all
from .matching import FeatureSet, MatchParams, MatchResult, QueryPart, align_query, match_features, partition_query
from .preprocess import estimate_core_height, remove_background
from .utilities import EmptyQueryError, InvalidInputError, NoTextError

Rect = tuple[float, float, float, float]


@dataclass(frozen=True, eq=False)
class PageIndex:
    """Keypoints and descriptors of one page, bucketed into a grid of core-height cells."""

    page_id: str
    keypoints: tuple[Keypoint, ...]
    descriptors: np.ndarray
    core_height: float
    width: int
    height: int
    grid: dict[tuple[int, int], np.ndarray] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        """Validate alignment and build the grid."""
        descriptors = np.asarray(self.descriptors, dtype=np.float32)
        if descriptors.ndim != 2 or len(descriptors) != len(self.keypoints):
            raise InvalidInputError(
                f"Page {self.page_id}: {len(self.keypoints)} keypoints but descriptor block of shape {descriptors.shape}"
            )
        elif len(self.keypoints) > 0 and not self.core_height > 0:
            raise InvalidInputError(f"Page {self.page_id}: a non-empty index needs a positive core height")

        object.__setattr__(self, "keypoints", tuple(self.keypoints))
        object.__setattr__(self, "descriptors", descriptors)
        object.__setattr__(self, "grid", self._bucket())

    def __len__(self) -> int:
        """Number of indexed keypoints."""
        return len(self.keypoints)

    @cached_property
    def features(self) -> FeatureSet:
        """The whole index as arrays."""
        return FeatureSet.from_keypoints(self.keypoints, self.descriptors)

    def query_region(self, rect: Rect, available: np.ndarray | None = None) -> np.ndarray:
        """Sorted indices of available keypoints inside the rectangle (x0, y0, x1, y1)."""
        if len(self.keypoints) == 0:
            return np.zeros(0, dtype=np.int64)

        x0, y0, x1, y1 = rect
        cell = self.core_height
        chunks = []

        for cy in range(math.floor(y0 / cell), math.floor(y1 / cell) + 1):
            for cx in range(math.floor(x0 / cell), math.floor(x1 / cell) + 1):
                members = self.grid.get((cx, cy))
                if members is not None:
                    chunks.append(members)

        if len(chunks) == 0:
            return np.zeros(0, dtype=np.int64)

        candidates = np.concatenate(chunks)
        positions = self.features.positions[candidates]
        inside = (positions[:, 0] >= x0) & (positions[:, 0] <= x1) & (positions[:, 1] >= y0) & (positions[:, 1] <= y1)
        if available is not None:
            inside &= available[candidates]

        return np.sort(candidates[inside])

    def _bucket(self) -> dict[tuple[int, int], np.ndarray]:
        if len(self.keypoints) == 0:
            return {}

        positions = np.array([(kp.x, kp.y) for kp in self.keypoints], dtype=np.float64)
        cells = np.floor(positions / self.core_height).astype(np.int64)
        grid: dict[tuple[int, int], list[int]] = {}

        for index, (cx, cy) in enumerate(cells):
            grid.setdefault((int(cx), int(cy)), []).append(index)

        return {key: np.asarray(members, dtype=np.int64) for key, members in grid.items()}


@dataclass(frozen=True, eq=False)
class Query:
    """A word exemplar ready for matching."""

    image: GrayImage
    keypoints: tuple[Keypoint, ...]
    descriptors: np.ndarray
    parts: tuple[QueryPart, ...]
    core_height: float
    query_id: str = "query"

    @property
    def width(self) -> int:
        """Width of the exemplar in pixels."""
        return self.image.width

    @property
    def height(self) -> int:
        """Height of the exemplar in pixels."""
        return self.image.height

    @cached_property
    def features(self) -> FeatureSet:
        """All query keypoints as arrays."""
        return FeatureSet.from_keypoints(self.keypoints, self.descriptors)


@dataclass(frozen=True)
class CandidateRegion:
    """A page region believed to hold the query word."""

    page_id: str
    bbox: BBox
    score: float
    matched: frozenset[int] = field(default=frozenset(), compare=False, repr=False)
    inlier_points: tuple[tuple[float, float], ...] = field(default=(), compare=False, repr=False)
    outlier_points: tuple[tuple[float, float], ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self) -> None:
        """Validate the score."""
        if not 0.0 <= self.score <= 1.0:
            raise InvalidInputError(f"A candidate score must lie in [0, 1], got {self.score}")

    @property
    def rank_key(self) -> tuple[float, str, int, int]:
        """Descending score, then page, then position."""
        return (-self.score, self.page_id, self.bbox.y, self.bbox.x)

    def to_record(self, query_id: str) -> dict[str, object]:
        """Serialize as a result line."""
        return {
            "query_id": query_id,
            "page": self.page_id,
            "x": self.bbox.x,
            "y": self.bbox.y,
            "w": self.bbox.w,
            "h": self.bbox.h,
            "score": self.score,
        }


@dataclass(frozen=True)
class _Evaluation:
    """A scored window waiting for acceptance."""

    origin: tuple[float, float]
    result: MatchResult
    score: float
    touched: Rect
    version: int


def clean_page(img: GrayImage, params: RunConfig) -> tuple[GrayImage, float]:
    """Background removal tuned to the text scale, then the core height of the cleaned image."""
    bootstrap = estimate_core_height(img)
    cleaned = remove_background(img, params.preprocess_params(bootstrap))

    try:
        core_height = estimate_core_height(cleaned)
    except NoTextError:
        core_height = bootstrap

    return cleaned, core_height


def _features(img: GrayImage, params: RunConfig) -> tuple[list[Keypoint], np.ndarray, float]:
    cleaned, core_height = clean_page(img, params)
    keypoints = detect_all(cleaned, params.detector_params(core_height))
    descriptors = describe_keypoints(cleaned, keypoints, core_height, params.descriptor_params())

    return keypoints, descriptors.astype(np.float32), core_height


def build_page_index(page_img: GrayImage, params: RunConfig | None = None, page_id: str = "page") -> PageIndex:
    """Preprocess, detect and describe a page; a page without text gives an empty index."""
    params = params or RunConfig()

    try:
        keypoints, descriptors, core_height = _features(page_img, params)
    except NoTextError:
        _LOGGER.info("Page %s holds no text, indexing zero keypoints", page_id)
        return PageIndex(page_id, (), np.zeros((0, params.descriptor_params().dimension)), 0.0, page_img.width, page_img.height)

    _LOGGER.info("Indexed page %s: %d keypoints, core height %.1f px", page_id, len(keypoints), core_height)

    return PageIndex(page_id, tuple(keypoints), descriptors, core_height, page_img.width, page_img.height)


def prepare_query(query_img: GrayImage, params: RunConfig | None = None, query_id: str = "query") -> Query:
    """Run the page pipeline on a word exemplar and split it into parts."""
    params = params or RunConfig()

    try:
        keypoints, descriptors, core_height = _features(query_img, params)
    except NoTextError as error:
        raise EmptyQueryError(f"Query {query_id} holds no text") from error

    if len(keypoints) == 0:
        raise EmptyQueryError(f"Query {query_id} produced no keypoints")

    parts = partition_query(
        keypoints,
        query_img.width,
        core_height,
        descriptors=descriptors,
        part_divisor=params.part_divisor,
        max_parts=params.max_parts,
        parts=params.parts,
        query_height=query_img.height,
    )

    _LOGGER.info("Prepared query %s: %d keypoints in %d parts", query_id, len(keypoints), len(parts))

    return Query(query_img, tuple(keypoints), descriptors, tuple(parts), core_height, query_id)


def slide_and_match(query: Query, index: PageIndex, params: RunConfig | None = None) -> list[CandidateRegion]:
    """Search one page for the query word.

    Every window is aligned to the dominant query displacement before its parts
    are matched, so a word cut by the window border is still recovered whole.
    Hits are accepted greedily by score; each acceptance removes the page
    keypoints inside its region and stale hits touching that region are
    re-evaluated before they can be accepted.
    """
    params = params or RunConfig()

    if len(index) == 0:
        return []

    match_params = params.match_params(index.core_height, query.core_height)
    scale = match_params.query_scale
    window_w = max(1.0, query.width * scale)
    window_h = max(1.0, query.height * scale)
    available = np.ones(len(index), dtype=bool)

    heap: list[tuple[float, int, int, int, _Evaluation]] = []
    seen_anchors: set[tuple[int, int]] = set()
    sequence = 0

    for origin in _window_origins(index, window_w, window_h, params.window_step):
        evaluation = _evaluate(query, index, available, origin, window_w, window_h, match_params, version=0)
        if evaluation is None:
            continue

        anchor = (round(evaluation.touched[0]), round(evaluation.touched[1]))
        if anchor in seen_anchors:
            continue

        seen_anchors.add(anchor)
        heapq.heappush(heap, _heap_entry(evaluation, sequence))
        sequence += 1

    removed: list[Rect] = []
    candidates: list[CandidateRegion] = []

    while heap:
        evaluation = heapq.heappop(heap)[-1]

        if any(_intersects(evaluation.touched, rect) for rect in removed[evaluation.version :]):
            refreshed = _evaluate(
                query, index, available, evaluation.origin, window_w, window_h, match_params, version=len(removed)
            )
            if refreshed is not None:
                heapq.heappush(heap, _heap_entry(refreshed, sequence))
                sequence += 1
            continue

        candidate = _candidate(index, evaluation, params.bbox_padding * index.core_height)
        candidates.append(candidate)

        bbox = candidate.bbox
        region = (float(bbox.x), float(bbox.y), float(bbox.x2), float(bbox.y2))
        available[index.query_region(region)] = False
        available[list(evaluation.result.matched_target_ids)] = False
        removed.append(region)

    candidates.sort(key=lambda c: c.rank_key)

    _LOGGER.info("Query %s: %d candidates on page %s", query.query_id, len(candidates), index.page_id)

    return candidates


def spot(
    query_img: GrayImage | Query,
    corpus: Sequence[PageIndex | GrayImage],
    params: RunConfig | None = None,
    jobs: int | None = None,
) -> list[CandidateRegion]:
    """Search every page of a corpus and rank all regions together.

    Pages may be given as images or as prebuilt indexes; images are indexed on
    the fly with ids page0, page1, ...
    """
    params = params or RunConfig()
    jobs = jobs or params.jobs

    if len(corpus) == 0:
        raise InvalidInputError("The corpus holds no pages")

    query = query_img if isinstance(query_img, Query) else prepare_query(query_img, params)
    indexes = [
        page if isinstance(page, PageIndex) else build_page_index(page, params, page_id=f"page{number}")
        for number, page in enumerate(corpus)
    ]

    if jobs > 1 and len(indexes) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            per_page = list(executor.map(slide_and_match, [query] * len(indexes), indexes, [params] * len(indexes)))
    else:
        per_page = [slide_and_match(query, index, params) for index in indexes]

    ranked = [candidate for candidates in per_page for candidate in candidates]
    ranked.sort(key=lambda c: c.rank_key)

    return ranked


def _window_origins(index: PageIndex, window_w: float, window_h: float, step: float) -> list[tuple[float, float]]:
    step_x = max(1.0, step * window_w)
    step_y = max(1.0, step * window_h)
    xs = np.arange(0.0, max(index.width - window_w, 0.0) + step_x, step_x)
    ys = np.arange(0.0, max(index.height - window_h, 0.0) + step_y, step_y)

    return [(float(x), float(y)) for y in ys for x in xs]


def _evaluate(
    query: Query,
    index: PageIndex,
    available: np.ndarray,
    origin: tuple[float, float],
    window_w: float,
    window_h: float,
    p: MatchParams,
    version: int,
) -> _Evaluation | None:
    x, y = origin
    slack = p.slack
    window = (x - slack, y - slack, x + window_w + slack, y + window_h + slack)
    min_viable = len(query.parts) * p.part_gate

    if len(index.query_region((x, y, x + window_w, y + window_h), available)) < min_viable:
        return None

    target = index.features.subset(index.query_region(window, available))
    anchor = align_query(query.features, target, p)
    if anchor is None:
        return None

    aligned = (anchor[0] - slack, anchor[1] - slack, anchor[0] + window_w + slack, anchor[1] + window_h + slack)
    result = match_features(query.parts, index.features.subset(index.query_region(aligned, available)), p, anchor)

    if result.is_hit is False:
        return None

    score = min(1.0, result.total_inliers / max(1, len(query.keypoints)))

    return _Evaluation(origin, result, score, aligned, version)


def _heap_entry(evaluation: _Evaluation, sequence: int) -> tuple[float, int, int, int, _Evaluation]:
    extent = evaluation.result.extent

    return (-evaluation.score, extent.y, extent.x, sequence, evaluation)


def _candidate(index: PageIndex, evaluation: _Evaluation, padding: float) -> CandidateRegion:
    bbox = evaluation.result.extent.padded(padding).clipped(index.width, index.height)

    return CandidateRegion(
        page_id=index.page_id,
        bbox=bbox,
        score=evaluation.score,
        matched=evaluation.result.matched_target_ids,
        inlier_points=evaluation.result.inlier_points,
        outlier_points=evaluation.result.outlier_points,
    )


def _intersects(first: Rect, second: Rect) -> bool:
    return first[0] <= second[2] and second[0] <= first[2] and first[1] <= second[3] and second[1] <= first[3]
