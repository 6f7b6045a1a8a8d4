"""Part-based nearest neighbour matching and the displacement-cluster preconditioner."""
from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from functools import cached_property
from itertools import combinations
import math
from typing import NamedTuple

import numpy as np
from scipy.spatial.distance import cdist

from .const import _LOGGER
from .imageio import BBox
from .keypoints import Keypoint, keypoints_to_arrays
from .utilities import InvalidInputError, InvalidParameterError, require_positive, require_range, round_half_up

DEFAULT_RATIO_THRESHOLD = 0.9
DEFAULT_BIN_WIDTH_FACTOR = 0.5
DEFAULT_INLIER_RADIUS_FACTOR = 1.0
DEFAULT_MIN_INLIERS = 3
DEFAULT_MIN_INLIERS_PER_PART = 2
DEFAULT_CONSISTENCY_FACTOR = 1.5
DEFAULT_PART_DIVISOR = 2.5
DEFAULT_MAX_PARTS = 4

# Offsets of the 3x3 bin block around a center bin
BLOCK_OFFSETS = np.array([(dx, dy) for dy in (-1, 0, 1) for dx in (-1, 0, 1)], dtype=np.int64)


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """Keypoint positions, kind codes and descriptors as aligned arrays.

    ids holds the index of every row in the owning keypoint list so that
    subsets keep track of where their rows came from.
    """

    positions: np.ndarray
    kinds: np.ndarray
    descriptors: np.ndarray
    ids: np.ndarray

    def __post_init__(self) -> None:
        """Validate the row alignment."""
        count = len(self.positions)
        if len(self.kinds) != count or len(self.descriptors) != count or len(self.ids) != count:
            raise InvalidInputError("Positions, kinds, descriptors and ids must have the same length")

    def __len__(self) -> int:
        """Number of keypoints in the set."""
        return len(self.positions)

    @classmethod
    def from_keypoints(cls, keypoints: Sequence[Keypoint], descriptors: np.ndarray) -> FeatureSet:
        """Build a set from keypoints and their aligned descriptor rows."""
        positions, kinds = keypoints_to_arrays(list(keypoints))
        descriptors = np.asarray(descriptors, dtype=np.float64)

        if descriptors.ndim != 2:
            raise InvalidInputError(f"Descriptors must be a 2D array, got shape {descriptors.shape}")

        return cls(positions, kinds, descriptors, np.arange(len(keypoints)))

    def subset(self, rows: np.ndarray) -> FeatureSet:
        """Rows selected by an index array or a boolean mask."""
        return FeatureSet(self.positions[rows], self.kinds[rows], self.descriptors[rows], self.ids[rows])


@dataclass(frozen=True)
class Correspondence:
    """A query keypoint paired with its nearest target keypoint of the same kind."""

    query_index: int
    target_index: int
    query_kp: Keypoint
    target_kp: Keypoint
    distance: float

    def __post_init__(self) -> None:
        """Validate the pairing."""
        if self.query_kp.kind != self.target_kp.kind:
            raise InvalidInputError(f"Cannot pair a {self.query_kp.kind} with a {self.target_kp.kind}")

    def displacement(self, query_scale: float = 1.0) -> tuple[float, float]:
        """Target position minus the scaled query position."""
        return (self.target_kp.x - query_scale * self.query_kp.x, self.target_kp.y - query_scale * self.query_kp.y)


@dataclass(frozen=True)
class PreconditionerParams:
    """Displacement histogram resolution and the relaxed inlier radius, in pixels."""

    bin_width: float
    inlier_radius: float
    min_inliers: int = DEFAULT_MIN_INLIERS

    def __post_init__(self) -> None:
        """Validate the preconditioner settings."""
        require_positive(self.bin_width, "bin_width")

        if self.inlier_radius < self.bin_width:
            raise InvalidParameterError(
                f"inlier_radius ({self.inlier_radius}) must not be smaller than bin_width ({self.bin_width})"
            )
        elif self.min_inliers < 1:
            raise InvalidParameterError(f"min_inliers must be >= 1, got {self.min_inliers}")

    @classmethod
    def for_core_height(
        cls,
        core_height: float,
        bin_width_factor: float = DEFAULT_BIN_WIDTH_FACTOR,
        inlier_radius_factor: float = DEFAULT_INLIER_RADIUS_FACTOR,
        min_inliers: int = DEFAULT_MIN_INLIERS,
    ) -> PreconditionerParams:
        """Scale the histogram and radius with the page text height."""
        return cls(bin_width_factor * core_height, inlier_radius_factor * core_height, min_inliers)


@dataclass(frozen=True)
class MatchParams:
    """Everything match_parts needs to decide whether a window holds the query word.

    query_scale maps query pixels to page pixels (page core height over query
    core height) and slack widens every part strip on each side.
    """

    preconditioner: PreconditionerParams
    ratio_threshold: float = DEFAULT_RATIO_THRESHOLD
    min_inliers_per_part: int = DEFAULT_MIN_INLIERS_PER_PART
    consistency_factor: float = DEFAULT_CONSISTENCY_FACTOR
    slack: float = 0.0
    query_scale: float = 1.0

    def __post_init__(self) -> None:
        """Validate the matching settings."""
        require_range(self.ratio_threshold, "ratio_threshold", 0.0, 1.0)
        require_positive(self.ratio_threshold, "ratio_threshold")
        require_positive(self.consistency_factor, "consistency_factor")
        require_positive(self.query_scale, "query_scale")

        if self.min_inliers_per_part < 1:
            raise InvalidParameterError(f"min_inliers_per_part must be >= 1, got {self.min_inliers_per_part}")
        elif self.slack < 0:
            raise InvalidParameterError(f"slack must be >= 0, got {self.slack}")

    @property
    def part_gate(self) -> int:
        """Inliers a single part needs before it counts as matched."""
        return max(self.preconditioner.min_inliers, self.min_inliers_per_part)


@dataclass(frozen=True, eq=False)
class QueryPart:
    """An equal-width vertical strip of the query word and the keypoints inside it."""

    index: int
    x_range: tuple[float, float]
    keypoint_indices: np.ndarray
    keypoints: tuple[Keypoint, ...]
    descriptors: np.ndarray | None = None
    y_range: tuple[float, float] | None = None

    @cached_property
    def features(self) -> FeatureSet:
        """Keypoints of the part as arrays; ids index the full query keypoint list."""
        if self.descriptors is None:
            raise InvalidInputError(f"Part {self.index} was partitioned without descriptors")

        positions, kinds = keypoints_to_arrays(list(self.keypoints))

        return FeatureSet(positions, kinds, np.asarray(self.descriptors, dtype=np.float64), self.keypoint_indices)


class PreconditionResult(NamedTuple):
    """Inliers of the dominant displacement cluster and the cluster center."""

    inliers: list[Correspondence]
    cluster_center: tuple[float, float] | None


@dataclass(frozen=True)
class PartMatch:
    """Outcome of matching one query part."""

    part_index: int
    query_ids: tuple[int, ...]
    target_ids: tuple[int, ...]
    cluster_center: tuple[float, float] | None
    outlier_target_ids: tuple[int, ...] = ()

    @property
    def inlier_count(self) -> int:
        """Number of inlier correspondences."""
        return len(self.query_ids)


@dataclass(frozen=True)
class MatchResult:
    """Outcome of matching every query part against one window."""

    is_hit: bool
    total_inliers: int
    per_part_inliers: tuple[int, ...]
    matched_target_ids: frozenset[int]
    extent: BBox | None
    parts: tuple[PartMatch, ...] = ()
    inlier_points: tuple[tuple[float, float], ...] = ()
    outlier_points: tuple[tuple[float, float], ...] = ()


NO_MATCH = MatchResult(False, 0, (), frozenset(), None)


def partition_query(
    query_keypoints: Sequence[Keypoint],
    query_width: float,
    core_height: float,
    descriptors: np.ndarray | None = None,
    part_divisor: float = DEFAULT_PART_DIVISOR,
    max_parts: int = DEFAULT_MAX_PARTS,
    parts: int | None = None,
    query_height: float | None = None,
) -> list[QueryPart]:
    """Split the query into equal-width vertical strips.

    The part count grows with the word length measured in core heights; an
    explicit parts value overrides the rule.
    """
    query_width = require_positive(query_width, "query_width")
    core_height = require_positive(core_height, "core_height")
    require_positive(part_divisor, "part_divisor")

    if parts is not None:
        if parts < 1:
            raise InvalidParameterError(f"parts must be >= 1, got {parts}")
        count = int(parts)
    else:
        if max_parts < 1:
            raise InvalidParameterError(f"max_parts must be >= 1, got {max_parts}")
        count = min(max(round_half_up(query_width / (part_divisor * core_height)), 1), max_parts)

    strip = query_width / count
    xs = np.array([kp.x for kp in query_keypoints], dtype=np.float64)
    assignment = np.clip(np.floor(xs / strip).astype(np.int64), 0, count - 1)
    y_range = (0.0, float(query_height)) if query_height is not None else None

    result = []
    for index in range(count):
        members = np.flatnonzero(assignment == index)
        result.append(
            QueryPart(
                index=index,
                x_range=(index * strip, (index + 1) * strip),
                keypoint_indices=members,
                keypoints=tuple(query_keypoints[i] for i in members),
                descriptors=None if descriptors is None else np.asarray(descriptors)[members],
                y_range=y_range,
            )
        )

    _LOGGER.debug("Partitioned a %.0f px query into %d parts", query_width, count)

    return result


def nearest_neighbours(
    query: FeatureSet, target: FeatureSet, ratio_threshold: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Kind-restricted nearest neighbours with the ratio test.

    Returns row indices into query and target plus the descriptor distances,
    ordered by query row.
    """
    query_rows: list[np.ndarray] = []
    target_rows: list[np.ndarray] = []
    distances: list[np.ndarray] = []

    for code in np.unique(query.kinds):
        query_of_kind = np.flatnonzero(query.kinds == code)
        target_of_kind = np.flatnonzero(target.kinds == code)

        if len(target_of_kind) == 0:
            continue

        # Candidates ordered by (y, x) so argmin resolves ties to the smallest position
        order = np.lexsort((target.positions[target_of_kind, 0], target.positions[target_of_kind, 1]))
        target_of_kind = target_of_kind[order]

        table = cdist(query.descriptors[query_of_kind], target.descriptors[target_of_kind])
        rows = np.arange(len(query_of_kind))
        best = np.argmin(table, axis=1)
        nearest = table[rows, best]

        # A ratio of 1 disables the test
        if len(target_of_kind) == 1 or ratio_threshold >= 1.0:
            accepted = np.ones(len(query_of_kind), dtype=bool)
        else:
            table[rows, best] = np.inf
            second = table.min(axis=1)
            accepted = nearest < ratio_threshold * second

        query_rows.append(query_of_kind[accepted])
        target_rows.append(target_of_kind[best[accepted]])
        distances.append(nearest[accepted])

    if len(query_rows) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.float64)

    query_index = np.concatenate(query_rows)
    order = np.argsort(query_index, kind="stable")

    return query_index[order], np.concatenate(target_rows)[order], np.concatenate(distances)[order]


def nn_match(
    query_kps: Sequence[Keypoint],
    query_descs: np.ndarray,
    target_kps: Sequence[Keypoint],
    target_descs: np.ndarray,
    ratio_threshold: float = DEFAULT_RATIO_THRESHOLD,
) -> list[Correspondence]:
    """Pair each query keypoint with its nearest target of the same kind when the ratio test passes."""
    if not 0.0 < ratio_threshold <= 1.0:
        raise InvalidParameterError(f"ratio_threshold must be within (0, 1], got {ratio_threshold}")

    if len(query_kps) == 0 or len(target_kps) == 0:
        return []

    query = FeatureSet.from_keypoints(query_kps, query_descs)
    target = FeatureSet.from_keypoints(target_kps, target_descs)
    query_rows, target_rows, distances = nearest_neighbours(query, target, ratio_threshold)

    return [
        Correspondence(int(q), int(t), query_kps[q], target_kps[t], float(d))
        for q, t, d in zip(query_rows, target_rows, distances)
    ]


def cluster_displacements(
    displacements: np.ndarray, p: PreconditionerParams
) -> tuple[np.ndarray, tuple[float, float] | None]:
    """Find the densest 3x3 bin block of a 2D displacement histogram.

    Returns the inlier mask and the centroid of the displacements inside the
    block. Ties between equally dense blocks go to the smallest (y, x) bin.
    The mask is all False when fewer than min_inliers displacements qualify.
    """
    displacements = np.asarray(displacements, dtype=np.float64).reshape(-1, 2)
    count = len(displacements)

    if count == 0:
        return np.zeros(0, dtype=bool), None

    bins = np.floor((displacements - displacements.min(axis=0)) / p.bin_width).astype(np.int64)
    occupied, counts = np.unique(bins, axis=0, return_counts=True)

    # Encode bins into sortable scalar keys; neighbours of block centers reach two bins past the occupied range
    stride = int(occupied[:, 1].max()) + 5
    occupied_keys = (occupied[:, 0] + 2) * stride + (occupied[:, 1] + 2)
    key_order = np.argsort(occupied_keys)
    sorted_keys = occupied_keys[key_order]
    sorted_counts = counts[key_order]

    centers = np.unique((occupied[:, None, :] + BLOCK_OFFSETS[None, :, :]).reshape(-1, 2), axis=0)
    totals = np.zeros(len(centers), dtype=np.int64)

    for offset in BLOCK_OFFSETS:
        neighbour = centers + offset
        keys = (neighbour[:, 0] + 2) * stride + (neighbour[:, 1] + 2)
        positions = np.clip(np.searchsorted(sorted_keys, keys), 0, len(sorted_keys) - 1)
        found = sorted_keys[positions] == keys
        totals += np.where(found, sorted_counts[positions], 0)

    densest = np.flatnonzero(totals == totals.max())
    winner = centers[densest[np.lexsort((centers[densest, 0], centers[densest, 1]))[0]]]

    in_block = np.all(np.abs(bins - winner) <= 1, axis=1)
    center = displacements[in_block].mean(axis=0)

    inliers = np.hypot(displacements[:, 0] - center[0], displacements[:, 1] - center[1]) <= p.inlier_radius

    if int(inliers.sum()) < p.min_inliers:
        inliers[:] = False

    return inliers, (float(center[0]), float(center[1]))


def precondition_filter(
    corrs: Sequence[Correspondence], p: PreconditionerParams, query_scale: float = 1.0
) -> PreconditionResult:
    """Keep the correspondences whose displacement lies near the dominant displacement cluster.

    Deterministic: the same correspondences always give the same inliers.
    """
    if len(corrs) == 0:
        return PreconditionResult([], None)

    displacements = np.array([c.displacement(query_scale) for c in corrs], dtype=np.float64)
    mask, center = cluster_displacements(displacements, p)

    return PreconditionResult([c for c, keep in zip(corrs, mask) if keep], center)


def align_query(query: FeatureSet, target: FeatureSet, p: MatchParams) -> tuple[float, float] | None:
    """Dominant page position of the query origin from a whole-query match, None without a cluster."""
    if len(query) == 0 or len(target) == 0:
        return None

    query_rows, target_rows, _ = nearest_neighbours(query, target, p.ratio_threshold)
    if len(query_rows) == 0:
        return None

    displacements = target.positions[target_rows] - p.query_scale * query.positions[query_rows]
    mask, center = cluster_displacements(displacements, p.preconditioner)

    return center if np.any(mask) else None


def match_features(
    parts: Sequence[QueryPart], target: FeatureSet, p: MatchParams, anchor: tuple[float, float] | None = None
) -> MatchResult:
    """Array form of match_parts; target ids are reported in the matched sets."""
    if len(parts) == 0:
        raise InvalidInputError("At least one query part is required")

    if len(target) == 0:
        return NO_MATCH

    if anchor is None:
        query = _merge_parts(parts)
        anchor = align_query(query, target, p)
        if anchor is None:
            return NO_MATCH

    scale = p.query_scale
    part_matches: list[PartMatch] = []

    for part in parts:
        left = anchor[0] + scale * part.x_range[0] - p.slack
        right = anchor[0] + scale * part.x_range[1] + p.slack
        inside = (target.positions[:, 0] >= left) & (target.positions[:, 0] <= right)

        if part.y_range is not None:
            top = anchor[1] + scale * part.y_range[0] - p.slack
            bottom = anchor[1] + scale * part.y_range[1] + p.slack
            inside &= (target.positions[:, 1] >= top) & (target.positions[:, 1] <= bottom)

        part_matches.append(_match_part(part, target.subset(inside), p))

    per_part = tuple(m.inlier_count for m in part_matches)
    is_hit = all(count >= p.part_gate for count in per_part) and _consistent(part_matches, p)

    if is_hit is False:
        _LOGGER.debug("Window rejected with per part inliers %s", per_part)
        return MatchResult(False, sum(per_part), per_part, frozenset(), None, tuple(part_matches))

    matched = frozenset(t for m in part_matches for t in m.target_ids)
    outliers = frozenset(t for m in part_matches for t in m.outlier_target_ids) - matched
    lookup = {int(i): row for row, i in enumerate(target.ids)}
    inlier_points = tuple(_point(target, lookup[t]) for t in sorted(matched))
    outlier_points = tuple(_point(target, lookup[t]) for t in sorted(outliers))
    xs = [x for x, _ in inlier_points]
    ys = [y for _, y in inlier_points]

    return MatchResult(
        is_hit=True,
        total_inliers=sum(per_part),
        per_part_inliers=per_part,
        matched_target_ids=matched,
        extent=BBox.from_extent(min(xs), min(ys), max(xs), max(ys)),
        parts=tuple(part_matches),
        inlier_points=inlier_points,
        outlier_points=outlier_points,
    )


def match_parts(
    parts: Sequence[QueryPart],
    window_keypoints: Sequence[Keypoint],
    window_descs: np.ndarray,
    p: MatchParams,
    anchor: tuple[float, float] | None = None,
) -> MatchResult:
    """Match every query part against the horizontally corresponding strip of a window.

    Without an anchor the query is first aligned to the window with a whole-query
    match. A hit needs every part to reach the part gate and all part cluster
    centers to agree within consistency_factor * inlier_radius.
    """
    if len(window_keypoints) == 0:
        if len(parts) == 0:
            raise InvalidInputError("At least one query part is required")
        return NO_MATCH

    return match_features(parts, FeatureSet.from_keypoints(window_keypoints, window_descs), p, anchor)


def _match_part(part: QueryPart, target: FeatureSet, p: MatchParams) -> PartMatch:
    query = part.features

    if len(query) == 0 or len(target) == 0:
        return PartMatch(part.index, (), (), None)

    query_rows, target_rows, _ = nearest_neighbours(query, target, p.ratio_threshold)
    if len(query_rows) == 0:
        return PartMatch(part.index, (), (), None)

    displacements = target.positions[target_rows] - p.query_scale * query.positions[query_rows]
    mask, center = cluster_displacements(displacements, p.preconditioner)

    return PartMatch(
        part_index=part.index,
        query_ids=tuple(int(i) for i in query.ids[query_rows[mask]]),
        target_ids=tuple(int(i) for i in target.ids[target_rows[mask]]),
        cluster_center=center if np.any(mask) else None,
        outlier_target_ids=tuple(int(i) for i in target.ids[target_rows[~mask]]),
    )


def _consistent(part_matches: Sequence[PartMatch], p: MatchParams) -> bool:
    limit = p.consistency_factor * p.preconditioner.inlier_radius

    for first, second in combinations(part_matches, 2):
        if first.cluster_center is None or second.cluster_center is None:
            return False

        gap = math.hypot(
            first.cluster_center[0] - second.cluster_center[0], first.cluster_center[1] - second.cluster_center[1]
        )
        if gap > limit:
            return False

    return True


def _merge_parts(parts: Sequence[QueryPart]) -> FeatureSet:
    features = [part.features for part in parts]

    return FeatureSet(
        np.concatenate([f.positions.reshape(-1, 2) for f in features]),
        np.concatenate([f.kinds for f in features]),
        np.concatenate([f.descriptors for f in features if len(f) > 0] or [np.zeros((0, 0))]),
        np.concatenate([f.ids for f in features]),
    )


def _point(target: FeatureSet, row: int) -> tuple[float, float]:
    return (float(target.positions[row, 0]), float(target.positions[row, 1]))
