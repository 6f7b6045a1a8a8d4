"""Retrieval evaluation: positive-region rule, precision/recall, average precision and mAP."""
from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
import json
from pathlib import Path

from .const import _LOGGER, OverlapRule
from .imageio import BBox
from .spotting import CandidateRegion
from .utilities import EvaluationError, InvalidInputError

POSITIVE_OVERLAP = 0.5


@dataclass(frozen=True)
class GroundTruthEntry:
    """A known word instance on a page."""

    page_id: str
    bbox: BBox
    label: str

    def __post_init__(self) -> None:
        """Validate the label."""
        if self.label == "":
            raise InvalidInputError("A ground truth label must not be empty")


@dataclass(frozen=True)
class QueryReport:
    """Average precision of one query; ap is None when nothing relevant exists."""

    query_id: str
    ap: float | None
    relevant: int


@dataclass(frozen=True)
class EvalReport:
    """Per-query average precision and their mean over queries with relevant instances."""

    per_query: tuple[QueryReport, ...]
    mean_ap: float

    @property
    def undefined(self) -> tuple[str, ...]:
        """Queries excluded from the mean because nothing relevant exists."""
        return tuple(report.query_id for report in self.per_query if report.ap is None)

    def to_json(self) -> dict[str, object]:
        """Report document."""
        return {
            "mAP": self.mean_ap,
            "queries": [
                {"query_id": report.query_id, "ap": report.ap, "relevant": report.relevant} for report in self.per_query
            ],
        }

    def to_table(self) -> str:
        """Plain-text table with one row per query."""
        width = max([len("query")] + [len(report.query_id) for report in self.per_query])
        lines = [f"{'query':<{width}}  {'AP':>7}  {'relevant':>8}"]

        for report in self.per_query:
            ap = "n/a" if report.ap is None else f"{report.ap:.4f}"
            lines.append(f"{report.query_id:<{width}}  {ap:>7}  {report.relevant:>8}")

        lines.append(f"{'mAP':<{width}}  {self.mean_ap:>7.4f}")

        return "\n".join(lines)


def overlap(candidate: CandidateRegion, gt: GroundTruthEntry, rule: OverlapRule = OverlapRule.AREA) -> float:
    """Overlap measure of the rule; zero for different pages."""
    if candidate.page_id != gt.page_id:
        return 0.0
    elif rule == OverlapRule.IOU:
        return candidate.bbox.iou(gt.bbox)

    return candidate.bbox.intersection_area(gt.bbox) / gt.bbox.area


def is_positive(candidate: CandidateRegion, gt: GroundTruthEntry, rule: OverlapRule = OverlapRule.AREA) -> bool:
    """A candidate is positive when it covers more than half of the ground truth area.

    The IoU rule replaces the ground truth area by the union of both boxes.
    """
    return overlap(candidate, gt, rule) > POSITIVE_OVERLAP


def true_positives(
    ranked: Sequence[CandidateRegion], gts: Sequence[GroundTruthEntry], rule: OverlapRule = OverlapRule.AREA
) -> list[bool]:
    """Flag each ranked candidate that claims a ground truth entry not claimed before.

    A candidate claims the unclaimed entry it overlaps most among those it is
    positive for; ties go to the earlier entry.
    """
    claimed = [False] * len(gts)
    flags = []

    for candidate in ranked:
        best = None
        best_overlap = 0.0

        for position, gt in enumerate(gts):
            if claimed[position] is True or is_positive(candidate, gt, rule) is False:
                continue

            value = overlap(candidate, gt, rule)
            if best is None or value > best_overlap:
                best = position
                best_overlap = value

        if best is not None:
            claimed[best] = True

        flags.append(best is not None)

    return flags


def precision_recall(
    ranked: Sequence[CandidateRegion], gts: Sequence[GroundTruthEntry], rule: OverlapRule = OverlapRule.AREA
) -> list[tuple[float, float]]:
    """(precision, recall) after each rank."""
    if len(gts) == 0:
        raise EvaluationError("Recall is undefined without ground truth")

    curve = []
    hits = 0

    for rank, flag in enumerate(true_positives(ranked, gts, rule), start=1):
        hits += int(flag)
        curve.append((hits / rank, hits / len(gts)))

    return curve


def average_precision(
    ranked: Sequence[CandidateRegion], gts: Sequence[GroundTruthEntry], rule: OverlapRule = OverlapRule.AREA
) -> float | None:
    """Mean of the precision at every true positive rank over all ground truth entries; None without ground truth."""
    if len(gts) == 0:
        return None

    flags = true_positives(ranked, gts, rule)
    total = 0.0
    hits = 0

    for rank, flag in enumerate(flags, start=1):
        if flag is True:
            hits += 1
            total += hits / rank

    return total / len(gts)


def mean_ap(aps: Iterable[float | None]) -> float:
    """Arithmetic mean over the defined average precisions."""
    defined = [ap for ap in aps if ap is not None]

    if len(defined) == 0:
        raise EvaluationError("No query has relevant ground truth, the mean average precision is undefined")

    return sum(defined) / len(defined)


def evaluate(
    results: Mapping[str, Sequence[CandidateRegion]],
    gts: Sequence[GroundTruthEntry],
    rule: OverlapRule = OverlapRule.AREA,
    queries: Sequence[str] | None = None,
) -> EvalReport:
    """Evaluate ranked results per query against the ground truth entries labeled with the query id.

    Without an explicit query list every result query and every ground truth
    label is evaluated.
    """
    if queries is None:
        queries = sorted(set(results) | {gt.label for gt in gts})

    reports = []
    for query_id in queries:
        relevant = [gt for gt in gts if gt.label == query_id]
        ranked = sorted(results.get(query_id, ()), key=lambda c: c.rank_key)
        ap = average_precision(ranked, relevant, rule)
        reports.append(QueryReport(query_id, ap, len(relevant)))

        if ap is None:
            _LOGGER.warning("Query %s has no relevant ground truth and is excluded from the mean", query_id)
        else:
            _LOGGER.debug("Query %s: AP %.4f over %d relevant", query_id, ap, len(relevant))

    return EvalReport(tuple(reports), mean_ap(report.ap for report in reports))


def read_ground_truth(path: str | Path) -> list[GroundTruthEntry]:
    """Parse ground truth JSON lines {"page", "x", "y", "w", "h", "label"}."""
    return [
        GroundTruthEntry(str(record["page"]), _bbox(record), str(record["label"]))
        for record in _read_json_lines(path, ("page", "x", "y", "w", "h", "label"))
    ]


def read_results(path: str | Path) -> dict[str, list[CandidateRegion]]:
    """Parse result JSON lines into rank-ordered candidates per query id."""
    results: dict[str, list[CandidateRegion]] = {}

    for record in _read_json_lines(path, ("query_id", "page", "x", "y", "w", "h", "score")):
        candidate = CandidateRegion(str(record["page"]), _bbox(record), _score(record))
        results.setdefault(str(record["query_id"]), []).append(candidate)

    return results


def ground_truth_record(gt: GroundTruthEntry) -> dict[str, object]:
    """Serialize a ground truth entry as a JSON line record."""
    return {"page": gt.page_id, "x": gt.bbox.x, "y": gt.bbox.y, "w": gt.bbox.w, "h": gt.bbox.h, "label": gt.label}


def _bbox(record: Mapping[str, object]) -> BBox:
    return BBox(int(record["x"]), int(record["y"]), int(record["w"]), int(record["h"]))


def _score(record: Mapping[str, object]) -> float:
    score = float(record["score"])
    if not 0.0 <= score <= 1.0:
        raise ValueError(f"score must lie in [0, 1], got {score}")

    return score


def _read_json_lines(path: str | Path, keys: tuple[str, ...]) -> list[dict]:
    path = Path(path)
    records = []

    with open(path, encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            if line.strip() == "":
                continue

            try:
                record = json.loads(line)
            except json.JSONDecodeError as error:
                raise InvalidInputError(f"{path}:{number}: malformed JSON ({error.msg})") from error

            if not isinstance(record, dict):
                raise InvalidInputError(f"{path}:{number}: expected a JSON object")

            missing = [key for key in keys if key not in record]
            if len(missing) > 0:
                raise InvalidInputError(f"{path}:{number}: missing {', '.join(missing)}")

            try:
                _bbox(record)
                if "score" in keys:
                    _score(record)
            except (TypeError, ValueError) as error:
                raise InvalidInputError(f"{path}:{number}: {error}") from error

            records.append(record)

    return records
