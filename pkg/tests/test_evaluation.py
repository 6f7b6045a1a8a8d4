import json

import numpy as np
import pytest

from rlf_spotter.const import OverlapRule
from rlf_spotter.evaluation import (
    GroundTruthEntry,
    average_precision,
    evaluate,
    ground_truth_record,
    is_positive,
    mean_ap,
    overlap,
    precision_recall,
    read_ground_truth,
    read_results,
    true_positives,
)
from rlf_spotter.imageio import BBox
from rlf_spotter.spotting import CandidateRegion
from rlf_spotter.utilities import EvaluationError, InvalidInputError

GT_A = GroundTruthEntry("p1", BBox(0, 0, 10, 10), "word")
GT_B = GroundTruthEntry("p1", BBox(100, 0, 10, 10), "word")


def _candidate(x: int, y: int, w: int = 10, h: int = 10, score: float = 0.5, page: str = "p1") -> CandidateRegion:
    return CandidateRegion(page, BBox(x, y, w, h), score)


def _mask(box: BBox, size: int = 60) -> np.ndarray:
    mask = np.zeros((size, size), dtype=bool)
    mask[box.y : box.y2, box.x : box.x2] = True

    return mask


@pytest.mark.parametrize(
    "candidate, rule, expected",
    [
        (BBox(0, 0, 6, 10), OverlapRule.AREA, True),
        (BBox(0, 0, 5, 10), OverlapRule.AREA, False),
        (BBox(0, 0, 30, 30), OverlapRule.AREA, True),
        (BBox(0, 0, 6, 10), OverlapRule.IOU, True),
        (BBox(0, 0, 30, 30), OverlapRule.IOU, False),
    ],
)
def test_is_positive(candidate, rule, expected):
    # Act
    result = is_positive(CandidateRegion("p1", candidate, 0.5), GT_A, rule)

    # Assert
    assert expected == result


def test_overlap_on_another_page_is_zero():
    # Act
    result = overlap(_candidate(0, 0, page="p2"), GT_A)

    # Assert
    assert 0.0 == result


def test_overlap_matches_pixel_counting():
    # Arrange
    rng = np.random.default_rng(12)

    for _ in range(50):
        x, y, w, h = rng.integers(0, 30, 4) + np.array([0, 0, 1, 1])
        gx, gy, gw, gh = rng.integers(0, 30, 4) + np.array([0, 0, 1, 1])
        candidate = CandidateRegion("p", BBox(int(x), int(y), int(w), int(h)), 0.5)
        gt = GroundTruthEntry("p", BBox(int(gx), int(gy), int(gw), int(gh)), "w")
        candidate_mask = _mask(candidate.bbox)
        gt_mask = _mask(gt.bbox)

        # Act
        area = overlap(candidate, gt, OverlapRule.AREA)
        iou = overlap(candidate, gt, OverlapRule.IOU)

        # Assert
        shared = np.sum(candidate_mask & gt_mask)
        assert pytest.approx(shared / gt_mask.sum()) == area
        assert pytest.approx(shared / np.sum(candidate_mask | gt_mask)) == iou


def test_duplicate_detection_counts_once():
    # Act
    result = true_positives([_candidate(0, 0), _candidate(1, 0)], [GT_A])

    # Assert
    assert [True, False] == result


def test_candidate_claims_ground_truth_it_overlaps_most():
    # Arrange
    left = GroundTruthEntry("p1", BBox(0, 0, 10, 10), "word")
    right = GroundTruthEntry("p1", BBox(8, 0, 10, 10), "word")

    # Act
    result = true_positives([_candidate(7, 0), _candidate(0, 0)], [left, right])

    # Assert
    assert [True, True] == result


def test_average_precision_of_interleaved_ranking():
    # Arrange
    ranked = [_candidate(0, 0), _candidate(50, 50), _candidate(100, 0)]

    # Act
    result = average_precision(ranked, [GT_A, GT_B])

    # Assert
    assert pytest.approx((1.0 + 2.0 / 3.0) / 2.0) == result


@pytest.mark.parametrize(
    "ranked, gts, expected",
    [
        ([_candidate(0, 0)], [GT_A], 1.0),
        ([_candidate(50, 50), _candidate(0, 0)], [GT_A], 0.5),
        ([_candidate(0, 0), _candidate(50, 50), _candidate(100, 0)], [GT_A, GT_B], 5.0 / 6.0),
    ],
)
def test_average_precision_worked_examples(ranked, gts, expected):
    # Act
    result = average_precision(ranked, gts)

    # Assert
    assert abs(expected - result) < 1e-9


def _brute_force_ap(hit_gt: list[int | None], gt_count: int) -> float:
    total = 0.0

    for rank in range(1, len(hit_gt) + 1):
        found_now = {gt for gt in hit_gt[:rank] if gt is not None}
        found_before = {gt for gt in hit_gt[: rank - 1] if gt is not None}
        if len(found_now) > len(found_before):
            total += len(found_now) / rank

    return total / gt_count


def test_average_precision_matches_brute_force_enumeration():
    # Arrange
    rng = np.random.default_rng(5)

    for _ in range(1000):
        gt_count = int(rng.integers(1, 5))
        gts = [GroundTruthEntry("p1", BBox(100 * i, 0, 10, 10), "word") for i in range(gt_count)]
        hit_gt = [int(g) if g < gt_count else None for g in rng.integers(0, gt_count + 2, int(rng.integers(0, 9)))]
        ranked = [_candidate(100 * g, 0) if g is not None else _candidate(50, 500) for g in hit_gt]

        # Act
        result = average_precision(ranked, gts)

        # Assert
        assert pytest.approx(_brute_force_ap(hit_gt, gt_count), abs=1e-12) == result


def test_average_precision_counts_missed_instances():
    # Act
    result = average_precision([_candidate(0, 0)], [GT_A, GT_B])

    # Assert
    assert pytest.approx(0.5) == result


def test_average_precision_without_ground_truth_is_undefined():
    # Act
    result = average_precision([_candidate(0, 0)], [])

    # Assert
    assert result is None


def test_precision_recall_curve():
    # Act
    result = precision_recall([_candidate(50, 50), _candidate(0, 0)], [GT_A, GT_B])

    # Assert
    assert [(0.0, 0.0), (0.5, 0.5)] == result


def test_mean_ap_skips_undefined_queries():
    # Act
    result = mean_ap([1.0, None, 0.5])

    # Assert
    assert pytest.approx(0.75) == result


def test_mean_ap_without_defined_queries_raises():
    # Act/Assert
    with pytest.raises(EvaluationError):
        mean_ap([None, None])


def test_evaluate_covers_results_and_labels():
    # Arrange
    results = {"word": [_candidate(0, 0, score=0.9)], "other": [_candidate(100, 0)]}
    gts = [GT_A, GT_B, GroundTruthEntry("p1", BBox(0, 50, 10, 10), "missing")]

    # Act
    result = evaluate(results, gts)

    # Assert
    reports = {report.query_id: report for report in result.per_query}
    assert ("missing", "other", "word") == tuple(reports)
    assert pytest.approx(0.5) == reports["word"].ap
    assert 0.0 == reports["missing"].ap
    assert ("other",) == result.undefined
    assert pytest.approx(0.25) == result.mean_ap


def test_evaluate_restricted_to_query_list():
    # Act
    result = evaluate({"word": [_candidate(0, 0)]}, [GT_A], queries=["word"])

    # Assert
    assert {"mAP": 1.0, "queries": [{"query_id": "word", "ap": 1.0, "relevant": 1}]} == result.to_json()


def test_eval_report_table_lists_every_query():
    # Arrange
    report = evaluate({"word": [_candidate(0, 0)]}, [GT_A])

    # Act
    result = report.to_table()

    # Assert
    assert "word" in result
    assert "mAP" in result


def test_ground_truth_label_must_not_be_empty():
    # Act/Assert
    with pytest.raises(InvalidInputError):
        GroundTruthEntry("p1", BBox(0, 0, 1, 1), "")


def test_read_ground_truth_round_trips_records(tmp_path):
    # Arrange
    path = tmp_path / "groundtruth.jsonl"
    path.write_text("\n".join(json.dumps(ground_truth_record(gt)) for gt in (GT_A, GT_B)) + "\n")

    # Act
    result = read_ground_truth(path)

    # Assert
    assert [GT_A, GT_B] == result


def test_read_ground_truth_reports_malformed_line(tmp_path):
    # Arrange
    path = tmp_path / "groundtruth.jsonl"
    path.write_text(json.dumps(ground_truth_record(GT_A)) + "\n{not json\n")

    # Act/Assert
    with pytest.raises(InvalidInputError, match=":2:"):
        read_ground_truth(path)


def test_read_ground_truth_reports_missing_field(tmp_path):
    # Arrange
    path = tmp_path / "groundtruth.jsonl"
    path.write_text('{"page": "p1", "x": 0, "y": 0, "w": 5}\n')

    # Act/Assert
    with pytest.raises(InvalidInputError, match="h, label"):
        read_ground_truth(path)


def test_read_results_groups_by_query(tmp_path):
    # Arrange
    path = tmp_path / "results.jsonl"
    lines = [
        _candidate(0, 0, score=0.9).to_record("word"),
        _candidate(5, 5, score=0.4).to_record("other"),
        _candidate(100, 0, score=0.3).to_record("word"),
    ]
    path.write_text("\n".join(json.dumps(line) for line in lines))

    # Act
    result = read_results(path)

    # Assert
    assert ["other", "word"] == sorted(result)
    assert [0.9, 0.3] == [candidate.score for candidate in result["word"]]


@pytest.mark.parametrize("score", [1.5, "high"])
def test_read_results_reports_invalid_score_with_location(tmp_path, score):
    # Arrange
    path = tmp_path / "results.jsonl"
    record = {**_candidate(0, 0).to_record("word"), "score": score}
    path.write_text(json.dumps(_candidate(5, 5).to_record("word")) + "\n" + json.dumps(record) + "\n")

    # Act/Assert
    with pytest.raises(InvalidInputError, match="results.jsonl:2:"):
        read_results(path)
