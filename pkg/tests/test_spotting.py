import time

import numpy as np
import pytest

from rlf_spotter.config import RunConfig
from rlf_spotter.const import KeypointKind
from rlf_spotter.imageio import BBox, GrayImage
from rlf_spotter.keypoints import Keypoint
from rlf_spotter.spotting import CandidateRegion, PageIndex, build_page_index, prepare_query, slide_and_match, spot
from rlf_spotter.utilities import EmptyQueryError, InvalidInputError

from .helpers import UNIT, page_with_words, query_box, word_box

ORIGINS = [(40, 60), (40, 260)]


@pytest.fixture(scope="module")
def page() -> GrayImage:
    return page_with_words(600, 400, ORIGINS)


@pytest.fixture(scope="module")
def page_index(page) -> PageIndex:
    return build_page_index(page, page_id="page")


@pytest.fixture(scope="module")
def query(page):
    return prepare_query(page.crop(query_box(*ORIGINS[0])), query_id="word")


def _covered(candidate: CandidateRegion, gt: BBox) -> float:
    return candidate.bbox.intersection_area(gt) / gt.area


def test_build_page_index_of_text_page(page_index):
    # Assert
    assert len(page_index) > 0
    assert page_index.descriptors.dtype == np.float32
    assert (len(page_index), 32) == page_index.descriptors.shape
    assert 10.0 < page_index.core_height < 40.0


def test_build_page_index_of_blank_page_is_empty():
    # Act
    result = build_page_index(GrayImage(np.ones((100, 100))), page_id="blank")

    # Assert
    assert 0 == len(result)
    assert 0.0 == result.core_height


def test_build_page_index_of_speckled_page_is_empty():
    # Arrange
    pixels = np.ones((100, 100))
    pixels[[20, 70], [30, 55]] = 0.0

    # Act
    result = build_page_index(GrayImage(pixels), page_id="speckled")

    # Assert
    assert 0 == len(result)


def test_prepare_query_of_blank_image_raises():
    # Act/Assert
    with pytest.raises(EmptyQueryError):
        prepare_query(GrayImage(np.ones((40, 120))))


def test_prepare_query_partitions_by_word_length(query):
    # Assert
    assert 1 <= len(query.parts) <= 4
    assert sum(len(part.keypoints) for part in query.parts) == len(query.keypoints)


def test_slide_and_match_finds_both_copies(query, page_index):
    # Act
    result = slide_and_match(query, page_index)

    # Assert
    assert len(result) >= 2
    for x, y in ORIGINS:
        assert max(_covered(candidate, word_box(x, y)) for candidate in result[:2]) >= 0.5


def test_slide_and_match_regions_do_not_share_keypoints(query, page_index):
    # Act
    result = slide_and_match(query, page_index)

    # Assert
    for i, first in enumerate(result):
        for second in result[i + 1 :]:
            assert first.matched.isdisjoint(second.matched)


def test_slide_and_match_is_deterministic(query, page_index):
    # Act
    first = slide_and_match(query, page_index)
    second = slide_and_match(query, page_index)

    # Assert
    assert first == second


def test_slide_and_match_on_empty_index(query):
    # Arrange
    index = PageIndex("blank", (), np.zeros((0, 32)), 0.0, 100, 100)

    # Act
    result = slide_and_match(query, index)

    # Assert
    assert [] == result


def test_spot_ranks_across_pages(query, page_index):
    # Arrange
    blank = PageIndex("blank", (), np.zeros((0, 32)), 0.0, 100, 100)

    # Act
    result = spot(query, [blank, page_index])

    # Assert
    assert len(result) >= 2
    assert all(candidate.page_id == "page" for candidate in result)
    scores = [candidate.score for candidate in result]
    assert sorted(scores, reverse=True) == scores


def test_spot_rejects_empty_corpus(query):
    # Act/Assert
    with pytest.raises(InvalidInputError):
        spot(query, [])


def test_spot_searches_a_page_within_seconds(page):
    # Arrange
    started = time.perf_counter()

    # Act
    spot(page.crop(query_box(*ORIGINS[0])), [page], RunConfig())

    # Assert
    assert time.perf_counter() - started < 30.0


def test_query_region_honors_availability():
    # Arrange
    keypoints = tuple(Keypoint(float(x), 5.0, KeypointKind.CORNER, 1.0) for x in (5, 15, 25, 45))
    index = PageIndex("page", keypoints, np.zeros((4, 32)), 10.0, 60, 20)
    available = np.array([True, False, True, True])

    # Act
    result = index.query_region((0.0, 0.0, 30.0, 10.0), available)

    # Assert
    assert [0, 2] == result.tolist()


def test_page_index_rejects_misaligned_descriptors():
    # Arrange
    keypoints = (Keypoint(1.0, 1.0, KeypointKind.BLOB, 1.0),)

    # Act/Assert
    with pytest.raises(InvalidInputError):
        PageIndex("page", keypoints, np.zeros((2, 32)), 10.0, 20, 20)


def test_candidate_rank_key_orders_by_score_then_position():
    # Arrange
    low = CandidateRegion("a", BBox(0, 0, 5, 5), 0.4)
    late = CandidateRegion("a", BBox(0, 50, 5, 5), 0.9)
    early = CandidateRegion("a", BBox(30, 10, 5, 5), 0.9)

    # Act
    result = sorted([low, late, early], key=lambda c: c.rank_key)

    # Assert
    assert [early, late, low] == result


def test_candidate_rejects_score_outside_unit_interval():
    # Act/Assert
    with pytest.raises(InvalidInputError):
        CandidateRegion("a", BBox(0, 0, 5, 5), 1.5)


def test_candidate_record():
    # Act
    result = CandidateRegion("p1", BBox(1, 2, 3, 4), 0.5).to_record("q")

    # Assert
    assert {"query_id": "q", "page": "p1", "x": 1, "y": 2, "w": 3, "h": 4, "score": 0.5} == result


@pytest.mark.slow
def test_slide_and_match_adapts_to_page_scale(query):
    # Arrange
    scales = np.linspace(0.75, 1.25, 11)
    found = 0

    for scale in scales:
        unit = round(UNIT * scale)
        origins = [(round(40 * scale), round(60 * scale)), (round(40 * scale), round(260 * scale))]
        scaled = page_with_words(round(600 * scale), round(400 * scale), origins, unit)

        # Act
        result = slide_and_match(query, build_page_index(scaled, page_id="scaled"))

        found += int(len(result) > 0 and max(_covered(result[0], word_box(x, y, unit)) for x, y in origins) >= 0.5)

    # Assert
    assert found >= 0.9 * len(scales)


def test_raising_part_gate_never_adds_candidates(query, page_index):
    # Act
    counts = [
        len(slide_and_match(query, page_index, RunConfig().with_overrides(min_inliers_per_part=gate)))
        for gate in (2, 4, 6, 10)
    ]

    # Assert
    assert sorted(counts, reverse=True) == counts


def test_slide_and_match_follows_word_translation(query):
    # Arrange
    first = build_page_index(page_with_words(500, 300, [(40, 60)]), page_id="first")
    second = build_page_index(page_with_words(500, 300, [(180, 150)]), page_id="second")

    # Act
    first_hit = slide_and_match(query, first)[0]
    second_hit = slide_and_match(query, second)[0]

    # Assert
    assert abs(second_hit.bbox.x - first_hit.bbox.x - 140) <= first.core_height
    assert abs(second_hit.bbox.y - first_hit.bbox.y - 90) <= first.core_height
