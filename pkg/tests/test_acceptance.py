"""End-to-end runs on generated corpora."""
import time

import pytest

from rlf_spotter.evaluation import evaluate, is_positive
from rlf_spotter.imageio import load_gray
from rlf_spotter.spotting import CandidateRegion, build_page_index, prepare_query, spot
from rlf_spotter.synth import SyntheticCorpus, SyntheticSpec, generate_corpus

DISTRACTORS = ["river", "cloud", "quick", "glyph", "jovial", "sixty", "wolf", "puzzle", "crisp", "dusky"]


def _spec(seed: int, jitter: bool = True, noise_level: float = 0.02) -> SyntheticSpec:
    query = {"text": "Bentham", "count": 10}
    if jitter is True:
        query.update(scale_jitter=0.1, contrast_jitter=0.2)

    return SyntheticSpec.from_dict(
        {
            "seed": seed,
            "pages": 20,
            "page_width": 1000,
            "page_height": 700,
            "font_size": 40,
            "placements": [query] + [{"text": word, "count": 20} for word in DISTRACTORS],
            "noise_level": noise_level,
            "queries": ["Bentham"],
        }
    )


def _search(corpus: SyntheticCorpus) -> list[CandidateRegion]:
    query = prepare_query(load_gray(corpus.queries[0]), query_id=corpus.queries[0].stem)
    indexes = [build_page_index(load_gray(path), page_id=path.stem) for path in corpus.pages]

    return spot(query, indexes)


def _first_hit_ranks(ranked: list[CandidateRegion], corpus: SyntheticCorpus, label: str) -> list[int | None]:
    ranks = []
    for gt in corpus.ground_truth:
        if gt.label == label:
            ranks.append(next((rank for rank, candidate in enumerate(ranked) if is_positive(candidate, gt)), None))

    return ranks


@pytest.mark.slow
def test_jittered_corpus_reaches_high_map(tmp_path):
    # Arrange
    corpus = generate_corpus(_spec(seed=11), tmp_path)
    started = time.perf_counter()

    # Act
    ranked = _search(corpus)

    # Assert
    elapsed = time.perf_counter() - started
    report = evaluate({"Bentham": ranked}, corpus.ground_truth, queries=["Bentham"])
    assert 10 == report.per_query[0].relevant
    assert report.mean_ap >= 0.9
    assert elapsed < 60.0


@pytest.mark.slow
def test_exact_duplicate_corpus_reaches_perfect_map(tmp_path):
    # Arrange
    corpus = generate_corpus(_spec(seed=12, jitter=False, noise_level=0.0), tmp_path)

    # Act
    ranked = _search(corpus)

    # Assert
    assert 1.0 == evaluate({"Bentham": ranked}, corpus.ground_truth, queries=["Bentham"]).mean_ap


@pytest.mark.slow
def test_longer_word_ranks_above_its_prefix(tmp_path):
    # Arrange
    successes = 0

    for seed in range(10):
        spec = SyntheticSpec.from_dict(
            {
                "seed": seed,
                "pages": 1,
                "page_width": 1000,
                "page_height": 600,
                "font_size": 40,
                "placements": [{"text": "filla", "count": 4}, {"text": "fill", "count": 4}],
                "noise_level": 0.02,
                "queries": ["filla"],
            }
        )
        corpus = generate_corpus(spec, tmp_path / f"seed_{seed}")

        # Act
        ranked = _search(corpus)

        longer = _first_hit_ranks(ranked, corpus, "filla")
        prefix = [rank for rank in _first_hit_ranks(ranked, corpus, "fill") if rank is not None]
        if None not in longer:
            successes += int(len(prefix) == 0 or max(longer) < min(prefix))

    # Assert
    assert successes >= 9


@pytest.mark.slow
def test_dense_page_index_builds_within_seconds(tmp_path):
    # Arrange
    spec = SyntheticSpec.from_dict(
        {
            "seed": 3,
            "pages": 1,
            "page_width": 2000,
            "page_height": 3000,
            "font_size": 40,
            "placements": [{"text": word, "count": 25} for word in DISTRACTORS],
            "noise_level": 0.02,
        }
    )
    page = load_gray(generate_corpus(spec, tmp_path).pages[0])
    started = time.perf_counter()

    # Act
    result = build_page_index(page, page_id="dense")

    # Assert
    assert len(result) > 0
    assert time.perf_counter() - started < 10.0
