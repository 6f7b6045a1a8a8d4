"""Command-line entry point exposing every pipeline stage."""
from __future__ import annotations

import argparse
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from contextlib import AbstractContextManager, nullcontext
from itertools import repeat
import json
import logging
from pathlib import Path
import sys
from typing import TextIO

import colorlog

from .cache_manager import IndexCache
from .config import RUN_CONFIG_SCHEMA, RunConfig, load_run_config
from .const import _LOGGER, EXIT_OK, EXIT_PROCESSING, EXIT_USAGE, OverlapRule
from .descriptor import describe_keypoints, write_descriptors
from .evaluation import evaluate, read_ground_truth, read_results
from .imageio import GrayImage, load_gray, render_matches, render_overlay, save_gray
from .keypoints import detect_all
from .spotting import CandidateRegion, PageIndex, build_page_index, clean_page, prepare_query, spot
from .synth import SyntheticSpec, generate_corpus
from .utilities import ConfigError, SpotterError

PAGE_SUFFIXES = (".png", ".pgm", ".ppm", ".pbm")
LOG_FORMAT = "%(log_color)s%(levelname)-8s%(reset)s %(message)s"

FLAG_HELP = {
    "sigma_fine": "absolute fine band-pass sigma in pixels (overrides the factor)",
    "sigma_coarse": "absolute coarse band-pass sigma in pixels (overrides the factor)",
    "frequencies": "comma separated DFT frequencies of the descriptor",
    "interpolation": "log-polar interpolation: gaussian or bilinear",
    "parts": "override the number of query parts",
    "jobs": "number of worker processes",
    "cache_dir": "directory for page index caches (default from RLF_SPOTTER_CACHE_DIR)",
    "overlap_rule": "positive region rule: area or iou",
}


class _ArgumentParser(argparse.ArgumentParser):
    """Argument parser reporting usage errors with the usage exit code."""

    def error(self, message: str) -> None:
        """Print usage and exit."""
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    """Parser with one subcommand per pipeline stage."""
    common = argparse.ArgumentParser(add_help=False)
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="log debug details")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="log warnings and errors only")
    common.add_argument("--config", type=Path, help="key=value configuration file")

    tuning = common.add_argument_group("tuning")
    for key in _config_keys():
        tuning.add_argument(
            f"--{key.replace('_', '-')}", dest=key, default=None, metavar="VALUE", help=FLAG_HELP.get(key)
        )

    parser = _ArgumentParser(prog="rlf-spotter", description="Segmentation-free word spotting with RLF descriptors.")
    commands = parser.add_subparsers(dest="command", required=True)

    command = commands.add_parser("preprocess", parents=[common], help="remove the page background")
    command.add_argument("input", type=Path)
    command.add_argument("output", type=Path)
    command.set_defaults(handler=cmd_preprocess)

    command = commands.add_parser("detect", parents=[common], help="detect keypoints as JSON lines")
    command.add_argument("input", type=Path)
    command.add_argument("-o", "--output", type=Path)
    command.set_defaults(handler=cmd_detect)

    command = commands.add_parser("describe", parents=[common], help="detect and describe keypoints")
    command.add_argument("input", type=Path)
    command.add_argument("-o", "--output", type=Path)
    command.add_argument("--binary", type=Path, help="also write the descriptor block in binary form")
    command.set_defaults(handler=cmd_describe)

    command = commands.add_parser("spot", parents=[common], help="search a corpus for a query word")
    command.add_argument("query", type=Path)
    command.add_argument("corpus", type=Path)
    command.add_argument("-o", "--output", type=Path)
    command.add_argument("--query-id", help="id written to the results (default: query file stem)")
    command.add_argument("--render-dir", type=Path, help="write overlay images of the found regions")
    command.set_defaults(handler=cmd_spot)

    command = commands.add_parser("evaluate", parents=[common], help="compute mAP of spotting results")
    command.add_argument("results", type=Path)
    command.add_argument("groundtruth", type=Path)
    command.add_argument("-o", "--output", type=Path)
    command.add_argument("--iou", action="store_true", help="use intersection over union as the overlap rule")
    command.add_argument("--queries", help="comma separated query ids to evaluate")
    command.set_defaults(handler=cmd_evaluate)

    command = commands.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    command.add_argument("spec", type=Path)
    command.add_argument("output_dir", type=Path)
    command.set_defaults(handler=cmd_synth)

    command = commands.add_parser("render", parents=[common], help="draw results onto corpus pages")
    command.add_argument("results", type=Path)
    command.add_argument("corpus", type=Path)
    command.add_argument("output_dir", type=Path)
    command.add_argument("--query-id", help="only draw results of this query")
    command.set_defaults(handler=cmd_render)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Run a subcommand and return the exit code."""
    args = build_parser().parse_args(argv)
    _setup_logging(args.verbose, args.quiet)

    try:
        config = load_run_config(args.config, {key: getattr(args, key) for key in _config_keys()})
        return args.handler(args, config)
    except ConfigError as error:
        _LOGGER.error("%s", error)
        return EXIT_USAGE
    except (SpotterError, OSError) as error:
        _LOGGER.error("%s", error)
        return EXIT_PROCESSING


def cmd_preprocess(args: argparse.Namespace, config: RunConfig) -> int:
    """Write the background-removed page."""
    cleaned, core_height = clean_page(load_gray(args.input), config)
    save_gray(cleaned, args.output)

    _LOGGER.info("Wrote %s (core height %.1f px)", args.output, core_height)

    return EXIT_OK


def cmd_detect(args: argparse.Namespace, config: RunConfig) -> int:
    """Write the keypoints of an image as JSON lines."""
    cleaned, core_height = clean_page(load_gray(args.input), config)
    keypoints = detect_all(cleaned, config.detector_params(core_height))

    with _open_output(args.output) as handle:
        for kp in keypoints:
            handle.write(json.dumps(kp.to_record()) + "\n")

    return EXIT_OK


def cmd_describe(args: argparse.Namespace, config: RunConfig) -> int:
    """Write keypoints with their descriptors as JSON lines and optionally in binary form."""
    cleaned, core_height = clean_page(load_gray(args.input), config)
    keypoints = detect_all(cleaned, config.detector_params(core_height))
    descriptors = describe_keypoints(cleaned, keypoints, core_height, config.descriptor_params())

    with _open_output(args.output) as handle:
        for kp, descriptor in zip(keypoints, descriptors):
            handle.write(json.dumps({**kp.to_record(), "desc": [float(v) for v in descriptor]}) + "\n")

    if args.binary is not None:
        write_descriptors(args.binary, descriptors)

    return EXIT_OK


def cmd_spot(args: argparse.Namespace, config: RunConfig) -> int:
    """Rank the corpus regions matching the query word."""
    query_id = args.query_id or args.query.stem
    query = prepare_query(load_gray(args.query), config, query_id)

    cache = IndexCache(config.cache_dir, config.index_fingerprint())
    cache.initialize()
    indexes = _index_corpus(_page_paths(args.corpus), config, cache)

    ranked = spot(query, indexes, config, jobs=config.jobs)

    with _open_output(args.output) as handle:
        for candidate in ranked:
            handle.write(json.dumps(candidate.to_record(query_id)) + "\n")

    if args.render_dir is not None:
        _render_pages(ranked, args.corpus, args.render_dir, query_id, with_matches=True)

    _LOGGER.info("Query %s: %d regions over %d pages (%d cached)", query_id, len(ranked), len(indexes), cache.hits)

    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace, config: RunConfig) -> int:
    """Print the evaluation report as JSON and a table on stderr."""
    rule = OverlapRule.IOU if args.iou is True else config.overlap_rule
    queries = [query for query in args.queries.split(",") if query != ""] if args.queries else None
    report = evaluate(read_results(args.results), read_ground_truth(args.groundtruth), rule, queries)

    with _open_output(args.output) as handle:
        handle.write(json.dumps(report.to_json(), indent=2) + "\n")

    print(report.to_table(), file=sys.stderr)

    return EXIT_OK


def cmd_synth(args: argparse.Namespace, config: RunConfig) -> int:
    """Generate the corpus described by a spec file."""
    generate_corpus(SyntheticSpec.from_file(args.spec), args.output_dir)

    return EXIT_OK


def cmd_render(args: argparse.Namespace, config: RunConfig) -> int:
    """Draw ranked result regions onto the corpus pages."""
    results = read_results(args.results)
    query_ids = [args.query_id] if args.query_id else sorted(results)

    for query_id in query_ids:
        _render_pages(results.get(query_id, []), args.corpus, args.output_dir, query_id, with_matches=False)

    return EXIT_OK


def build_index_file(path: Path, config: RunConfig) -> PageIndex | None:
    """Index one page file, None when it cannot be read."""
    try:
        return build_page_index(load_gray(path), config, page_id=path.stem)
    except (SpotterError, OSError) as error:
        _LOGGER.warning("Skipping corpus entry %s: %s", path, error)
        return None


def _index_corpus(paths: list[Path], config: RunConfig, cache: IndexCache) -> list[PageIndex]:
    """Load cached indexes and build the rest, in parallel when several jobs are allowed."""
    indexes: dict[Path, PageIndex | None] = {}
    missing: list[Path] = []

    for path in paths:
        try:
            indexes[path] = cache.load(path.read_bytes(), path.stem)
        except OSError as error:
            _LOGGER.warning("Skipping corpus entry %s: %s", path, error)
            continue

        if indexes[path] is None:
            missing.append(path)

    if config.jobs > 1 and len(missing) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as executor:
            built = list(executor.map(build_index_file, missing, repeat(config)))
    else:
        built = [build_index_file(path, config) for path in missing]

    for path, index in zip(missing, built):
        indexes[path] = index
        if index is not None:
            cache.store(path.read_bytes(), index)

    return [index for index in indexes.values() if index is not None]


def _render_pages(
    candidates: Sequence[CandidateRegion], corpus: Path, out_dir: Path, query_id: str, with_matches: bool
) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    pages = {path.stem: path for path in _page_paths(corpus)}
    by_page: dict[str, list[CandidateRegion]] = {}

    for candidate in candidates:
        by_page.setdefault(candidate.page_id, []).append(candidate)

    for page_id, regions in by_page.items():
        if page_id not in pages:
            _LOGGER.warning("Page %s is not part of %s, skipping", page_id, corpus)
            continue

        image: GrayImage = load_gray(pages[page_id])
        render_overlay(image, [(c.bbox, c.score) for c in regions], out_dir / f"{page_id}_{query_id}.png")

        if with_matches is True:
            inliers = [point for c in regions for point in c.inlier_points]
            outliers = [point for c in regions for point in c.outlier_points]
            render_matches(image, inliers, outliers, out_dir / f"{page_id}_{query_id}_matches.png")


def _page_paths(corpus: Path) -> list[Path]:
    if not corpus.is_dir():
        raise FileNotFoundError(f"Corpus directory {corpus} does not exist")

    return sorted(path for path in corpus.iterdir() if path.is_file() and path.suffix.lower() in PAGE_SUFFIXES)


def _open_output(path: Path | None) -> AbstractContextManager[TextIO]:
    if path is None:
        return nullcontext(sys.stdout)

    return open(path, "w", encoding="utf-8")


def _config_keys() -> list[str]:
    return [str(key) for key in RUN_CONFIG_SCHEMA.schema]


def _setup_logging(verbose: bool, quiet: bool) -> None:
    handler = colorlog.StreamHandler(sys.stderr)
    handler.setFormatter(colorlog.ColoredFormatter(LOG_FORMAT))

    for existing in list(_LOGGER.handlers):
        _LOGGER.removeHandler(existing)

    _LOGGER.addHandler(handler)
    _LOGGER.setLevel(logging.DEBUG if verbose is True else logging.WARNING if quiet is True else logging.INFO)
