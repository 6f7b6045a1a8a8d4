"""Run configuration: schema, key=value file loading and per-module parameter builders."""
from __future__ import annotations

from collections.abc import Callable, Mapping
from dataclasses import asdict, dataclass
import json
import os
from pathlib import Path
from typing import Any

import voluptuous as vol

from .const import (
    _LOGGER,
    CONF_BBOX_PADDING,
    CONF_BIN_WIDTH_FACTOR,
    CONF_BLOB_THRESHOLD,
    CONF_CACHE_DIR,
    CONF_CONSISTENCY_FACTOR,
    CONF_CORNER_THRESHOLD,
    CONF_EDGE_THRESHOLD,
    CONF_FREQUENCIES,
    CONF_HARRIS_KAPPA,
    CONF_INLIER_RADIUS_FACTOR,
    CONF_INTERPOLATION,
    CONF_JOBS,
    CONF_MASK_THRESHOLD,
    CONF_MAX_PARTS,
    CONF_MAX_PER_CHARACTER,
    CONF_MIN_INLIERS,
    CONF_MIN_INLIERS_PER_PART,
    CONF_NMS_RADIUS_FACTOR,
    CONF_OVERLAP_RULE,
    CONF_PART_DIVISOR,
    CONF_PARTS,
    CONF_R_MIN,
    CONF_RADIAL_LINES,
    CONF_RADIUS_FACTOR,
    CONF_RATIO_THRESHOLD,
    CONF_RINGS,
    CONF_SADDLE_THRESHOLD,
    CONF_SIGMA_COARSE,
    CONF_SIGMA_COARSE_FACTOR,
    CONF_SIGMA_D_FACTOR,
    CONF_SIGMA_FINE,
    CONF_SIGMA_FINE_FACTOR,
    CONF_SIGMA_I_FACTOR,
    CONF_STATIONARITY,
    CONF_WINDOW_STEP,
    ENV_CACHE_DIR,
    Interpolation,
    KeypointKind,
    OverlapRule,
)
from .descriptor import DescriptorParams
from .keypoints import DetectorParams
from .matching import MatchParams, PreconditionerParams
from .preprocess import PreprocessParams
from .utilities import ConfigError, SpotterError

# Keys whose values change the page index; everything else only affects search
INDEX_KEYS = (
    CONF_SIGMA_FINE,
    CONF_SIGMA_COARSE,
    CONF_SIGMA_FINE_FACTOR,
    CONF_SIGMA_COARSE_FACTOR,
    CONF_MASK_THRESHOLD,
    CONF_SIGMA_D_FACTOR,
    CONF_SIGMA_I_FACTOR,
    CONF_HARRIS_KAPPA,
    CONF_CORNER_THRESHOLD,
    CONF_BLOB_THRESHOLD,
    CONF_SADDLE_THRESHOLD,
    CONF_EDGE_THRESHOLD,
    CONF_NMS_RADIUS_FACTOR,
    CONF_STATIONARITY,
    CONF_MAX_PER_CHARACTER,
    CONF_RADIUS_FACTOR,
    CONF_R_MIN,
    CONF_FREQUENCIES,
    CONF_RADIAL_LINES,
    CONF_RINGS,
    CONF_INTERPOLATION,
)


def _optional(validator: Callable[[Any], Any]) -> Callable[[Any], Any]:
    """Accept None, an empty string or 'none' as an unset value."""

    def validate(value: Any) -> Any:
        if value is None or (isinstance(value, str) and value.strip().lower() in ("", "none")):
            return None
        return validator(value)

    return validate


def _frequencies(value: Any) -> tuple[int, ...]:
    """Parse a frequency list given as '2,4' or as a sequence."""
    if isinstance(value, str):
        items = [item for item in value.replace(" ", "").split(",") if item != ""]
    elif isinstance(value, (list, tuple)):
        items = list(value)
    else:
        raise vol.Invalid(f"Expected a comma separated list of frequencies, got {value!r}")

    try:
        frequencies = tuple(int(item) for item in items)
    except (TypeError, ValueError) as error:
        raise vol.Invalid(f"Frequencies must be integers, got {value!r}") from error

    if len(frequencies) == 0:
        raise vol.Invalid("At least one frequency is required")
    elif any(k < 1 for k in frequencies):
        raise vol.Invalid("Frequencies must be >= 1; the DC component carries no shape information")

    return frequencies


def _positive_float() -> vol.All:
    return vol.All(vol.Coerce(float), vol.Range(min=0, min_included=False))


def _non_negative_float() -> vol.All:
    return vol.All(vol.Coerce(float), vol.Range(min=0))


RUN_CONFIG_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_SIGMA_FINE): _optional(_positive_float()),
        vol.Optional(CONF_SIGMA_COARSE): _optional(_positive_float()),
        vol.Optional(CONF_SIGMA_FINE_FACTOR): _positive_float(),
        vol.Optional(CONF_SIGMA_COARSE_FACTOR): _positive_float(),
        vol.Optional(CONF_MASK_THRESHOLD): vol.All(vol.Coerce(float), vol.Range(min=0, max=1)),
        vol.Optional(CONF_SIGMA_D_FACTOR): _positive_float(),
        vol.Optional(CONF_SIGMA_I_FACTOR): vol.All(vol.Coerce(float), vol.Range(min=1)),
        vol.Optional(CONF_HARRIS_KAPPA): _positive_float(),
        vol.Optional(CONF_CORNER_THRESHOLD): _non_negative_float(),
        vol.Optional(CONF_BLOB_THRESHOLD): _non_negative_float(),
        vol.Optional(CONF_SADDLE_THRESHOLD): _non_negative_float(),
        vol.Optional(CONF_EDGE_THRESHOLD): _non_negative_float(),
        vol.Optional(CONF_NMS_RADIUS_FACTOR): _positive_float(),
        vol.Optional(CONF_STATIONARITY): _positive_float(),
        vol.Optional(CONF_MAX_PER_CHARACTER): _optional(_positive_float()),
        vol.Optional(CONF_RADIUS_FACTOR): _positive_float(),
        vol.Optional(CONF_R_MIN): _positive_float(),
        vol.Optional(CONF_FREQUENCIES): _frequencies,
        vol.Optional(CONF_RADIAL_LINES): vol.All(vol.Coerce(int), vol.Range(min=1)),
        vol.Optional(CONF_RINGS): vol.All(vol.Coerce(int), vol.Range(min=2)),
        vol.Optional(CONF_INTERPOLATION): vol.Coerce(Interpolation),
        vol.Optional(CONF_RATIO_THRESHOLD): vol.All(vol.Coerce(float), vol.Range(min=0, max=1, min_included=False)),
        vol.Optional(CONF_BIN_WIDTH_FACTOR): _positive_float(),
        vol.Optional(CONF_INLIER_RADIUS_FACTOR): _positive_float(),
        vol.Optional(CONF_MIN_INLIERS): vol.All(vol.Coerce(int), vol.Range(min=1)),
        vol.Optional(CONF_MIN_INLIERS_PER_PART): vol.All(vol.Coerce(int), vol.Range(min=1)),
        vol.Optional(CONF_CONSISTENCY_FACTOR): _positive_float(),
        vol.Optional(CONF_PART_DIVISOR): _positive_float(),
        vol.Optional(CONF_MAX_PARTS): vol.All(vol.Coerce(int), vol.Range(min=1)),
        vol.Optional(CONF_PARTS): _optional(vol.All(vol.Coerce(int), vol.Range(min=1))),
        vol.Optional(CONF_WINDOW_STEP): vol.All(vol.Coerce(float), vol.Range(min=0, max=1, min_included=False)),
        vol.Optional(CONF_BBOX_PADDING): _non_negative_float(),
        vol.Optional(CONF_OVERLAP_RULE): vol.Coerce(OverlapRule),
        vol.Optional(CONF_JOBS): vol.All(vol.Coerce(int), vol.Range(min=1)),
        vol.Optional(CONF_CACHE_DIR): _optional(vol.Coerce(str)),
    },
    extra=vol.PREVENT_EXTRA,
)


def _proccess_run_config(config: dict[str, Any]) -> dict[str, Any]:
    """Cross-field checks the per-key schema cannot express."""
    defaults = RunConfig()
    merged = {**asdict(defaults), **config}

    if merged[CONF_SIGMA_FINE] is not None and merged[CONF_SIGMA_COARSE] is not None:
        if merged[CONF_SIGMA_FINE] >= merged[CONF_SIGMA_COARSE]:
            raise vol.Invalid("sigma_fine must be smaller than sigma_coarse", path=[CONF_SIGMA_FINE])
    elif merged[CONF_SIGMA_FINE_FACTOR] >= merged[CONF_SIGMA_COARSE_FACTOR]:
        raise vol.Invalid("sigma_fine_factor must be smaller than sigma_coarse_factor", path=[CONF_SIGMA_FINE_FACTOR])

    if merged[CONF_INLIER_RADIUS_FACTOR] < merged[CONF_BIN_WIDTH_FACTOR]:
        raise vol.Invalid("inlier_radius_factor must not be smaller than bin_width_factor", path=[CONF_INLIER_RADIUS_FACTOR])

    if any(k >= merged[CONF_RINGS] for k in merged[CONF_FREQUENCIES]):
        raise vol.Invalid(f"Frequencies must be smaller than rings ({merged[CONF_RINGS]})", path=[CONF_FREQUENCIES])

    return config


@dataclass(frozen=True)
class RunConfig:
    """Every tunable of the pipeline; scale-relative values are factors of the core text height."""

    sigma_fine: float | None = None
    sigma_coarse: float | None = None
    sigma_fine_factor: float = 0.2
    sigma_coarse_factor: float = 2.0
    mask_threshold: float = 0.05
    sigma_d_factor: float = 0.1
    sigma_i_factor: float = 2.0
    harris_kappa: float = 0.04
    corner_threshold: float = 1e-6
    blob_threshold: float = 1e-7
    saddle_threshold: float = 1e-5
    edge_threshold: float = 1e-3
    nms_radius_factor: float = 0.2
    stationarity: float = 1.0
    max_per_character: float | None = 10.0
    radius_factor: float = 0.75
    r_min: float = 1.0
    frequencies: tuple[int, ...] = (2, 4)
    radial_lines: int = 16
    rings: int = 16
    interpolation: Interpolation = Interpolation.GAUSSIAN
    ratio_threshold: float = 0.9
    bin_width_factor: float = 0.5
    inlier_radius_factor: float = 1.0
    min_inliers: int = 3
    min_inliers_per_part: int = 2
    consistency_factor: float = 1.5
    part_divisor: float = 2.5
    max_parts: int = 4
    parts: int | None = None
    window_step: float = 0.5
    bbox_padding: float = 0.5
    overlap_rule: OverlapRule = OverlapRule.AREA
    jobs: int = 1
    cache_dir: str | None = None

    def preprocess_params(self, core_height: float) -> PreprocessParams:
        """Band-pass filter scales for a page with the given core height.

        A single absolute sigma that does not fit the other, scale-relative one
        on this page is dropped in favour of both factors.
        """
        sigma_fine = self.sigma_fine or self.sigma_fine_factor * core_height
        sigma_coarse = self.sigma_coarse or self.sigma_coarse_factor * core_height

        if sigma_fine >= sigma_coarse:
            _LOGGER.warning(
                "Band-pass sigmas %.2f / %.2f do not fit a core height of %.1f px, using the scale factors",
                sigma_fine,
                sigma_coarse,
                core_height,
            )
            sigma_fine = self.sigma_fine_factor * core_height
            sigma_coarse = self.sigma_coarse_factor * core_height

        return PreprocessParams(sigma_fine, sigma_coarse, self.mask_threshold)

    def detector_params(self, core_height: float) -> DetectorParams:
        """Detector scales and thresholds for a page with the given core height."""
        return DetectorParams.for_core_height(
            core_height,
            sigma_d_factor=self.sigma_d_factor,
            sigma_i_factor=self.sigma_i_factor,
            nms_radius_factor=self.nms_radius_factor,
            harris_kappa=self.harris_kappa,
            thresholds={
                KeypointKind.CORNER: self.corner_threshold,
                KeypointKind.BLOB: self.blob_threshold,
                KeypointKind.SADDLE: self.saddle_threshold,
                KeypointKind.EDGE: self.edge_threshold,
            },
            stationarity=self.stationarity,
            max_per_character=self.max_per_character,
        )

    def descriptor_params(self) -> DescriptorParams:
        """Descriptor layout."""
        return DescriptorParams(
            radius_factor=self.radius_factor,
            r_min=self.r_min,
            frequencies=tuple(self.frequencies),
            radial_lines=self.radial_lines,
            rings=self.rings,
            interpolation=self.interpolation,
        )

    def match_params(self, page_core_height: float, query_core_height: float) -> MatchParams:
        """Matching settings in page pixels for a query of the given core height."""
        return MatchParams(
            preconditioner=PreconditionerParams.for_core_height(
                page_core_height,
                bin_width_factor=self.bin_width_factor,
                inlier_radius_factor=self.inlier_radius_factor,
                min_inliers=self.min_inliers,
            ),
            ratio_threshold=self.ratio_threshold,
            min_inliers_per_part=self.min_inliers_per_part,
            consistency_factor=self.consistency_factor,
            slack=page_core_height,
            query_scale=page_core_height / query_core_height,
        )

    def index_fingerprint(self) -> str:
        """Stable text of every setting that changes a page index."""
        values = asdict(self)

        return json.dumps({key: _plain(values[key]) for key in INDEX_KEYS}, sort_keys=True)

    def with_overrides(self, **overrides: Any) -> RunConfig:
        """Copy with some fields replaced, validated like a loaded configuration."""
        return load_run_config(overrides={**_changed(self), **overrides}, environ={})

    def validate(self) -> None:
        """Build every module parameter set once so invalid combinations fail early."""
        try:
            PreprocessParams.for_core_height(1.0, self.sigma_fine_factor, self.sigma_coarse_factor, self.mask_threshold)
            self.detector_params(1.0)
            self.descriptor_params()
            self.match_params(1.0, 1.0)
        except SpotterError as error:
            raise ConfigError(str(error)) from error


def read_config_file(path: str | Path) -> dict[str, str]:
    """Read key=value lines; '#' starts a comment and blank lines are skipped."""
    path = Path(path)

    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as error:
        raise ConfigError(f"{path}: {error}") from error

    values: dict[str, str] = {}
    for number, line in enumerate(lines, start=1):
        content = line.split("#", 1)[0].strip()
        if content == "":
            continue

        key, separator, value = content.partition("=")
        if separator == "":
            raise ConfigError(f"{path}:{number}: expected key=value, got '{content}'")

        values[key.strip()] = value.strip()

    return values


def load_run_config(
    config_file: str | Path | None = None,
    overrides: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
) -> RunConfig:
    """Merge built-in defaults, an optional config file and explicit overrides, in that order.

    Overrides set to None are treated as not given.
    """
    environ = os.environ if environ is None else environ
    raw: dict[str, Any] = {}

    if environ.get(ENV_CACHE_DIR):
        raw[CONF_CACHE_DIR] = environ[ENV_CACHE_DIR]

    if config_file is not None:
        raw.update(read_config_file(config_file))

    if overrides is not None:
        raw.update({key: value for key, value in overrides.items() if value is not None})

    try:
        validated = _proccess_run_config(RUN_CONFIG_SCHEMA(raw))
    except vol.Invalid as error:
        key = str(error.path[0]) if len(error.path) > 0 else None
        raise ConfigError(f"Invalid configuration: {error}", key=key) from error

    config = RunConfig(**validated)
    config.validate()

    _LOGGER.debug("Run configuration: %s", _changed(config))

    return config


def _changed(config: RunConfig) -> dict[str, Any]:
    """Fields that differ from the defaults."""
    defaults = asdict(RunConfig())

    return {key: value for key, value in asdict(config).items() if value != defaults[key]}


def _plain(value: Any) -> Any:
    if isinstance(value, tuple):
        return list(value)
    elif isinstance(value, (Interpolation, OverlapRule)):
        return str(value)

    return value
