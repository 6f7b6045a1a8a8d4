"""The Index Cache manager class."""
from __future__ import annotations

import hashlib
from pathlib import Path
import struct

import numpy as np

from .const import _LOGGER, INDEX_MAGIC, INDEX_VERSION
from .keypoints import Keypoint, kind_from_code, keypoints_to_arrays
from .spotting import PageIndex
from .utilities import CacheError

HEADER = struct.Struct("<4sHIIdII")
KEYPOINT_RECORD = np.dtype([("x", "<f8"), ("y", "<f8"), ("kind", "u1"), ("response", "<f8")])
SUFFIX = ".rlfi"


def write_index(path: str | Path, index: PageIndex) -> None:
    """Write a header, the keypoint records and the float32 descriptor block."""
    positions, kinds = keypoints_to_arrays(list(index.keypoints))
    records = np.zeros(len(index), dtype=KEYPOINT_RECORD)
    records["x"] = positions[:, 0]
    records["y"] = positions[:, 1]
    records["kind"] = kinds
    records["response"] = [kp.response for kp in index.keypoints]

    header = HEADER.pack(
        INDEX_MAGIC,
        INDEX_VERSION,
        len(index),
        index.descriptors.shape[1],
        index.core_height,
        index.width,
        index.height,
    )

    with open(path, "wb") as handle:
        handle.write(header)
        handle.write(records.tobytes())
        handle.write(index.descriptors.astype("<f4").tobytes())


def read_index(path: str | Path, page_id: str) -> PageIndex:
    """Read an index file written by write_index."""
    data = Path(path).read_bytes()

    if len(data) < HEADER.size:
        raise CacheError(f"{path}: truncated index header")

    magic, version, count, dimension, core_height, width, height = HEADER.unpack_from(data)
    if magic != INDEX_MAGIC:
        raise CacheError(f"{path}: not an index file")
    elif version != INDEX_VERSION:
        raise CacheError(f"{path}: unsupported index file version {version}")

    records_size = count * KEYPOINT_RECORD.itemsize
    if len(data) != HEADER.size + records_size + 4 * count * dimension:
        raise CacheError(f"{path}: expected {count} keypoints with {dimension} descriptor values")

    if count == 0:
        return PageIndex(page_id, (), np.zeros((0, dimension), dtype=np.float32), core_height, width, height)

    records = np.frombuffer(data, dtype=KEYPOINT_RECORD, count=count, offset=HEADER.size)
    descriptors = np.frombuffer(data, dtype="<f4", offset=HEADER.size + records_size).reshape(count, dimension)

    try:
        keypoints = tuple(
            Keypoint(float(r["x"]), float(r["y"]), kind_from_code(int(r["kind"])), float(r["response"])) for r in records
        )
    except ValueError as error:
        raise CacheError(f"{path}: {error}") from error

    return PageIndex(page_id, keypoints, descriptors.astype(np.float32), core_height, width, height)


class IndexCache:
    """Manager for reusing page indexes across runs.

    Entries are keyed by the page bytes and the index settings so a changed
    page or configuration never reads a stale index.
    """

    _cache_dir: Path | None
    _fingerprint: str
    _is_enabled: bool
    _is_initialized: bool = False
    _hits: int = 0
    _misses: int = 0

    def __init__(self, cache_dir: str | Path | None, fingerprint: str):
        """Initialize a new instance of the IndexCache class."""

        self._cache_dir = Path(cache_dir) if cache_dir is not None else None
        self._fingerprint = fingerprint
        self._is_enabled = cache_dir is not None

    @property
    def cache_dir(self) -> Path | None:
        """Returns the cache directory."""
        return self._cache_dir

    @property
    def is_enabled(self) -> bool:
        """Gets a flag indicating if a cache directory was configured."""
        return self._is_enabled

    @property
    def hits(self) -> int:
        """Number of indexes served from the cache."""
        return self._hits

    @property
    def misses(self) -> int:
        """Number of lookups that found no usable entry."""
        return self._misses

    def initialize(self) -> None:
        """Create the cache directory."""

        if self._is_initialized is True:
            raise RuntimeError("Cache has already been initialized")

        if self._is_enabled is True:
            try:
                self._cache_dir.mkdir(parents=True, exist_ok=True)
            except OSError as error:
                raise CacheError(f"Cannot create cache directory {self._cache_dir}: {error}") from error

        self._is_initialized = True

    def key(self, page_bytes: bytes) -> str:
        """Cache key of a page."""
        digest = hashlib.sha256()
        digest.update(page_bytes)
        digest.update(self._fingerprint.encode("utf-8"))
        digest.update(INDEX_VERSION.to_bytes(2, "little"))

        return digest.hexdigest()

    def load(self, page_bytes: bytes, page_id: str) -> PageIndex | None:
        """Return the cached index of a page, None when absent or unreadable."""

        if self._is_initialized is False:
            raise RuntimeError("Cache has not been initialized")

        if self._is_enabled is False:
            return None

        path = self._path(page_bytes)
        if not path.exists():
            self._misses += 1
            return None

        try:
            index = read_index(path, page_id)
        except (CacheError, OSError) as error:
            _LOGGER.warning("Ignoring cache entry for %s: %s", page_id, error)
            self._misses += 1
            return None

        _LOGGER.debug("Loaded index of %s from %s", page_id, path)
        self._hits += 1

        return index

    def store(self, page_bytes: bytes, index: PageIndex) -> Path | None:
        """Write the index of a page; returns the entry path when caching is enabled."""

        if self._is_initialized is False:
            raise RuntimeError("Cache has not been initialized")

        if self._is_enabled is False:
            return None

        path = self._path(page_bytes)
        partial = path.with_suffix(".tmp")

        try:
            write_index(partial, index)
            partial.replace(path)
        except OSError as error:
            _LOGGER.warning("Could not cache the index of %s: %s", index.page_id, error)
            return None

        return path

    def _path(self, page_bytes: bytes) -> Path:
        return self._cache_dir / f"{self.key(page_bytes)}{SUFFIX}"
