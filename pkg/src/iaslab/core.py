"""Shared domain types, the deterministic RNG contract, and the distance and
centroid primitives every other module builds on.

All types here are immutable values and safe to share across concurrent
experiment trials.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, EmptyCluster

# Number of per-VM load controllers. The runtime model and the featurizer
# are expanded for exactly this many dimensions.
FEATURE_DIM = 5

FILE_KINDS = ("pdf", "image", "text")

_U64_MAX = 2**64 - 1


def _check_finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")
    return value


@dataclass(frozen=True)
class TaskProfile:
    """A schedulable job.

    ``base_runtime`` is the solo execution time in seconds. It is known only
    to the simulator; schedulers must not read it.
    """

    id: str
    file_kind: str
    data_size: float  # megabytes
    process_count: int
    io_rate: float  # requests per second
    arrival_time: float = 0.0  # seconds
    base_runtime: float = 1.0  # seconds, hidden from schedulers

    def __post_init__(self):
        if self.file_kind not in FILE_KINDS:
            raise ValueError(f"unknown file kind {self.file_kind!r}")
        if not (_check_finite("data_size", self.data_size) > 0):
            raise ValueError("data_size must be > 0")
        if int(self.process_count) != self.process_count or self.process_count < 1:
            raise ValueError("process_count must be an integer >= 1")
        if _check_finite("io_rate", self.io_rate) < 0:
            raise ValueError("io_rate must be >= 0")
        if _check_finite("arrival_time", self.arrival_time) < 0:
            raise ValueError("arrival_time must be >= 0")
        if not (_check_finite("base_runtime", self.base_runtime) > 0):
            raise ValueError("base_runtime must be > 0")


@dataclass(frozen=True)
class FeatureVector:
    """The five per-VM load controllers.

    p1: hypervisor CPU utilization (percent of one core)
    p2: application data-processing CPU (percent)
    p3: I/O request rate (requests/second)
    p4: cost-rate load index (INR/second equivalent)
    p5: job count (dimensionless)
    """

    p: tuple[float, float, float, float, float]

    def __post_init__(self):
        values = tuple(float(v) for v in self.p)
        if len(values) != FEATURE_DIM:
            raise DimensionMismatch(
                f"feature vector needs {FEATURE_DIM} entries, got {len(values)}"
            )
        for v in values:
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"feature entries must be finite and >= 0, got {v!r}")
        object.__setattr__(self, "p", values)

    @classmethod
    def zeros(cls) -> "FeatureVector":
        return cls((0.0,) * FEATURE_DIM)

    def as_array(self) -> np.ndarray:
        return np.array(self.p, dtype=float)

    def __add__(self, other: "FeatureVector") -> "FeatureVector":
        return FeatureVector(tuple(a + b for a, b in zip(self.p, other.p)))


@dataclass(frozen=True)
class Point:
    """A clustering pattern: a fixed-length real vector with an optional
    positive weight (default 1, for future duplicate collapsing)."""

    coords: tuple[float, ...]
    weight: float = 1.0

    def __post_init__(self):
        coords = tuple(float(v) for v in self.coords)
        if not coords:
            raise ValueError("point needs at least one coordinate")
        for v in coords:
            _check_finite("coordinate", v)
        if not (_check_finite("weight", self.weight) > 0):
            raise ValueError("weight must be > 0")
        object.__setattr__(self, "coords", coords)

    def as_array(self) -> np.ndarray:
        return np.array(self.coords, dtype=float)


def _hash64(*parts) -> int:
    digest = hashlib.blake2b("/".join(str(p) for p in parts).encode(), digest_size=8)
    return int.from_bytes(digest.digest(), "little")


@dataclass(frozen=True)
class RngStream:
    """Deterministic random stream keyed by ``(seed, stream_id)``.

    Two streams constructed with equal keys produce identical draw sequences.
    Child streams for named operators come from :meth:`substream`, which
    hashes the label into a fresh ``stream_id``, so independent parts of an
    experiment never share draws.
    """

    seed: int
    stream_id: int = 0
    gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if int(v) != v or not (0 <= v <= _U64_MAX):
                raise ValueError(f"{name} must be an unsigned 64-bit integer")
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        object.__setattr__(self, "gen", np.random.default_rng(seq))

    def substream(self, label) -> "RngStream":
        """Derive an independent stream named by ``label`` (str, int, tuple)."""
        return RngStream(self.seed, _hash64(self.stream_id, label))


def euclidean_distance(a: Point, b: Point) -> float:
    """Euclidean distance between two points of equal dimension."""
    if len(a.coords) != len(b.coords):
        raise DimensionMismatch(
            f"points of dimension {len(a.coords)} and {len(b.coords)}"
        )
    return math.dist(a.coords, b.coords)


def centroid(points: list[Point]) -> Point:
    """Weighted coordinate-wise mean of a non-empty point set."""
    if not points:
        raise EmptyCluster("cannot take the centroid of an empty point set")
    dim = len(points[0].coords)
    for p in points:
        if len(p.coords) != dim:
            raise DimensionMismatch("points of mixed dimension")
    total = math.fsum(p.weight for p in points)
    coords = tuple(
        math.fsum(p.weight * p.coords[i] for p in points) / total for i in range(dim)
    )
    return Point(coords)
