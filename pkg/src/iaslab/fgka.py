"""Fast genetic k-means++ clustering and the plain k-means++ baseline.

A solution is a label vector assigning every point to one of ``k`` clusters
(0-based indices). Each generation applies fitness-proportional selection,
distance-based mutation, and one nearest-centroid reassignment step. The
mutation distribution keeps every label reachable with positive probability,
which is what lets the algorithm escape local optima and repopulate empty
clusters.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import Point, RngStream
from .errors import DimensionMismatch, KTooLarge, NonPositiveFitness

# Fitness floor for the degenerate all-equal-points case, where every legal
# solution would otherwise score exactly zero.
FITNESS_FLOOR = 1.0

# Affine shaping constants shared by the mutation distribution; the +0.5
# bias keeps probabilities positive even when all distances are zero.
_SPREAD = 1.5
_BIAS = 0.5


def as_point_array(points) -> tuple[np.ndarray, np.ndarray]:
    """Coerce a point collection to ``(coords (n, d), weights (n,))``.

    Accepts a list of :class:`Point`, a 2-D array, or a list of coordinate
    sequences (unit weights).
    """
    if isinstance(points, np.ndarray):
        X = np.asarray(points, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        return X, np.ones(X.shape[0])
    seq = list(points)
    if not seq:
        raise ValueError("need at least one point")
    if isinstance(seq[0], Point):
        dim = len(seq[0].coords)
        for p in seq:
            if len(p.coords) != dim:
                raise DimensionMismatch("points of mixed dimension")
        X = np.array([p.coords for p in seq], dtype=float)
        w = np.array([p.weight for p in seq], dtype=float)
        return X, w
    X = np.asarray(seq, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X, np.ones(X.shape[0])


def _weighted_centroids(X, w, labels, k):
    """Per-cluster weighted means; empty clusters get NaN rows.

    Returns ``(centroids (k, d), counts (k,))`` where counts are raw
    membership counts (emptiness is about membership, not weight).
    """
    d = X.shape[1]
    centroids = np.full((k, d), np.nan)
    counts = np.bincount(labels, minlength=k)
    wsum = np.bincount(labels, weights=w, minlength=k)
    for j in range(d):
        sums = np.bincount(labels, weights=w * X[:, j], minlength=k)
        nz = wsum > 0
        centroids[nz, j] = sums[nz] / wsum[nz]
    return centroids, counts


def _twcv_from_labels(X, w, labels, k) -> float:
    centroids, counts = _weighted_centroids(X, w, labels, k)
    diffs = X - np.where(np.isnan(centroids), 0.0, centroids)[labels]
    return float(np.sum(w * np.sum(diffs**2, axis=1)))


class ClusterSolution:
    """An immutable label vector plus cached derived state.

    ``twcv`` is the total within-cluster variation (the clustering
    objective); ``legality`` is the fraction of non-empty clusters, and a
    solution is legal when every cluster is populated.
    """

    __slots__ = ("labels", "k", "centroids", "sizes", "twcv", "legality")

    def __init__(self, labels, k: int, points):
        X, w = as_point_array(points)
        labels = np.asarray(labels, dtype=int).copy()
        if labels.shape != (X.shape[0],):
            raise DimensionMismatch("one label per point required")
        if k < 1:
            raise ValueError("k must be >= 1")
        if labels.size and (labels.min() < 0 or labels.max() >= k):
            raise ValueError(f"labels must lie in [0, {k})")
        labels.setflags(write=False)
        centroids, counts = _weighted_centroids(X, w, labels, k)
        centroids.setflags(write=False)
        counts.setflags(write=False)
        self.labels = labels
        self.k = k
        self.centroids = centroids
        self.sizes = counts
        self.twcv = _twcv_from_labels(X, w, labels, k)
        self.legality = float(np.count_nonzero(counts)) / k

    @property
    def is_legal(self) -> bool:
        return self.legality == 1.0

    def __repr__(self):
        return (
            f"ClusterSolution(k={self.k}, twcv={self.twcv:.6g}, "
            f"legality={self.legality:.2f})"
        )


def twcv(solution: ClusterSolution, points) -> float:
    """Recompute the total within-cluster variation from scratch."""
    X, w = as_point_array(points)
    return _twcv_from_labels(X, w, solution.labels, solution.k)


# --------------------------------------------------------------------------
# Seeding


def _dsq_probabilities(min_sqdist: np.ndarray) -> Optional[np.ndarray]:
    """Squared-distance sampling distribution; None when all distances are
    zero (degenerate data, caller falls back to uniform)."""
    total = float(min_sqdist.sum())
    if total <= 0.0:
        return None
    return min_sqdist / total

def kmeanspp_seed(points, k: int, rng: RngStream) -> np.ndarray:
    """Pick ``k`` distinct points as initial centroids.

    The first pick is uniform; each further pick is drawn with probability
    proportional to the squared distance to the nearest centroid chosen so
    far. When every remaining distance is zero (all points identical) the
    pick falls back to uniform sampling among unchosen points.
    """
    X, _ = as_point_array(points)
    n = X.shape[0]
    if k > n:
        raise KTooLarge(f"k={k} clusters for only {n} points")
    if k < 1:
        raise ValueError("k must be >= 1")
    chosen = np.empty(k, dtype=int)
    chosen[0] = rng.gen.integers(n)
    min_sq = np.sum((X - X[chosen[0]]) ** 2, axis=1)
    for i in range(1, k):
        probs = _dsq_probabilities(min_sq)
        if probs is None:
            remaining = np.setdiff1d(np.arange(n), chosen[:i])
            idx = int(rng.gen.choice(remaining))
        else:
            idx = int(rng.gen.choice(n, p=probs))
        chosen[i] = idx
        min_sq = np.minimum(min_sq, np.sum((X - X[idx]) ** 2, axis=1))
    return X[chosen].copy()


def nearest_centroid_labels(points, centroids: np.ndarray) -> np.ndarray:
    """Label every point by its nearest centroid; ties go to the lowest index."""
    X, _ = as_point_array(points)
    d2 = np.sum((X[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
    return np.argmin(d2, axis=1)


# --------------------------------------------------------------------------
# Genetic operators


@dataclass(frozen=True)
class PopulationContext:
    """Per-generation fitness context: the generation's worst TWCV and the
    smallest fitness among its legal solutions (None when all are illegal)."""

    twcv_max: float
    f_min_legal: Optional[float]


def fitness(solution: ClusterSolution, ctx: PopulationContext) -> float:
    """Strictly positive, larger-is-better fitness.

    Legal solutions score ``1.5 * twcv_max - twcv``, floored at
    ``FITNESS_FLOOR`` when the whole generation has zero variation. Illegal
    solutions score their legality fraction times the worst legal fitness,
    which keeps them selectable so mutation can repair them.
    """
    if solution.is_legal:
        f = _SPREAD * ctx.twcv_max - solution.twcv
        return f if f > 0 else FITNESS_FLOOR
    base = ctx.f_min_legal if ctx.f_min_legal is not None else 1.0
    return solution.legality * base


def population_fitness(solutions: Sequence[ClusterSolution]):
    """Fitness values for one generation, plus the context they used."""
    twcv_max = max(s.twcv for s in solutions)
    legal_f = [
        _SPREAD * twcv_max - s.twcv if (_SPREAD * twcv_max - s.twcv) > 0 else FITNESS_FLOOR
        for s in solutions
        if s.is_legal
    ]
    ctx = PopulationContext(twcv_max=twcv_max, f_min_legal=min(legal_f) if legal_f else None)
    return np.array([fitness(s, ctx) for s in solutions]), ctx


@dataclass
class Population:
    """One generation of solutions, their fitness, and the best ever seen."""

    solutions: list[ClusterSolution]
    fitness: np.ndarray
    generation: int
    best_so_far: ClusterSolution
    best_twcv: float

    def __post_init__(self):
        if len(self.solutions) < 2:
            raise ValueError("population needs at least 2 solutions")
        f = np.asarray(self.fitness, dtype=float)
        if f.shape != (len(self.solutions),):
            raise DimensionMismatch("one fitness value per solution")
        if not np.all(np.isfinite(f)) or np.any(f <= 0):
            raise NonPositiveFitness("all fitness values must be finite and > 0")
        self.fitness = f


def selection(pop: Population, rng: RngStream) -> list[ClusterSolution]:
    """Draw the next generation with replacement, each pick proportional to
    fitness."""
    f = np.asarray(pop.fitness, dtype=float)
    if not np.all(np.isfinite(f)) or np.any(f <= 0):
        raise NonPositiveFitness("selection requires strictly positive fitness")
    probs = f / f.sum()
    idx = rng.gen.choice(len(f), size=len(f), replace=True, p=probs)
    return [pop.solutions[i] for i in idx]


def mutation_distribution(x, centroids, k: Optional[int] = None) -> np.ndarray:
    """Label distribution for one point given a centroid snapshot.

    ``centroids`` is a sequence with ``None`` (or a NaN row) marking empty
    clusters, whose distance counts as zero; with ``d`` the distances and
    ``dmax`` their maximum, label j gets weight ``1.5*dmax - d_j + 0.5``.
    Every entry is strictly positive, so any label vector stays reachable.
    """
    if isinstance(x, Point):
        xv = x.as_array()
    else:
        xv = np.asarray(x, dtype=float)
    rows = [np.full_like(xv, np.nan) if c is None else np.asarray(c, dtype=float) for c in centroids]
    C = np.array(rows, dtype=float)
    if k is None:
        k = C.shape[0]
    if C.shape[0] != k or k < 1:
        raise ValueError("need one centroid entry (possibly empty) per cluster")
    empty = np.any(np.isnan(C), axis=1)
    d = np.where(empty, 0.0, np.sqrt(np.sum((np.where(np.isnan(C), 0.0, C) - xv) ** 2, axis=1)))
    numer = _SPREAD * d.max() - d + _BIAS
    return numer / numer.sum()


def _centroid_rows(sol: ClusterSolution):
    """Centroid snapshot as (matrix with zeros at empties, empty mask)."""
    empty = sol.sizes == 0
    C = np.where(np.isnan(sol.centroids), 0.0, sol.centroids)
    return C, empty


def mutate(
    sol: ClusterSolution, points, rng: RngStream, mutation_rate: float = 1.0
) -> ClusterSolution:
    """Resample each label with probability ``mutation_rate`` from the
    distance-based distribution, all against the pre-mutation centroid
    snapshot (the alleles change simultaneously)."""
    if not 0.0 <= mutation_rate <= 1.0:
        raise ValueError("mutation_rate must lie in [0, 1]")
    if mutation_rate == 0.0 or sol.k == 1:
        return sol
    X, _ = as_point_array(points)
    C, empty = _centroid_rows(sol)
    dist = np.sqrt(np.sum((X[:, None, :] - C[None, :, :]) ** 2, axis=2))
    dist[:, empty] = 0.0
    numer = _SPREAD * dist.max(axis=1)[:, None] - dist + _BIAS
    probs = numer / numer.sum(axis=1, keepdims=True)
    u_pick = rng.gen.random(X.shape[0])
    u_label = rng.gen.random(X.shape[0])
    cum = np.cumsum(probs, axis=1)
    resampled = np.minimum((cum < u_label[:, None]).sum(axis=1), sol.k - 1)
    new_labels = np.where(u_pick < mutation_rate, resampled, sol.labels)
    return ClusterSolution(new_labels, sol.k, points)


def kmeans_op(sol: ClusterSolution, points) -> ClusterSolution:
    """One simultaneous nearest-centroid reassignment.

    Centroids come from the pre-step assignment; empty clusters are skipped
    during the nearest search (mutation, not this step, repopulates them).
    Ties break toward the lowest cluster index. Never increases TWCV.
    """
    X, _ = as_point_array(points)
    nonempty = np.flatnonzero(sol.sizes > 0)
    C = sol.centroids[nonempty]
    d2 = np.sum((X[:, None, :] - C[None, :, :]) ** 2, axis=2)
    new_labels = nonempty[np.argmin(d2, axis=1)]
    return ClusterSolution(new_labels, sol.k, points)


# --------------------------------------------------------------------------
# Generation loop


@dataclass
class FgkaParams:
    population_size: int = 20
    max_generations: int = 50
    stall_generations: int = 10
    mutation_rate: float = 1.0  # all alleles mutate each generation
    elitism: bool = False  # best_so_far is tracked regardless

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if self.max_generations < 1 or self.stall_generations < 1:
            raise ValueError("generation counts must be >= 1")
        if not 0.0 <= self.mutation_rate <= 1.0:
            raise ValueError("mutation_rate must lie in [0, 1]")


@dataclass(frozen=True)
class TraceRow:
    generation: int
    best_twcv: float  # best in this generation's population
    mean_twcv: float
    legal_fraction: float


@dataclass
class FgkaResult:
    best: ClusterSolution
    best_twcv: float
    generations_run: int
    trace: list[TraceRow]
    best_history: list[float]  # best_so_far TWCV after each generation
    final_population: list[ClusterSolution]


def write_trace_csv(trace: Sequence[TraceRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["generation", "best_twcv", "mean_twcv", "legal_fraction"])
        for row in trace:
            writer.writerow(
                [row.generation, repr(row.best_twcv), repr(row.mean_twcv), repr(row.legal_fraction)]
            )


def _trace_row(generation: int, solutions: Sequence[ClusterSolution]) -> TraceRow:
    twcvs = [s.twcv for s in solutions]
    return TraceRow(
        generation=generation,
        best_twcv=min(twcvs),
        mean_twcv=float(np.mean(twcvs)),
        legal_fraction=float(np.mean([s.is_legal for s in solutions])),
    )


def fgka_run(
    points,
    k: int,
    params: Optional[FgkaParams] = None,
    rng: Optional[RngStream] = None,
    init_labels: Optional[Sequence[np.ndarray]] = None,
) -> FgkaResult:
    """Run the genetic loop and return the best solution ever observed.

    Initialization seeds each population member with k-means++ followed by a
    single nearest-centroid labeling pass (``init_labels`` overrides this,
    mainly for experiments that start from hand-built populations). The loop
    stops at ``max_generations`` or when the best solution has not improved
    for ``stall_generations`` generations.
    """
    params = params if params is not None else FgkaParams()
    rng = rng if rng is not None else RngStream(0)
    X, _ = as_point_array(points)
    n = X.shape[0]
    if k > n:
        raise KTooLarge(f"k={k} clusters for only {n} points")

    if init_labels is not None:
        solutions = [ClusterSolution(lab, k, points) for lab in init_labels]
        if len(solutions) < 2:
            raise ValueError("init_labels must provide at least 2 solutions")
    else:
        solutions = []
        for _ in range(params.population_size):
            centroids = kmeanspp_seed(points, k, rng)
            solutions.append(ClusterSolution(nearest_centroid_labels(points, centroids), k, points))

    fit, _ctx = population_fitness(solutions)
    best = min(solutions, key=lambda s: s.twcv)
    best_twcv = best.twcv
    trace = [_trace_row(0, solutions)]
    best_history = [best_twcv]
    stall = 0
    generations_run = 0

    for gen in range(1, params.max_generations + 1):
        generations_run = gen
        pop = Population(solutions, fit, gen - 1, best, best_twcv)
        parents = selection(pop, rng)
        children = [
            kmeans_op(mutate(s, points, rng, params.mutation_rate), points) for s in parents
        ]
        if params.elitism:
            worst = max(range(len(children)), key=lambda i: children[i].twcv)
            children[worst] = best
        solutions = children
        fit, _ctx = population_fitness(solutions)

        gen_best = min(solutions, key=lambda s: s.twcv)
        if gen_best.twcv < best_twcv:
            best, best_twcv = gen_best, gen_best.twcv
            stall = 0
        else:
            stall += 1
        trace.append(_trace_row(gen, solutions))
        best_history.append(best_twcv)
        if stall >= params.stall_generations:
            break

    return FgkaResult(
        best=best,
        best_twcv=best_twcv,
        generations_run=generations_run,
        trace=trace,
        best_history=best_history,
        final_population=solutions,
    )


def kmeanspp_baseline(
    points, k: int, rng: Optional[RngStream] = None, max_iters: int = 100
) -> ClusterSolution:
    """k-means++ seeding followed by standard alternating assignment and
    centroid updates until the labels stabilize. TWCV never increases
    across iterations."""
    rng = rng if rng is not None else RngStream(0)
    centroids = kmeanspp_seed(points, k, rng)
    sol = ClusterSolution(nearest_centroid_labels(points, centroids), k, points)
    for _ in range(max_iters):
        nxt = kmeans_op(sol, points)
        if np.array_equal(nxt.labels, sol.labels):
            break
        sol = nxt
    return sol
