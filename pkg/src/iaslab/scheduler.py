"""Interference-aware scheduling: featurize incoming tasks, generate
candidate task-to-VM assignments by clustering, score candidates with the
fitted runtime model, and commit the lowest predicted makespan.

Hosts carry exactly two VMs because the runtime model is pairwise.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .core import FEATURE_DIM, FeatureVector, Point, RngStream, TaskProfile
from .errors import UnmappedTask
from .fgka import FgkaParams, fgka_run, kmeanspp_baseline
from .predictor import QuadraticInterferenceModel, predict

log = logging.getLogger(__name__)

POLICIES = ("fgka_pp", "kmeans_pp", "round_robin")


@dataclass(frozen=True)
class SchedulerParams:
    """Featurization constants and the candidate pool width.

    kappa1 converts process count to hypervisor CPU percent, kappa2 converts
    megabytes to data-processing CPU percent, kappa4 converts megabytes to a
    cost-rate index. ``top_m`` is how many distinct final-population
    clusterings join the candidate pool.
    """

    kappa1: float = 10.0
    kappa2: float = 0.5
    kappa4: float = 0.01
    top_m: int = 5

    def __post_init__(self):
        for name in ("kappa1", "kappa2", "kappa4"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and > 0")
        if self.top_m < 1:
            raise ValueError("top_m must be >= 1")


_DEFAULT_PARAMS = SchedulerParams()


@dataclass(frozen=True)
class VmDescriptor:
    vm_id: str
    host_id: str
    current_load: FeatureVector = field(default_factory=FeatureVector.zeros)


@dataclass
class Assignment:
    """A total task-to-VM mapping for one batch."""

    mapping: dict[str, str]
    policy_tag: str

    def __post_init__(self):
        if self.policy_tag not in POLICIES:
            raise ValueError(f"unknown policy tag {self.policy_tag!r}")

    def key(self) -> tuple:
        return tuple(sorted(self.mapping.items()))


@dataclass(frozen=True)
class DecisionEntry:
    candidate_index: int
    policy_tag: str
    mapping: dict[str, str]
    predicted_makespan_s: Optional[float]

    def to_dict(self) -> dict:
        return {
            "candidate_index": self.candidate_index,
            "policy_tag": self.policy_tag,
            "mapping": dict(sorted(self.mapping.items())),
            "predicted_makespan_s": self.predicted_makespan_s,
        }


def featurize(task: TaskProfile, params: Optional[SchedulerParams] = None) -> Point:
    """Deterministic map from task attributes to the five load controllers."""
    p = params if params is not None else _DEFAULT_PARAMS
    return Point(
        (
            p.kappa1 * task.process_count,
            p.kappa2 * task.data_size,
            task.io_rate,
            p.kappa4 * task.data_size,
            float(task.process_count),
        )
    )


def aggregate_features(
    tasks: Sequence[TaskProfile], params: Optional[SchedulerParams] = None
) -> FeatureVector:
    """Coordinate-wise sum of the tasks' featurizations; empty gives zeros.

    Sums are exactly rounded, so the result is independent of task order.
    """
    coords = [featurize(t, params).coords for t in tasks]
    return FeatureVector(
        tuple(math.fsum(c[i] for c in coords) for i in range(FEATURE_DIM))
    )


def vms_by_host(vms: Sequence[VmDescriptor]) -> dict[str, list[VmDescriptor]]:
    hosts: dict[str, list[VmDescriptor]] = {}
    for vm in vms:
        hosts.setdefault(vm.host_id, []).append(vm)
    for host_id, group in hosts.items():
        if len(group) != 2:
            raise ValueError(f"host {host_id!r} must carry exactly 2 VMs, has {len(group)}")
    return hosts


def round_robin_assignment(batch: Sequence[TaskProfile], vms: Sequence[VmDescriptor]) -> Assignment:
    return Assignment(
        {task.id: vms[i % len(vms)].vm_id for i, task in enumerate(batch)}, "round_robin"
    )


def _labels_to_assignment(labels, batch, vms, params, tag) -> Assignment:
    """Convert a clustering into an assignment.

    Clusters ordered by aggregate I/O rate descending are matched to VMs
    ordered by current I/O load ascending: the heaviest I/O group lands on
    the least loaded VM. Load ties keep the VM listing order; the matching
    itself is deliberately interference-blind, the model-scored candidate
    pool is what catches bad pairings.
    """
    k = len(vms)
    members: list[list[TaskProfile]] = [[] for _ in range(k)]
    for task, lab in zip(batch, labels):
        members[int(lab)].append(task)
    agg_io = [aggregate_features(m, params).p[2] for m in members]
    cluster_order = sorted(range(k), key=lambda c: (-agg_io[c], c))
    vm_order = sorted(range(k), key=lambda v: (vms[v].current_load.p[2], v))
    mapping: dict[str, str] = {}
    for c, v in zip(cluster_order, vm_order):
        for task in members[c]:
            mapping[task.id] = vms[v].vm_id
    return Assignment(mapping, tag)


def _singleton_candidates(batch, vms, params) -> list[Assignment]:
    """Degenerate pool for batches smaller than the VM count: rotations that
    place every task alone on a distinct VM."""
    v = len(vms)
    out = []
    for shift in range(min(v, params.top_m + 2)):
        out.append(
            Assignment(
                {task.id: vms[(i + shift) % v].vm_id for i, task in enumerate(batch)},
                "round_robin",
            )
        )
    return _dedupe(out)


def _dedupe(candidates: list[Assignment]) -> list[Assignment]:
    seen = set()
    out = []
    for cand in candidates:
        key = cand.key()
        if key not in seen:
            seen.add(key)
            out.append(cand)
    return out


def generate_candidates(
    batch: Sequence[TaskProfile],
    vms: Sequence[VmDescriptor],
    fgka_params: Optional[FgkaParams] = None,
    sched_params: Optional[SchedulerParams] = None,
    rng: Optional[RngStream] = None,
) -> list[Assignment]:
    """Candidate assignments for one batch: the genetic search's best
    solution, its top distinct final-population solutions, and one
    round-robin guard. At most ``top_m + 2`` candidates after dedup."""
    if not batch:
        raise ValueError("batch must be non-empty")
    if not vms:
        raise ValueError("vms must be non-empty")
    sp = sched_params if sched_params is not None else _DEFAULT_PARAMS
    if len(vms) > len(batch):
        # The clustering would raise KTooLarge; fall back to singleton pads.
        return _singleton_candidates(batch, vms, sp)
    points = [featurize(t, sp) for t in batch]
    result = fgka_run(points, len(vms), fgka_params, rng)
    pool = [result.best]
    seen_labels = {tuple(result.best.labels)}
    for sol in sorted(result.final_population, key=lambda s: s.twcv):
        if len(pool) > sp.top_m:
            break
        key = tuple(sol.labels)
        if key not in seen_labels:
            seen_labels.add(key)
            pool.append(sol)
    candidates = [
        _labels_to_assignment(sol.labels, batch, vms, sp, "fgka_pp") for sol in pool
    ]
    candidates.append(round_robin_assignment(batch, vms))
    return _dedupe(candidates)


def _tasks_by_vm(assignment, batch, vms):
    by_vm: dict[str, list[TaskProfile]] = {vm.vm_id: [] for vm in vms}
    for task in batch:
        vm_id = assignment.mapping.get(task.id)
        if vm_id is None:
            raise UnmappedTask(f"task {task.id!r} has no VM in the assignment")
        if vm_id not in by_vm:
            raise UnmappedTask(f"task {task.id!r} mapped to unknown VM {vm_id!r}")
        by_vm[vm_id].append(task)
    return by_vm


def score_assignment(
    assignment: Assignment,
    batch: Sequence[TaskProfile],
    vms: Sequence[VmDescriptor],
    model: QuadraticInterferenceModel,
    sched_params: Optional[SchedulerParams] = None,
) -> float:
    """Predicted makespan of an assignment: per host, the worse of the two
    VM-order predictions over aggregated features; overall, the worst host.
    Lower is better. Negative totals indicate a badly fitted model and are
    clamped to zero with a warning."""
    if not vms:
        raise ValueError("vms must be non-empty")
    sp = sched_params if sched_params is not None else _DEFAULT_PARAMS
    by_vm = _tasks_by_vm(assignment, batch, vms)
    score = -math.inf
    for host_vms in vms_by_host(vms).values():
        vm1, vm2 = host_vms
        f1 = aggregate_features(by_vm[vm1.vm_id], sp) + vm1.current_load
        f2 = aggregate_features(by_vm[vm2.vm_id], sp) + vm2.current_load
        score = max(score, predict(model, f1, f2), predict(model, f2, f1))
    if score < 0.0:
        log.warning("negative predicted makespan %.6g clamped to 0", score)
        return 0.0
    return score


def schedule(
    batch: Sequence[TaskProfile],
    vms: Sequence[VmDescriptor],
    model: QuadraticInterferenceModel,
    fgka_params: Optional[FgkaParams] = None,
    sched_params: Optional[SchedulerParams] = None,
    rng: Optional[RngStream] = None,
) -> tuple[Assignment, list[DecisionEntry]]:
    """Commit the candidate with the lowest predicted makespan.

    Ties break by candidate generation order. The decision report lists
    every scored candidate for audit.
    """
    candidates = generate_candidates(batch, vms, fgka_params, sched_params, rng)
    report = [
        DecisionEntry(i, cand.policy_tag, dict(cand.mapping),
                      score_assignment(cand, batch, vms, model, sched_params))
        for i, cand in enumerate(candidates)
    ]
    best_idx = min(range(len(report)), key=lambda i: (report[i].predicted_makespan_s, i))
    return candidates[best_idx], report


def assignment_for_policy(
    policy: str,
    batch: Sequence[TaskProfile],
    vms: Sequence[VmDescriptor],
    model: Optional[QuadraticInterferenceModel] = None,
    fgka_params: Optional[FgkaParams] = None,
    sched_params: Optional[SchedulerParams] = None,
    rng: Optional[RngStream] = None,
) -> tuple[Assignment, list[DecisionEntry]]:
    """Produce an assignment under one of the three policies.

    ``fgka_pp`` runs the full candidate pool plus model argmin and requires
    a model. ``kmeans_pp`` commits the baseline clustering directly, scoring
    its single candidate for the report when a model is available.
    ``round_robin`` needs no model.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    sp = sched_params if sched_params is not None else _DEFAULT_PARAMS
    if not batch:
        empty = Assignment({}, policy)
        score = score_assignment(empty, [], vms, model, sp) if model is not None else None
        return empty, [DecisionEntry(0, policy, {}, score)]
    if policy == "fgka_pp":
        if model is None:
            raise ValueError("fgka_pp scheduling requires a fitted model")
        return schedule(batch, vms, model, fgka_params, sp, rng)
    if policy == "kmeans_pp":
        if len(vms) > len(batch):
            cand = _singleton_candidates(batch, vms, sp)[0]
            assignment = Assignment(dict(cand.mapping), "kmeans_pp")
        else:
            points = [featurize(t, sp) for t in batch]
            sol = kmeanspp_baseline(points, len(vms), rng)
            assignment = _labels_to_assignment(sol.labels, batch, vms, sp, "kmeans_pp")
    else:
        assignment = round_robin_assignment(batch, vms)
    score = (
        score_assignment(assignment, batch, vms, model, sp) if model is not None else None
    )
    return assignment, [DecisionEntry(0, assignment.policy_tag, dict(assignment.mapping), score)]
