"""Deterministic co-location simulator: randomized workload generation,
piecewise execution of assignments under a hidden ground-truth interference
function, and the throughput/time/cost metrics used for policy comparisons.

Interference is pairwise between the two VMs of a host and zero across
hosts. While a task runs, its progress rate is 1 / multiplier where
``multiplier = 1 + interference_scale * g(own features, neighbour features)``
and ``g`` is the world's hidden quadratic model. The hidden model carries no
intercept and no self-only terms, so a task with an idle neighbour runs at
exactly its base runtime.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .core import FILE_KINDS, FeatureVector, RngStream, TaskProfile
from .errors import UnmappedTask
from .fgka import FgkaParams
from .predictor import (
    LMOptions,
    QuadraticInterferenceModel,
    lm_fit,
    predict,
    profile_workloads,
)
from .scheduler import (
    Assignment,
    SchedulerParams,
    VmDescriptor,
    aggregate_features,
    assignment_for_policy,
    round_robin_assignment,
)

COST_INR_PER_SECOND = 1.0

FILE_EXTENSIONS = {"pdf": "pdf", "image": "jpg", "text": "txt"}

PREDICTION_POLICIES = ("fgka_pp", "kmeans_pp")


@dataclass(frozen=True)
class WorkloadSpec:
    """Distribution of one randomized batch of tasks.

    ``base_runtime_rates`` give seconds of solo work per megabyte for each
    file kind. Arrivals are all-at-once by default; "poisson" draws
    exponential inter-arrival gaps at ``arrival_rate`` tasks/second.
    """

    task_count: int = 20
    file_kind_weights: dict = field(
        default_factory=lambda: {"pdf": 1 / 3, "image": 1 / 3, "text": 1 / 3}
    )
    data_size_range: tuple[float, float] = (1.0, 20.0)
    process_count_range: tuple[int, int] = (1, 8)
    io_rate_range: tuple[float, float] = (5.0, 120.0)
    base_runtime_rates: dict = field(
        default_factory=lambda: {"pdf": 0.4, "image": 0.25, "text": 0.1}
    )
    arrival_mode: str = "batch"
    arrival_rate: float = 1.0

    def __post_init__(self):
        if self.task_count < 0:
            raise ValueError("task_count must be >= 0")
        if set(self.file_kind_weights) != set(FILE_KINDS):
            raise ValueError(f"file_kind_weights must cover exactly {FILE_KINDS}")
        weights = [self.file_kind_weights[k] for k in FILE_KINDS]
        if any(w < 0 for w in weights) or sum(weights) <= 0:
            raise ValueError("file kind weights must be >= 0 and sum to > 0")
        for name, (lo, hi) in (
            ("data_size_range", self.data_size_range),
            ("io_rate_range", self.io_rate_range),
        ):
            if not (0 <= lo <= hi) or not math.isfinite(hi):
                raise ValueError(f"{name} must be a non-empty non-negative range")
        if self.data_size_range[0] <= 0:
            raise ValueError("data sizes must be > 0")
        lo, hi = self.process_count_range
        if lo < 1 or hi < lo:
            raise ValueError("process_count_range must be a non-empty range with lo >= 1")
        if set(self.base_runtime_rates) != set(FILE_KINDS):
            raise ValueError(f"base_runtime_rates must cover exactly {FILE_KINDS}")
        if any(r <= 0 for r in self.base_runtime_rates.values()):
            raise ValueError("base runtime rates must be > 0")
        if self.arrival_mode not in ("batch", "poisson"):
            raise ValueError(f"unknown arrival_mode {self.arrival_mode!r}")
        if self.arrival_mode == "poisson" and not self.arrival_rate > 0:
            raise ValueError("arrival_rate must be > 0 for poisson arrivals")


def gen_workload(spec: WorkloadSpec, rng: RngStream) -> list[TaskProfile]:
    """Draw ``task_count`` tasks with independent attributes, deterministic
    for a given stream."""
    n = spec.task_count
    if n == 0:
        return []
    g = rng.gen
    weights = np.array([spec.file_kind_weights[k] for k in FILE_KINDS], dtype=float)
    kinds = g.choice(len(FILE_KINDS), size=n, p=weights / weights.sum())
    sizes = g.uniform(*spec.data_size_range, size=n)
    procs = g.integers(spec.process_count_range[0], spec.process_count_range[1] + 1, size=n)
    ios = g.uniform(*spec.io_rate_range, size=n)
    if spec.arrival_mode == "poisson":
        arrivals = np.cumsum(g.exponential(1.0 / spec.arrival_rate, size=n))
    else:
        arrivals = np.zeros(n)
    tasks = []
    for i in range(n):
        kind = FILE_KINDS[int(kinds[i])]
        tasks.append(
            TaskProfile(
                id=f"job{i:03d}.{FILE_EXTENSIONS[kind]}",
                file_kind=kind,
                data_size=float(sizes[i]),
                process_count=int(procs[i]),
                io_rate=float(ios[i]),
                arrival_time=float(arrivals[i]),
                base_runtime=spec.base_runtime_rates[kind] * float(sizes[i]),
            )
        )
    return tasks


WORKLOAD_CSV_HEADER = ["id", "file_kind", "data_size_mb", "process_count", "io_rate", "arrival_s"]


def write_workload_csv(tasks: Sequence[TaskProfile], path) -> None:
    """Persist a workload. Base runtimes are derived state and never
    serialized where schedulers could read them."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(WORKLOAD_CSV_HEADER)
        for t in tasks:
            writer.writerow(
                [t.id, t.file_kind, repr(t.data_size), t.process_count, repr(t.io_rate), repr(t.arrival_time)]
            )


def read_workload_csv(path, base_runtime_rates: Optional[dict] = None) -> list[TaskProfile]:
    """Load a workload file, re-deriving base runtimes from the per-kind
    seconds-per-megabyte rates (defaults match :class:`WorkloadSpec`)."""
    import csv

    rates = base_runtime_rates if base_runtime_rates is not None else WorkloadSpec().base_runtime_rates
    tasks = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != WORKLOAD_CSV_HEADER:
            raise ValueError(f"unexpected workload CSV header: {header}")
        for row in reader:
            tid, kind, size, procs, io, arrival = row
            tasks.append(
                TaskProfile(
                    id=tid,
                    file_kind=kind,
                    data_size=float(size),
                    process_count=int(procs),
                    io_rate=float(io),
                    arrival_time=float(arrival),
                    base_runtime=rates[kind] * float(size),
                )
            )
    return tasks


@dataclass(frozen=True)
class WorldSpec:
    """Simulated infrastructure plus the hidden interference ground truth.

    The hidden model must have a zero intercept and no self-only terms so
    that an idle neighbour means zero interference; :func:`random_world`
    builds and calibrates such models.
    """

    hosts: int
    hidden_model: QuadraticInterferenceModel
    interference_scale: float = 1.0
    seed: int = 0
    vms_per_host: int = 2

    def __post_init__(self):
        if self.hosts < 1:
            raise ValueError("need at least one host")
        if self.vms_per_host != 2:
            raise ValueError("the interference model is pairwise: exactly 2 VMs per host")
        if not (math.isfinite(self.interference_scale) and self.interference_scale >= 0):
            raise ValueError("interference_scale must be finite and >= 0")
        m = self.hidden_model
        if m.c != 0.0 or np.any(m.alpha[0]) or np.any(m.beta_within[0]) or np.any(m.gamma[0]):
            raise ValueError(
                "hidden model must have zero intercept and zero self-only terms"
            )

    def vm_descriptors(self) -> list[VmDescriptor]:
        return [
            VmDescriptor(vm_id=f"h{h}v{s}", host_id=f"h{h}")
            for h in range(self.hosts)
            for s in range(self.vms_per_host)
        ]


def random_world(
    hosts: int = 2,
    seed: int = 0,
    target_max_multiplier: float = 3.0,
    interference_scale: Optional[float] = None,
    workload_spec: Optional[WorkloadSpec] = None,
    sched_params: Optional[SchedulerParams] = None,
    calibration_tasks: int = 200,
) -> WorldSpec:
    """Build a world with a random non-negative hidden model.

    When ``interference_scale`` is not given, it is calibrated by sampling
    task pairs from the workload distribution so that co-location
    multipliers land in ``[1, target_max_multiplier]``. The range is then
    validated by a fresh sample.
    """
    if not target_max_multiplier > 1.0:
        raise ValueError("target_max_multiplier must be > 1")
    rng = RngStream(seed).substream("world")
    hidden = QuadraticInterferenceModel.random(
        rng.substream("hidden"), scale=1.0, nonnegative=True, interference_only=True
    )
    spec = workload_spec if workload_spec is not None else WorkloadSpec()
    spec = replace(spec, task_count=calibration_tasks, arrival_mode="batch")
    tasks = gen_workload(spec, rng.substream("calibration"))
    feats = [aggregate_features([t], sched_params) for t in tasks]
    pair_rng = rng.substream("pairs").gen
    g_vals = np.array(
        [
            predict(hidden, feats[i], feats[j])
            for i, j in zip(
                pair_rng.integers(len(feats), size=512),
                pair_rng.integers(len(feats), size=512),
            )
        ]
    )
    if interference_scale is None:
        g_max = float(g_vals.max())
        interference_scale = (target_max_multiplier - 1.0) / g_max if g_max > 0 else 0.0
    world = WorldSpec(
        hosts=hosts, hidden_model=hidden, interference_scale=interference_scale, seed=seed
    )
    multipliers = 1.0 + world.interference_scale * g_vals
    if multipliers.min() < 1.0:
        raise ValueError("world validation failed: multiplier below 1 sampled")
    return world


def ground_truth_runtime(
    task: TaskProfile,
    co_resident_tasks: Sequence[TaskProfile],
    world: WorldSpec,
    sched_params: Optional[SchedulerParams] = None,
) -> float:
    """Runtime of ``task`` with the given tasks active on the sibling VM for
    its whole execution. No co-residents means the base runtime exactly."""
    f_self = aggregate_features([task], sched_params)
    f_other = aggregate_features(co_resident_tasks, sched_params)
    g = predict(world.hidden_model, f_self, f_other)
    return task.base_runtime * (1.0 + world.interference_scale * g)


# --------------------------------------------------------------------------
# Execution


@dataclass(frozen=True)
class TaskRecord:
    id: str
    vm_id: str
    start: float
    end: float

    def to_dict(self) -> dict:
        return {"id": self.id, "vm_id": self.vm_id, "start": self.start, "end": self.end}


@dataclass
class SimMetrics:
    completed: int
    makespan: float
    throughput: float
    normalized_throughput: float
    cost: float
    per_task: list[TaskRecord]

    def to_dict(self) -> dict:
        return {
            "completed": self.completed,
            "makespan": self.makespan,
            "throughput": self.throughput,
            "normalized_throughput": self.normalized_throughput,
            "cost": self.cost,
            "per_task": [r.to_dict() for r in self.per_task],
        }


class _Running:
    __slots__ = ("task", "features", "remaining", "multiplier", "piece_start", "start", "pieces")

    def __init__(self, task: TaskProfile, features: FeatureVector, now: float):
        self.task = task
        self.features = features
        self.remaining = task.base_runtime  # seconds of solo-equivalent work
        self.multiplier = 1.0
        self.piece_start = now
        self.start = now
        self.pieces: list[tuple[float, float, float]] = []  # (t0, t1, multiplier)

    def settle(self, now: float) -> None:
        if now > self.piece_start:
            self.remaining -= (now - self.piece_start) / self.multiplier
            self.pieces.append((self.piece_start, now, self.multiplier))
            self.piece_start = now

    def projected_finish(self) -> float:
        return self.piece_start + self.remaining * self.multiplier


def _multiplier(world, own: FeatureVector, partner: Optional[_Running]) -> float:
    if partner is None:
        return 1.0
    g = predict(world.hidden_model, own, partner.features)
    return 1.0 + world.interference_scale * g


def _simulate_host(queues, world, sched_params, vm_ids):
    """Run one host's two FIFO queues to completion.

    Partner changes re-price the running tasks: progress made so far is
    settled at the old multiplier and the remainder continues at the new
    one. Records keep the piecewise trace for conservation checks.
    """
    feats = {
        t.id: aggregate_features([t], sched_params) for q in queues for t in q
    }
    qpos = [0, 0]
    running: list[Optional[_Running]] = [None, None]
    now = 0.0
    records = []

    def refresh_multipliers():
        for slot in (0, 1):
            rt = running[slot]
            if rt is None:
                continue
            m = _multiplier(world, rt.features, running[1 - slot])
            if m != rt.multiplier:
                rt.settle(now)
                rt.multiplier = m

    while True:
        started = False
        for slot in (0, 1):
            while (
                running[slot] is None
                and qpos[slot] < len(queues[slot])
                and queues[slot][qpos[slot]].arrival_time <= now
            ):
                task = queues[slot][qpos[slot]]
                qpos[slot] += 1
                running[slot] = _Running(task, feats[task.id], now)
                started = True
        if started:
            refresh_multipliers()

        events = []
        for slot in (0, 1):
            if running[slot] is not None:
                events.append(running[slot].projected_finish())
            elif qpos[slot] < len(queues[slot]):
                events.append(queues[slot][qpos[slot]].arrival_time)
        if not events:
            break
        now = min(events)

        finished = False
        for slot in (0, 1):
            rt = running[slot]
            if rt is not None and rt.projected_finish() <= now:
                rt.pieces.append((rt.piece_start, now, rt.multiplier))
                records.append((TaskRecord(rt.task.id, vm_ids[slot], rt.start, now), rt.pieces))
                running[slot] = None
                finished = True
        if finished:
            refresh_multipliers()
    return records


def _execute(assignment: Assignment, tasks: Sequence[TaskProfile], world, sched_params):
    vms = world.vm_descriptors()
    slot_of = {vm.vm_id: (i // 2, i % 2) for i, vm in enumerate(vms)}
    task_ids = {t.id for t in tasks}
    for tid in assignment.mapping:
        if tid not in task_ids:
            raise UnmappedTask(f"assignment references unknown task {tid!r}")
    queues = [[[], []] for _ in range(world.hosts)]
    for task in tasks:
        vm_id = assignment.mapping.get(task.id)
        if vm_id is None:
            raise UnmappedTask(f"task {task.id!r} is not mapped to any VM")
        if vm_id not in slot_of:
            raise UnmappedTask(f"task {task.id!r} mapped to unknown VM {vm_id!r}")
        host, slot = slot_of[vm_id]
        queues[host][slot].append(task)
    all_records = []
    for h in range(world.hosts):
        vm_ids = (vms[2 * h].vm_id, vms[2 * h + 1].vm_id)
        all_records.extend(_simulate_host(queues[h], world, sched_params, vm_ids))
    all_records.sort(key=lambda rp: (rp[0].start, rp[0].vm_id, rp[0].id))
    return all_records


def _cost_of(makespan: float) -> float:
    return round(makespan * COST_INR_PER_SECOND, 2)


def compute_cost(metrics: SimMetrics) -> float:
    """Usage cost in INR at 1 INR per second of makespan, to 2 decimals."""
    return _cost_of(metrics.makespan)


def run_sim(
    assignment: Assignment,
    tasks: Sequence[TaskProfile],
    world: WorldSpec,
    sched_params: Optional[SchedulerParams] = None,
) -> SimMetrics:
    """Execute an assignment and fill every metric.

    Each VM runs its queue FIFO in batch order; a task's interference
    partner is whatever runs on the sibling VM, re-priced at every start or
    finish. Normalized throughput is measured against a round-robin run of
    the same tasks on the same world.
    """
    records = _execute(assignment, tasks, world, sched_params)
    per_task = [r for r, _pieces in records]
    completed = len(per_task)
    makespan = max((r.end for r in per_task), default=0.0)
    throughput = completed / makespan if makespan > 0 else 0.0

    reference = round_robin_assignment(tasks, world.vm_descriptors())
    if reference.mapping == assignment.mapping:
        normalized = 1.0
    else:
        ref_records = _execute(reference, tasks, world, sched_params)
        ref_makespan = max((r.end for r, _p in ref_records), default=0.0)
        ref_throughput = len(ref_records) / ref_makespan if ref_makespan > 0 else 0.0
        normalized = throughput / ref_throughput if ref_throughput > 0 else 1.0

    return SimMetrics(
        completed=completed,
        makespan=makespan,
        throughput=throughput,
        normalized_throughput=normalized,
        cost=_cost_of(makespan),
        per_task=per_task,
    )


# --------------------------------------------------------------------------
# Policy comparison experiment


@dataclass
class TrialOutcome:
    trial: int
    tasks: list[TaskProfile]
    assignments: dict[str, dict[str, str]]  # policy -> mapping
    metrics: dict[str, SimMetrics]  # policy -> metrics


@dataclass
class PolicySummary:
    policy: str
    median_makespan: float
    iqr_makespan: float
    median_throughput: float
    iqr_throughput: float
    median_normalized_throughput: float
    median_cost: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ComparisonResult:
    trials: list[TrialOutcome]
    summaries: dict[str, PolicySummary]
    time_improvement_ratio: Optional[float]  # kmeans_pp median time / fgka_pp median time
    throughput_improvement: Optional[float]  # fgka_pp - kmeans_pp normalized medians
    fit_report: Optional[dict] = None

    def to_dict(self) -> dict:
        return {
            "summaries": {p: s.to_dict() for p, s in sorted(self.summaries.items())},
            "time_improvement_ratio": self.time_improvement_ratio,
            "throughput_improvement": self.throughput_improvement,
            "fit_report": self.fit_report,
            "trials": [
                {
                    "trial": t.trial,
                    "assignments": {
                        p: dict(sorted(m.items())) for p, m in sorted(t.assignments.items())
                    },
                    "metrics": {p: m.to_dict() for p, m in sorted(t.metrics.items())},
                }
                for t in self.trials
            ],
        }


def _queue_profile_samples(
    world: WorldSpec,
    workload_spec: WorkloadSpec,
    rng: RngStream,
    sched_params: Optional[SchedulerParams],
    count: int,
) -> list:
    """Queue-level profiling: random mini-batches split over one host's two
    VMs, observed to completion. Each run yields one sample per non-empty
    queue whose target is that queue's completion time given the sibling
    queue's aggregate features, which is exactly the quantity the scheduler
    asks the model for."""
    from .predictor import ProfileSample

    one_host = WorldSpec(
        hosts=1,
        hidden_model=world.hidden_model,
        interference_scale=world.interference_scale,
        seed=world.seed,
    )
    vms = one_host.vm_descriptors()
    samples = []
    for q in range(count):
        n = int(rng.gen.integers(2, 15))
        batch = gen_workload(
            replace(workload_spec, task_count=n, arrival_mode="batch"),
            rng.substream(("batch", q)),
        )
        split = rng.gen.integers(0, 2, size=n)
        assignment = Assignment(
            {t.id: vms[int(s)].vm_id for t, s in zip(batch, split)}, "round_robin"
        )
        records = _execute(assignment, batch, one_host, sched_params)
        ends = {vm.vm_id: 0.0 for vm in vms}
        for rec, _pieces in records:
            ends[rec.vm_id] = max(ends[rec.vm_id], rec.end)
        feats = {
            vm.vm_id: aggregate_features(
                [t for t, s in zip(batch, split) if vms[int(s)].vm_id == vm.vm_id],
                sched_params,
            )
            for vm in vms
        }
        for vm, sibling in ((vms[0], vms[1]), (vms[1], vms[0])):
            if ends[vm.vm_id] > 0:
                samples.append(
                    ProfileSample(feats[vm.vm_id], feats[sibling.vm_id], ends[vm.vm_id])
                )
    return samples


def fit_from_profiling(
    world: WorldSpec,
    workload_spec: WorkloadSpec,
    rng: RngStream,
    lm_opts: Optional[LMOptions] = None,
    sched_params: Optional[SchedulerParams] = None,
    app_tasks: int = 24,
    background_tasks: int = 24,
    queue_profiles: int = 400,
):
    """Fit a runtime model from scratch by profiling the world.

    Every app task is measured against every background workload; when
    ``queue_profiles`` is nonzero, queue-level samples are mixed in so the
    model also sees the aggregate feature ranges the scheduler scores."""
    app_spec = replace(workload_spec, task_count=app_tasks, arrival_mode="batch")
    bg_spec = replace(workload_spec, task_count=background_tasks, arrival_mode="batch")
    apps = gen_workload(app_spec, rng.substream("profile-apps"))
    bgs = gen_workload(bg_spec, rng.substream("profile-backgrounds"))
    samples = []
    for app in apps:
        samples.extend(profile_workloads(app, bgs, world, sched_params))
    if queue_profiles:
        samples.extend(
            _queue_profile_samples(
                world, workload_spec, rng.substream("profile-queues"), sched_params, queue_profiles
            )
        )
    return lm_fit(samples, opts=lm_opts), samples


def ab_experiment(
    workload_spec: WorkloadSpec,
    world: WorldSpec,
    policies: Sequence[str] = ("fgka_pp", "kmeans_pp", "round_robin"),
    model: Optional[QuadraticInterferenceModel] = None,
    trials: int = 30,
    rng: Optional[RngStream] = None,
    fgka_params: Optional[FgkaParams] = None,
    sched_params: Optional[SchedulerParams] = None,
    lm_opts: Optional[LMOptions] = None,
    jobs: int = 1,
    app_tasks: int = 24,
    background_tasks: int = 24,
    queue_profiles: int = 400,
) -> ComparisonResult:
    """Compare policies over seeded trials on fresh workloads.

    Fits the model from profiling runs when none is supplied and a
    prediction-based policy is requested. Trials may run on worker threads;
    results merge in trial order, so the outcome is independent of ``jobs``.
    """
    rng = rng if rng is not None else RngStream(0)
    fit_report = None
    if model is None and any(p in PREDICTION_POLICIES for p in policies):
        (model, report), _samples = fit_from_profiling(
            world,
            workload_spec,
            rng.substream("profile-fit"),
            lm_opts,
            sched_params,
            app_tasks=app_tasks,
            background_tasks=background_tasks,
            queue_profiles=queue_profiles,
        )
        fit_report = report.to_dict()

    vms = world.vm_descriptors()

    def run_trial(t: int) -> TrialOutcome:
        trial_rng = rng.substream(("trial", t))
        tasks = gen_workload(workload_spec, trial_rng.substream("workload"))
        assignments = {}
        metrics = {}
        for policy in policies:
            a, _report = assignment_for_policy(
                policy, tasks, vms, model, fgka_params, sched_params,
                trial_rng.substream(("policy", policy)),
            )
            assignments[policy] = dict(a.mapping)
            metrics[policy] = run_sim(a, tasks, world, sched_params)
        return TrialOutcome(t, tasks, assignments, metrics)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(run_trial, range(trials)))
    else:
        outcomes = [run_trial(t) for t in range(trials)]

    summaries = {}
    for policy in policies:
        mk = np.array([o.metrics[policy].makespan for o in outcomes]) if outcomes else np.array([0.0])
        thr = np.array([o.metrics[policy].throughput for o in outcomes]) if outcomes else np.array([0.0])
        norm = (
            np.array([o.metrics[policy].normalized_throughput for o in outcomes])
            if outcomes
            else np.array([0.0])
        )
        summaries[policy] = PolicySummary(
            policy=policy,
            median_makespan=float(np.median(mk)),
            iqr_makespan=float(np.percentile(mk, 75) - np.percentile(mk, 25)),
            median_throughput=float(np.median(thr)),
            iqr_throughput=float(np.percentile(thr, 75) - np.percentile(thr, 25)),
            median_normalized_throughput=float(np.median(norm)),
            median_cost=_cost_of(float(np.median(mk))),
        )

    ratio = None
    thr_improvement = None
    if "fgka_pp" in summaries and "kmeans_pp" in summaries:
        fgka_time = summaries["fgka_pp"].median_makespan
        if fgka_time > 0:
            ratio = summaries["kmeans_pp"].median_makespan / fgka_time
        thr_improvement = (
            summaries["fgka_pp"].median_normalized_throughput
            - summaries["kmeans_pp"].median_normalized_throughput
        )

    return ComparisonResult(
        trials=outcomes,
        summaries=summaries,
        time_improvement_ratio=ratio,
        throughput_improvement=thr_improvement,
        fit_report=fit_report,
    )
