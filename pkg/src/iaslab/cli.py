"""Command-line entry point.

Subcommands: ``gen`` (write a workload file), ``profile-fit`` (profile the
world and fit the runtime model), ``schedule-run`` (schedule one batch under
a policy and simulate it), ``compare`` (the full policy comparison with
paper-style tables), ``cluster`` (run the genetic clustering on a CSV of
points).

Exit codes: 0 success, 2 configuration error, 3 data error (insufficient or
degenerate data, missing model), 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import fgka as fgka_mod
from . import predictor, sim
from .config import ExperimentConfig, load_config, make_world
from .core import RngStream
from .errors import (
    ConfigError,
    DegenerateDesign,
    InsufficientData,
    KTooLarge,
    ModelNotFound,
    NonPositiveFitness,
    UnmappedTask,
)
from .scheduler import POLICIES, assignment_for_policy, featurize

POLICY_LABELS = {
    "kmeans_pp": "K-means ++",
    "fgka_pp": "Fast Genetic K-means ++",
    "round_robin": "Round Robin",
}

_DATA_ERRORS = (
    InsufficientData,
    DegenerateDesign,
    ModelNotFound,
    UnmappedTask,
    KTooLarge,
    NonPositiveFitness,
)


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _stamped(doc: dict, args) -> dict:
    if not args.no_timestamp:
        doc = dict(doc)
        doc["generated_at"] = datetime.now(timezone.utc).isoformat()
    return doc


def _resolve_config(args) -> ExperimentConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output_dir"] = args.out
    import os

    return load_config(args.config, overrides, env=os.environ)


def _outdir(config: ExperimentConfig, experiment: str) -> Path:
    path = Path(config.output_dir) / experiment
    path.mkdir(parents=True, exist_ok=True)
    return path


def _echo_config(config: ExperimentConfig, outdir: Path) -> None:
    _write_json(outdir / "resolved_config.json", config.to_dict())


# --------------------------------------------------------------------------
# Commands


def cmd_gen(args) -> int:
    config = _resolve_config(args)
    outdir = _outdir(config, "gen")
    tasks = sim.gen_workload(config.workload, RngStream(config.seed).substream("workload"))
    sim.write_workload_csv(tasks, outdir / "workload.csv")
    _echo_config(config, outdir)
    print(f"wrote {len(tasks)} tasks to {outdir / 'workload.csv'}")
    return 0


def cmd_profile_fit(args) -> int:
    config = _resolve_config(args)
    outdir = _outdir(config, "profile_fit")
    world = make_world(config)
    (model, report), samples = sim.fit_from_profiling(
        world,
        config.workload,
        RngStream(config.seed).substream("profile-fit"),
        config.lm,
        config.scheduler,
        app_tasks=config.profile_apps,
        background_tasks=config.profile_backgrounds,
        queue_profiles=config.profile_queues,
    )
    predictor.write_profile_csv(samples, outdir / "profile.csv")
    _write_json(outdir / "model.json", _stamped(predictor.model_to_dict(model), args))
    _write_json(outdir / "fit_report.json", _stamped(report.to_dict(), args))
    _echo_config(config, outdir)
    print(
        f"fitted {len(samples)} samples: sse={report.final_sse:.6g} "
        f"({report.termination} after {report.iterations} iterations)"
    )
    return 0


def _load_model_for(args, config: ExperimentConfig, policy: str):
    if policy not in sim.PREDICTION_POLICIES:
        return None
    model_path = Path(args.model) if args.model else Path(config.output_dir) / "profile_fit" / "model.json"
    if not model_path.exists():
        raise ModelNotFound(
            f"policy {policy!r} needs a fitted model; run profile-fit first "
            f"(looked at {model_path})"
        )
    return predictor.load_model(model_path)


def cmd_schedule_run(args) -> int:
    config = _resolve_config(args)
    policy = args.policy
    outdir = _outdir(config, "schedule_run") / policy
    outdir.mkdir(parents=True, exist_ok=True)
    world = make_world(config)
    if args.workload:
        tasks = sim.read_workload_csv(args.workload, config.workload.base_runtime_rates)
    else:
        tasks = sim.gen_workload(config.workload, RngStream(config.seed).substream("workload"))
    model = _load_model_for(args, config, policy)
    assignment, report = assignment_for_policy(
        policy,
        tasks,
        world.vm_descriptors(),
        model,
        config.fgka,
        config.scheduler,
        RngStream(config.seed).substream(("schedule", policy)),
    )
    metrics = sim.run_sim(assignment, tasks, world, config.scheduler)
    _write_json(
        outdir / "assignment.json",
        _stamped({"policy": policy, "mapping": dict(sorted(assignment.mapping.items()))}, args),
    )
    _write_json(outdir / "decision_report.json", [e.to_dict() for e in report])
    _write_json(outdir / "metrics.json", _stamped(metrics.to_dict(), args))
    _echo_config(config, outdir)
    print(
        f"{policy}: makespan={metrics.makespan:.3f}s throughput={metrics.throughput:.4f} "
        f"cost=INR {metrics.cost:.2f}"
    )
    return 0


def _cpu_utilization_rows(trial: sim.TrialOutcome, policy: str, sched_params):
    """Per-job CPU utilization proxy for the placement table: the job's
    combined hypervisor and data-processing CPU demand times its measured
    runtime (CPU-percent-seconds)."""
    durations = {r.id: r.end - r.start for r in trial.metrics[policy].per_task}
    rows = []
    for task in trial.tasks:
        feats = featurize(task, sched_params)
        cpu = (feats.coords[0] + feats.coords[1]) * durations.get(task.id, 0.0)
        rows.append((task.id, cpu, trial.assignments[policy].get(task.id, "")))
    return rows


def _render_tables(result: sim.ComparisonResult, config: ExperimentConfig, outdir: Path):
    policies = list(result.summaries)
    lines = [f"Policy comparison over {len(result.trials)} trials (seed {config.seed})", ""]

    # Table 1: placement and CPU utilization, first trial.
    lines.append("Table 1: Scheduling tasks to VMs with CPU utilization")
    with open(outdir / "table1.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["policy", "job_name", "cpu_utilization", "vm_id"])
        if result.trials:
            trial = result.trials[0]
            for policy in policies:
                lines.append(f"  {POLICY_LABELS[policy]}")
                lines.append("    Job Name | CPU Utilization | VM Id")
                for job, cpu, vm in _cpu_utilization_rows(trial, policy, config.scheduler):
                    writer.writerow([policy, job, f"{cpu:.2f}", vm])
                    lines.append(f"    {job} | {cpu:.2f} | {vm}")
    lines.append("")

    # Table 2: normalized throughput comparison.
    lines.append("Table 2: Throughput Comparison")
    with open(outdir / "table2.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["technique", "kmeans_pp", "fgka_pp", "improved_throughput"])
        if "kmeans_pp" in result.summaries and "fgka_pp" in result.summaries:
            km = result.summaries["kmeans_pp"].median_normalized_throughput
            fg = result.summaries["fgka_pp"].median_normalized_throughput
            writer.writerow(["achieved_throughput", f"{km:.4f}", f"{fg:.4f}", f"{fg - km:.4f}"])
            lines.append("  Technique | K-means ++ | Fast Genetic K-means ++ | Improved Throughput")
            lines.append(f"  Achieved Throughput | {km:.4f} | {fg:.4f} | {fg - km:.4f}")
            lines.append("  note: improved throughput is the difference of normalized medians")
    lines.append("")

    # Table 3: time and cost.
    lines.append("Table 3: Comparison of Time and Cost")
    lines.append("  Technique | Time (Sec) | Cost (Rs)")
    with open(outdir / "table3.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["technique", "time_s", "cost_inr"])
        for policy in ("kmeans_pp", "fgka_pp", "round_robin"):
            if policy not in result.summaries:
                continue
            s = result.summaries[policy]
            writer.writerow([policy, f"{s.median_makespan:g}", f"{s.median_cost:.2f}"])
            lines.append(
                f"  {POLICY_LABELS[policy]} | {s.median_makespan:g} | {s.median_cost:.2f}"
            )
    if result.time_improvement_ratio is not None:
        lines.append("")
        lines.append(
            f"time improvement ratio (K-means ++ / Fast Genetic K-means ++): "
            f"{result.time_improvement_ratio:.3f}"
        )
    (outdir / "report.txt").write_text("\n".join(lines) + "\n")
    return lines


def cmd_compare(args) -> int:
    config = _resolve_config(args)
    outdir = _outdir(config, "compare")
    world = make_world(config)
    policies = [args.policy] if args.policy else list(POLICIES)
    model = None
    if args.model:
        model = predictor.load_model(args.model)
    result = sim.ab_experiment(
        config.workload,
        world,
        policies=policies,
        model=model,
        trials=config.trials,
        rng=RngStream(config.seed).substream("compare"),
        fgka_params=config.fgka,
        sched_params=config.scheduler,
        lm_opts=config.lm,
        jobs=args.jobs,
        app_tasks=config.profile_apps,
        background_tasks=config.profile_backgrounds,
        queue_profiles=config.profile_queues,
    )
    for trial in result.trials:
        trial_dir = outdir / f"trial_{trial.trial:03d}"
        trial_dir.mkdir(parents=True, exist_ok=True)
        for policy in policies:
            _write_json(
                trial_dir / f"{policy}.json",
                {
                    "assignment": dict(sorted(trial.assignments[policy].items())),
                    "metrics": trial.metrics[policy].to_dict(),
                },
            )
    _write_json(outdir / "comparison.json", _stamped(result.to_dict(), args))
    lines = _render_tables(result, config, outdir)
    _echo_config(config, outdir)
    print("\n".join(lines))
    return 0


def _read_points_csv(path: Path):
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if row:
                rows.append(row)
    if not rows:
        raise InsufficientData(f"no points in {path}")
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        rows = rows[1:]  # header row
    if not rows:
        raise InsufficientData(f"no data rows in {path}")
    points = [tuple(float(c) for c in row) for row in rows]
    dims = {len(p) for p in points}
    if len(dims) != 1:
        raise ConfigError(f"{path} holds rows of mixed width {sorted(dims)}")
    return points


def cmd_cluster(args) -> int:
    config = _resolve_config(args)
    outdir = _outdir(config, "cluster")
    points = _read_points_csv(Path(args.input))
    result = fgka_mod.fgka_run(
        points, args.k, config.fgka, RngStream(config.seed).substream("cluster")
    )
    with open(outdir / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "label"])
        for i, label in enumerate(result.best.labels):
            writer.writerow([i, int(label)])
    fgka_mod.write_trace_csv(result.trace, outdir / "trace.csv")
    _echo_config(config, outdir)
    print(
        f"clustered {len(points)} points into k={args.k}: twcv={result.best_twcv:.6g} "
        f"({result.generations_run} generations)"
    )
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", default=None, help="JSON config file")
    common.add_argument("--seed", type=int, default=None, help="experiment seed override")
    common.add_argument("--out", metavar="DIR", default=None, help="output directory override")
    common.add_argument("--jobs", type=int, default=1, help="worker threads for trials")
    common.add_argument(
        "--no-timestamp", action="store_true", help="omit generated_at fields for byte-stable output"
    )

    parser = argparse.ArgumentParser(
        prog="iaslab", description="Interference-aware scheduling laboratory"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate a workload CSV")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser(
        "profile-fit", parents=[common], help="profile co-locations and fit the runtime model"
    )
    p.set_defaults(func=cmd_profile_fit)

    p = sub.add_parser(
        "schedule-run", parents=[common], help="schedule one batch under a policy and simulate it"
    )
    p.add_argument("--policy", choices=POLICIES, required=True)
    p.add_argument("--model", metavar="PATH", default=None, help="fitted model file")
    p.add_argument("--workload", metavar="PATH", default=None, help="workload CSV to schedule")
    p.set_defaults(func=cmd_schedule_run)

    p = sub.add_parser("compare", parents=[common], help="run the policy comparison experiment")
    p.add_argument("--policy", choices=POLICIES, default=None, help="restrict to one policy")
    p.add_argument("--model", metavar="PATH", default=None, help="reuse a fitted model file")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("cluster", parents=[common], help="run the genetic clustering on a CSV of points")
    p.add_argument("--input", metavar="PATH", required=True, help="CSV of points, one row per point")
    p.add_argument("--k", type=int, required=True, help="number of clusters")
    p.set_defaults(func=cmd_cluster)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        path = getattr(exc, "filename", None)
        print(f"io error{f' ({path})' if path else ''}: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
