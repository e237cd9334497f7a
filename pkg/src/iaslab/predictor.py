"""Two-VM quadratic runtime model: design-row expansion, prediction,
Levenberg-Marquardt fitting, profiling-data generation, and model
serialization.

The model predicts the runtime of an application on one VM from the load
controllers of both VMs sharing a host:

    y = c
      + sum_i alpha1_i * a_i  +  sum_i alpha2_i * b_i
      + sum_ij beta_cross_ij * a_i * b_j
      + sum_{i<j} beta_within1_ij * a_i * a_j
      + sum_{i<j} beta_within2_ij * b_i * b_j
      + sum_i gamma1_i * a_i**2  +  sum_i gamma2_i * b_i**2

with a = VM1 features and b = VM2 features. Only the strict ``i < j``
within-VM pairs and a single cross block are kept: the transposed cross
block and the ``i = j`` within-VM diagonal duplicate other terms and would
make least squares rank deficient. That leaves 66 identifiable parameters:
1 + 5 + 5 + 25 + 10 + 10 + 5 + 5.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .core import FEATURE_DIM, FeatureVector, RngStream, TaskProfile
from .errors import (
    DegenerateDesign,
    DimensionMismatch,
    InsufficientData,
    SingularSystem,
)

# Strict upper-triangle index pairs, lexicographic: (0,1), (0,2), ... (3,4).
PAIR_INDICES = tuple(
    (i, j) for i in range(FEATURE_DIM) for j in range(i + 1, FEATURE_DIM)
)
_PAIR_I = np.array([p[0] for p in PAIR_INDICES])
_PAIR_J = np.array([p[1] for p in PAIR_INDICES])

N_COEFFS = 1 + 2 * FEATURE_DIM + FEATURE_DIM**2 + 2 * len(PAIR_INDICES) + 2 * FEATURE_DIM

FLATTENING_ORDER = (
    "c|alpha_vm1|alpha_vm2|beta_cross_row_major|"
    "beta_within_vm1_pairs|beta_within_vm2_pairs|gamma_vm1|gamma_vm2"
)

MODEL_SCHEMA_VERSION = 1

# Damping bounds for the fit loop. Raising lambda past the cap means no
# step can be accepted and the fit stalls.
_LAMBDA_MAX = 1e12
_LAMBDA_MIN = 1e-15


def _as_features(f) -> np.ndarray:
    if isinstance(f, FeatureVector):
        return f.as_array()
    arr = np.asarray(f, dtype=float)
    if arr.shape != (FEATURE_DIM,):
        raise DimensionMismatch(f"expected {FEATURE_DIM} features, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("features must be finite")
    return arr


def _readonly(arr: np.ndarray, shape: tuple[int, ...], name: str) -> np.ndarray:
    out = np.array(arr, dtype=float)
    if out.shape != shape:
        raise DimensionMismatch(f"{name} must have shape {shape}, got {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} must be finite")
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class QuadraticInterferenceModel:
    """The 66 coefficients of the two-VM quadratic runtime model.

    The flattening order is fixed (see ``FLATTENING_ORDER``) and round-trips
    through JSON bit-exactly.
    """

    c: float
    alpha: np.ndarray  # (2, 5): linear terms for VM1 and VM2
    beta_cross: np.ndarray  # (5, 5): VM1_i * VM2_j products
    beta_within: np.ndarray  # (2, 10): strict i<j pairs within each VM
    gamma: np.ndarray  # (2, 5): pure squares

    def __post_init__(self):
        object.__setattr__(self, "c", float(self.c))
        if not math.isfinite(self.c):
            raise ValueError("intercept must be finite")
        object.__setattr__(self, "alpha", _readonly(self.alpha, (2, FEATURE_DIM), "alpha"))
        object.__setattr__(
            self, "beta_cross", _readonly(self.beta_cross, (FEATURE_DIM, FEATURE_DIM), "beta_cross")
        )
        object.__setattr__(
            self, "beta_within", _readonly(self.beta_within, (2, len(PAIR_INDICES)), "beta_within")
        )
        object.__setattr__(self, "gamma", _readonly(self.gamma, (2, FEATURE_DIM), "gamma"))
        flat = np.concatenate(
            [
                [self.c],
                self.alpha[0],
                self.alpha[1],
                self.beta_cross.ravel(),
                self.beta_within[0],
                self.beta_within[1],
                self.gamma[0],
                self.gamma[1],
            ]
        )
        flat.setflags(write=False)
        object.__setattr__(self, "_flat", flat)

    @classmethod
    def zeros(cls) -> "QuadraticInterferenceModel":
        return cls.from_flat(np.zeros(N_COEFFS))

    @classmethod
    def from_flat(cls, theta) -> "QuadraticInterferenceModel":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (N_COEFFS,):
            raise DimensionMismatch(f"expected {N_COEFFS} coefficients, got {theta.shape}")
        d, q = FEATURE_DIM, len(PAIR_INDICES)
        pos = 1
        alpha = theta[pos : pos + 2 * d].reshape(2, d)
        pos += 2 * d
        beta_cross = theta[pos : pos + d * d].reshape(d, d)
        pos += d * d
        beta_within = theta[pos : pos + 2 * q].reshape(2, q)
        pos += 2 * q
        gamma = theta[pos : pos + 2 * d].reshape(2, d)
        return cls(theta[0], alpha, beta_cross, beta_within, gamma)

    @classmethod
    def random(
        cls,
        rng: RngStream,
        scale: float = 1.0,
        nonnegative: bool = False,
        interference_only: bool = False,
    ) -> "QuadraticInterferenceModel":
        """Random coefficients, for synthetic ground truths.

        ``interference_only`` zeroes the intercept and every term that does
        not involve the co-resident VM, so the model vanishes when the
        neighbour is idle.
        """
        if nonnegative:
            theta = rng.gen.uniform(0.0, scale, N_COEFFS)
        else:
            theta = rng.gen.normal(0.0, scale, N_COEFFS)
        model = cls.from_flat(theta)
        if interference_only:
            model = replace(
                model,
                c=0.0,
                alpha=np.stack([np.zeros(FEATURE_DIM), model.alpha[1]]),
                beta_within=np.stack([np.zeros(len(PAIR_INDICES)), model.beta_within[1]]),
                gamma=np.stack([np.zeros(FEATURE_DIM), model.gamma[1]]),
            )
        return model

    def flatten(self) -> np.ndarray:
        """Coefficients in the canonical order (read-only view)."""
        return self._flat  # type: ignore[attr-defined]


def expand_design_row(f1, f2) -> np.ndarray:
    """The 66 regressors for one (VM1, VM2) feature pair, canonical order."""
    a = _as_features(f1)
    b = _as_features(f2)
    return np.concatenate(
        [
            [1.0],
            a,
            b,
            np.outer(a, b).ravel(),
            a[_PAIR_I] * a[_PAIR_J],
            b[_PAIR_I] * b[_PAIR_J],
            a * a,
            b * b,
        ]
    )


def design_matrix(F1: np.ndarray, F2: np.ndarray) -> np.ndarray:
    """Vectorized :func:`expand_design_row` for ``(n, 5)`` feature blocks."""
    F1 = np.asarray(F1, dtype=float)
    F2 = np.asarray(F2, dtype=float)
    n = F1.shape[0]
    if F1.shape != (n, FEATURE_DIM) or F2.shape != (n, FEATURE_DIM):
        raise DimensionMismatch("feature blocks must be (n, 5)")
    return np.hstack(
        [
            np.ones((n, 1)),
            F1,
            F2,
            (F1[:, :, None] * F2[:, None, :]).reshape(n, -1),
            F1[:, _PAIR_I] * F1[:, _PAIR_J],
            F2[:, _PAIR_I] * F2[:, _PAIR_J],
            F1**2,
            F2**2,
        ]
    )


def predict(model: QuadraticInterferenceModel, f1, f2) -> float:
    """Predicted runtime for the given VM pair. Never clamped; pathological
    coefficients may produce negative values and callers decide."""
    return float(model.flatten() @ expand_design_row(f1, f2))


# --------------------------------------------------------------------------
# Profiling samples


@dataclass(frozen=True)
class ProfileSample:
    """One co-location measurement: both VMs' features and the observed
    runtime of the application on VM1."""

    features_vm1: FeatureVector
    features_vm2: FeatureVector
    observed_runtime: float

    def __post_init__(self):
        rt = float(self.observed_runtime)
        if not (math.isfinite(rt) and rt > 0):
            raise ValueError(f"observed_runtime must be finite and > 0, got {rt!r}")
        object.__setattr__(self, "observed_runtime", rt)


def samples_to_arrays(samples: Sequence[ProfileSample]):
    F1 = np.array([s.features_vm1.p for s in samples], dtype=float)
    F2 = np.array([s.features_vm2.p for s in samples], dtype=float)
    y = np.array([s.observed_runtime for s in samples], dtype=float)
    return F1, F2, y


PROFILE_CSV_HEADER = [f"vm1_p{i}" for i in range(1, 6)] + [
    f"vm2_p{i}" for i in range(1, 6)
] + ["runtime_s"]


def write_profile_csv(samples: Sequence[ProfileSample], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PROFILE_CSV_HEADER)
        for s in samples:
            writer.writerow(
                [repr(v) for v in s.features_vm1.p]
                + [repr(v) for v in s.features_vm2.p]
                + [repr(s.observed_runtime)]
            )


def read_profile_csv(path) -> list[ProfileSample]:
    samples = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != PROFILE_CSV_HEADER:
            raise ValueError(f"unexpected profile CSV header: {header}")
        for row in reader:
            vals = [float(v) for v in row]
            samples.append(
                ProfileSample(
                    FeatureVector(tuple(vals[0:5])),
                    FeatureVector(tuple(vals[5:10])),
                    vals[10],
                )
            )
    return samples


# --------------------------------------------------------------------------
# Model serialization


def model_to_dict(model: QuadraticInterferenceModel) -> dict:
    return {
        "schema_version": MODEL_SCHEMA_VERSION,
        "flattening_order": FLATTENING_ORDER,
        "feature_dim": FEATURE_DIM,
        "coefficients": [float(v) for v in model.flatten()],
    }


def model_from_dict(data: dict) -> QuadraticInterferenceModel:
    if data.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise ValueError(f"unsupported model schema version: {data.get('schema_version')!r}")
    if data.get("flattening_order") != FLATTENING_ORDER:
        raise ValueError("model file uses an unknown flattening order")
    coeffs = data.get("coefficients")
    if not isinstance(coeffs, list) or len(coeffs) != N_COEFFS:
        raise ValueError(f"model file must carry exactly {N_COEFFS} coefficients")
    return QuadraticInterferenceModel.from_flat(np.array(coeffs, dtype=float))


def save_model(model: QuadraticInterferenceModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2, sort_keys=True) + "\n")


def load_model(path) -> QuadraticInterferenceModel:
    return model_from_dict(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------
# Levenberg-Marquardt


@dataclass
class LMOptions:
    """Damped least-squares settings.

    ``damping_mode`` selects the scaling matrix D in the step equation
    ``(J^T W J + lambda * D) h = J^T W r``: "identity" uses D = I,
    "diagonal" uses D = diag(J^T W J). ``weights`` are per-sample and
    default to 1. ``allow_underdetermined`` permits fitting with fewer
    samples than parameters (damping then acts as a ridge).
    """

    lambda0: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    damping_mode: str = "diagonal"
    weights: Optional[np.ndarray] = None
    max_iter: int = 200
    grad_tol: float = 1e-8
    step_tol: float = 1e-10
    allow_underdetermined: bool = False

    def __post_init__(self):
        if not self.lambda0 > 0:
            raise ValueError("lambda0 must be > 0")
        if not (self.lambda_up > 1 and self.lambda_down > 1):
            raise ValueError("lambda multipliers must be > 1")
        if self.damping_mode not in ("identity", "diagonal"):
            raise ValueError(f"unknown damping_mode {self.damping_mode!r}")
        if not (self.grad_tol > 0 and self.step_tol > 0):
            raise ValueError("tolerances must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if np.any(w <= 0) or not np.all(np.isfinite(w)):
                raise ValueError("weights must be finite and > 0")
            self.weights = w


@dataclass
class LMFitReport:
    iterations: int
    final_sse: float
    final_lambda: float
    termination: str  # gradient_tol | step_tol | max_iter | stalled
    design_rank: int
    n_samples: int
    sse_trace: list[float] = field(default_factory=list)  # accepted SSE values
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "final_sse": self.final_sse,
            "final_lambda": self.final_lambda,
            "termination": self.termination,
            "design_rank": self.design_rank,
            "n_samples": self.n_samples,
            "sse_trace": list(self.sse_trace),
            "warnings": list(self.warnings),
        }


def lm_step(jacobian, residuals, weights=None, lam: float = 0.0, damping_mode: str = "diagonal"):
    """Solve ``(J^T W J + lambda * D) h = J^T W r`` for the update h.

    Raises :class:`SingularSystem` when the damped normal matrix cannot be
    factorized; the fit loop reacts by raising lambda and retrying.
    """
    J = np.asarray(jacobian, dtype=float)
    r = np.asarray(residuals, dtype=float)
    if J.ndim != 2 or r.ndim != 1 or J.shape[0] != r.shape[0]:
        raise DimensionMismatch("jacobian rows must match residual count")
    if lam < 0 or not math.isfinite(lam):
        raise ValueError("lambda must be >= 0 and finite")
    w = np.ones(J.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    A = J.T @ (w[:, None] * J)
    g = J.T @ (w * r)
    if damping_mode == "identity":
        M = A + lam * np.eye(A.shape[0])
    elif damping_mode == "diagonal":
        M = A + lam * np.diag(np.diag(A))
    else:
        raise ValueError(f"unknown damping_mode {damping_mode!r}")
    try:
        factor = scipy.linalg.cho_factor(M, check_finite=False)
        h = scipy.linalg.cho_solve(factor, g, check_finite=False)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise SingularSystem(f"damped normal matrix not positive definite: {exc}") from exc
    if not np.all(np.isfinite(h)):
        raise SingularSystem("non-finite step from the damped solve")
    return h


def lm_fit(
    samples: Sequence[ProfileSample],
    init: Optional[QuadraticInterferenceModel] = None,
    opts: Optional[LMOptions] = None,
):
    """Fit the quadratic model to profiling samples by damped least squares.

    A step is accepted only when the weighted SSE strictly decreases; lambda
    shrinks on acceptance and grows on rejection. Returns the fitted model
    and an :class:`LMFitReport`.
    """
    opts = opts if opts is not None else LMOptions()
    n = len(samples)
    if n < 1:
        raise InsufficientData("need at least one profiling sample")
    if n < N_COEFFS and not opts.allow_underdetermined:
        raise InsufficientData(
            f"{n} samples for {N_COEFFS} parameters; collect more background "
            "workloads or set allow_underdetermined"
        )
    F1, F2, y = samples_to_arrays(samples)
    X = design_matrix(F1, F2)
    if opts.weights is not None and opts.weights.shape != (n,):
        raise ValueError("weights length must match sample count")
    w = np.ones(n) if opts.weights is None else opts.weights

    rank = int(np.linalg.matrix_rank(X))
    warnings = []
    if rank < min(n, N_COEFFS):
        warnings.append(
            f"design matrix rank {rank} < {min(n, N_COEFFS)}; coefficients are "
            "not individually identifiable"
        )

    theta = (init if init is not None else QuadraticInterferenceModel.zeros()).flatten().copy()
    r = y - X @ theta
    sse = float(w @ r**2)
    lam = opts.lambda0
    trace = [sse]
    accepted_any = False
    termination = "max_iter"
    iterations = 0

    for iterations in range(1, opts.max_iter + 1):
        g = X.T @ (w * r)
        if np.max(np.abs(g)) < opts.grad_tol:
            termination = "gradient_tol"
            break
        try:
            h = lm_step(X, r, w, lam, opts.damping_mode)
        except SingularSystem:
            lam *= opts.lambda_up
            if lam > _LAMBDA_MAX:
                termination = "stalled"
                break
            continue
        if float(np.linalg.norm(h)) < opts.step_tol:
            termination = "step_tol"
            break
        theta_new = theta + h
        r_new = y - X @ theta_new
        sse_new = float(w @ r_new**2)
        if sse_new < sse:
            theta, r, sse = theta_new, r_new, sse_new
            lam = max(lam / opts.lambda_down, _LAMBDA_MIN)
            trace.append(sse)
            accepted_any = True
        else:
            lam *= opts.lambda_up
            if lam > _LAMBDA_MAX:
                termination = "stalled"
                break

    if termination == "stalled" and not accepted_any and rank < min(n, N_COEFFS):
        raise DegenerateDesign(
            "rank-deficient design and no damped step was ever accepted; "
            "profile more diverse background workloads"
        )

    report = LMFitReport(
        iterations=iterations,
        final_sse=sse,
        final_lambda=lam,
        termination=termination,
        design_rank=rank,
        n_samples=n,
        sse_trace=trace,
        warnings=warnings,
    )
    return QuadraticInterferenceModel.from_flat(theta), report


def update_online(
    model: QuadraticInterferenceModel,
    new_samples: Sequence[ProfileSample],
    opts: Optional[LMOptions] = None,
    history: Sequence[ProfileSample] = (),
    window_size: int = 1000,
):
    """Windowed refit for online learning.

    The window keeps the ``window_size`` most recent samples of
    ``history + new_samples``; the refit starts from the current model.
    With no new samples the model is returned unchanged. Returns
    ``(model, window)`` so the caller can carry the window forward.
    """
    if window_size < 1:
        raise ValueError("window_size must be >= 1")
    window = (list(history) + list(new_samples))[-window_size:]
    if not new_samples:
        return model, window
    refreshed, _ = lm_fit(window, init=model, opts=opts)
    return refreshed, window


def profile_workloads(
    app_task: TaskProfile,
    backgrounds: Sequence[Optional[TaskProfile]],
    world,
    sched_params=None,
) -> list[ProfileSample]:
    """Measure the application's runtime against each background workload.

    The application runs on VM1 of the first host while the background runs
    on VM2 for the application's entire execution (``None`` means an idle
    neighbour). Output order follows ``backgrounds``.
    """
    from .scheduler import aggregate_features
    from .sim import ground_truth_runtime

    if len(backgrounds) == 0:
        raise ValueError("backgrounds must be non-empty")
    samples = []
    f1 = aggregate_features([app_task], sched_params)
    for bg in backgrounds:
        co = [] if bg is None else [bg]
        runtime = ground_truth_runtime(app_task, co, world, sched_params)
        samples.append(ProfileSample(f1, aggregate_features(co, sched_params), runtime))
    return samples
