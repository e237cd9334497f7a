"""Interference-aware scheduling laboratory.

A small stack for studying performance interference between co-located
VMs: a pairwise quadratic runtime model fitted by Levenberg-Marquardt, a
fast genetic k-means++ scheduler with a plain k-means++ baseline, and a
deterministic simulator that supplies the ground truth the model learns.
"""

from .core import (
    FEATURE_DIM,
    FILE_KINDS,
    FeatureVector,
    Point,
    RngStream,
    TaskProfile,
    centroid,
    euclidean_distance,
)
from .errors import (
    ConfigError,
    DegenerateDesign,
    DimensionMismatch,
    EmptyCluster,
    IaslabError,
    InsufficientData,
    KTooLarge,
    ModelNotFound,
    NonPositiveFitness,
    SingularSystem,
    UnmappedTask,
)
from .fgka import (
    ClusterSolution,
    FgkaParams,
    FgkaResult,
    Population,
    fgka_run,
    fitness,
    kmeans_op,
    kmeanspp_baseline,
    kmeanspp_seed,
    mutate,
    mutation_distribution,
    selection,
    twcv,
)
from .predictor import (
    LMFitReport,
    LMOptions,
    N_COEFFS,
    ProfileSample,
    QuadraticInterferenceModel,
    design_matrix,
    expand_design_row,
    lm_fit,
    lm_step,
    load_model,
    predict,
    profile_workloads,
    save_model,
    update_online,
)
from .scheduler import (
    Assignment,
    SchedulerParams,
    VmDescriptor,
    aggregate_features,
    assignment_for_policy,
    featurize,
    generate_candidates,
    round_robin_assignment,
    schedule,
    score_assignment,
)
from .sim import (
    SimMetrics,
    WorkloadSpec,
    WorldSpec,
    ab_experiment,
    compute_cost,
    gen_workload,
    ground_truth_runtime,
    random_world,
    run_sim,
)
from .config import ExperimentConfig, load_config, make_world

__version__ = "0.1.0"
