"""Decentralized online mirror descent for multi-agent target tracking."""

__version__ = "0.1.0"

from .analysis import (BoundReport, DisagreementReport, RegretReport, bound_for_record, check_bound,
                       disagreement, dynamic_regret, lemma2_rhs, theorem1_bound)
from .dynamics import (LinearDynamics, NoiseProcess, TargetTrajectory, generate_trajectory, ncv_dynamics,
                       ncv_noise_step, path_length)
from .engine import Engine, LossSpec, RunConfig, RunRecord, StepSchedule, run, run_centralized_reference
from .geometry import BregmanConstants, FeasibleSet, MirrorMap, bregman, constants_of, mirror_step
from .losses import QuadraticTracking, QuarticSensor, estimate_L, make_oracle
from .network import (Graph, WeightMatrix, build_graph, metropolis_weights, sigma2,
                      uniform_complete_weights, validate)

__all__ = [
    "BoundReport", "DisagreementReport", "RegretReport", "bound_for_record", "check_bound", "disagreement",
    "dynamic_regret", "lemma2_rhs", "theorem1_bound",
    "LinearDynamics", "NoiseProcess", "TargetTrajectory", "generate_trajectory", "ncv_dynamics", "ncv_noise_step",
    "path_length",
    "Engine", "LossSpec", "RunConfig", "RunRecord", "StepSchedule", "run", "run_centralized_reference",
    "BregmanConstants", "FeasibleSet", "MirrorMap", "bregman", "constants_of", "mirror_step",
    "QuadraticTracking", "QuarticSensor", "estimate_L", "make_oracle",
    "Graph", "WeightMatrix", "build_graph", "metropolis_weights", "sigma2", "uniform_complete_weights", "validate",
]
