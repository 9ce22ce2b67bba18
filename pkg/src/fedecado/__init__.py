"""Continuous-time federated learning simulator.

Clients integrate local gradient-flow ODEs over private time windows; a
central agent reconciles their trajectories on a shared timescale with an
implicit (Backward-Euler) solve over coupled flow variables, adapting its
step size from local truncation error estimates.  FedAvg, FedProx and
FedNova baselines share the same objectives, partitioner and harness.
"""

from fedecado.objectives import (
    Dataset,
    LogisticObjective,
    MlpObjective,
    QuadraticObjective,
    load_csv_dataset,
    make_blobs,
    random_quadratic,
)
from fedecado.partition import Partition, dirichlet_partition, iid_partition
from fedecado.clients import (
    ClientConfig,
    ClientUpdate,
    DivergenceError,
    sample_heterogeneity,
    simulate_local,
)
from fedecado.consensus import (
    FlowState,
    SensitivityModel,
    StepController,
    StepControlError,
    adaptive_step,
    be_step,
    build_sensitivity,
    consensus_round,
    interp_state,
    lte,
    steady_state_reached,
)
from fedecado.harness import ExperimentConfig, ExperimentResult, run_experiment, sample_active_set

__version__ = "0.1.0"

__all__ = [
    "ClientConfig",
    "ClientUpdate",
    "Dataset",
    "DivergenceError",
    "ExperimentConfig",
    "ExperimentResult",
    "FlowState",
    "LogisticObjective",
    "MlpObjective",
    "Partition",
    "QuadraticObjective",
    "SensitivityModel",
    "StepController",
    "StepControlError",
    "adaptive_step",
    "be_step",
    "build_sensitivity",
    "consensus_round",
    "dirichlet_partition",
    "iid_partition",
    "interp_state",
    "load_csv_dataset",
    "lte",
    "make_blobs",
    "random_quadratic",
    "run_experiment",
    "sample_active_set",
    "sample_heterogeneity",
    "simulate_local",
    "steady_state_reached",
]
