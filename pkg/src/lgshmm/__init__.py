"""Finite-state HMM approximations of linear Gaussian systems.

Submodules: `lgss` (system and simulation), `quantizer` (grids and index
map), `trainer_naive` (counting), `analytic` (midpoint integration),
`trainer_structured` (column-shift training with Khatri-Rao composition),
`estimators` (HMM and Kalman filters over a lossy event-triggered channel)
and `experiments` (metrics and sweeps).
"""

from .estimators import BeliefVector, ChannelEvent, HmmFilter, KalmanState
from .experiments import ExperimentConfig, ExperimentResult, run_experiment, sweep_tradeoff
from .lgss import SsmModel, Trajectory, simulate, solve_steady_state
from .quantizer import AxisGrid, QuantizerGrid, build_grid
from .trainer_naive import HmmModel, read_model, train_naive, write_model
from .trainer_structured import train_structured

__version__ = "0.1.0"

__all__ = [
    "AxisGrid",
    "BeliefVector",
    "ChannelEvent",
    "ExperimentConfig",
    "ExperimentResult",
    "HmmFilter",
    "HmmModel",
    "KalmanState",
    "QuantizerGrid",
    "SsmModel",
    "Trajectory",
    "build_grid",
    "read_model",
    "run_experiment",
    "simulate",
    "solve_steady_state",
    "sweep_tradeoff",
    "train_naive",
    "train_structured",
    "write_model",
]
