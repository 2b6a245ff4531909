"""
MCNF Tools

Continuous normalizing flows on manifolds, built from generating sets of
vector fields with closed-form divergences.

This package provides tools for:
- Embedded manifolds (spheres, SO(n), U(n), SU(n), Stiefel manifolds, SPD matrices)
  with generating sets, retractions and base-density samplers
- Flow fields Σ f_i X_i with exact and stochastic divergences
- Adaptive Dormand-Prince integration of flows and their adjoints
- Mixture target densities (von Mises-Fisher, Langevin, Wishart, trace densities)
- KL training with Adam and importance-sampling evaluation (KL, ESS)
"""

__version__ = "1.0.0"
__author__ = "MCNF Tools Developers"
__license__ = "MIT"

from .config import ExperimentConfig, TargetConfig, load_config
from .exceptions import McnfError
from .field import FlowField
from .manifolds import ManifoldSpec, build_manifold
from .ode import EVAL_SOLVER, SolverConfig, backward_adjoint, forward_flow
from .targets import MixtureTarget, TargetSpec, make_target, sample_centers
from .train import EvalReport, TrainConfig, evaluate, kl_loss_batch, train

__all__ = [
    "ExperimentConfig",
    "TargetConfig",
    "load_config",
    "McnfError",
    "FlowField",
    "ManifoldSpec",
    "build_manifold",
    "EVAL_SOLVER",
    "SolverConfig",
    "forward_flow",
    "backward_adjoint",
    "MixtureTarget",
    "TargetSpec",
    "make_target",
    "sample_centers",
    "EvalReport",
    "TrainConfig",
    "evaluate",
    "kl_loss_batch",
    "train",
]
