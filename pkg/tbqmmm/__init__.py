"""
tbqmmm - QM/MM coupling for a tight-binding model

Energy-mixing and force-mixing hybrid schemes for point defects and the
anti-plane screw dislocation in a triangular lattice, with Taylor-expanded
MM site potentials, L-BFGS / Newton-Krylov solvers and convergence studies
in the QM radius.
"""

from .core.config import config
from .core.schema import ExperimentConfig, load_experiment
from .lattice import LatticeSpec, ReferenceConfig, Displacement, build_reference, decompose
from .tb_core import TBParams, default_params
from .site_potential import build_taylor_potential, build_taylor_force
from .dislocation import ScrewPredictor
from .coupling import HybridModel
from .solver import SolverResult, solve, minimize_energy, solve_force_balance, reference_solve_atm, stability_check
from .harness import run_single, run_convergence_study, schedule, fit_slope

__version__ = "1.0.0"
__author__ = "tbqmmm Contributors"

__all__ = [
    "config",
    "ExperimentConfig",
    "load_experiment",
    "LatticeSpec",
    "ReferenceConfig",
    "Displacement",
    "build_reference",
    "decompose",
    "TBParams",
    "default_params",
    "build_taylor_potential",
    "build_taylor_force",
    "ScrewPredictor",
    "HybridModel",
    "SolverResult",
    "solve",
    "minimize_energy",
    "solve_force_balance",
    "reference_solve_atm",
    "stability_check",
    "run_single",
    "run_convergence_study",
    "schedule",
    "fit_slope"
]
