"""Resilient-estimator control barrier functions for a quadrotor."""

from .barrier import AffineSet, ExpChain, ReciprocalBarrier, SafetyConstraint, SuperEllipsoid, assemble_constraint, box
from .dynamics import QuadParams, QuadState, acceleration_to_attitude, double_integrator_model, quad_step, rotation_matrix
from .estimator import FilterState, LinearizedSystem, kalman_step, re_step
from .harness import RunMetrics, SimRecord, run_batch, run_closed_loop, write_csv
from .safety_filter import QPProblem, QPSolution, QPStatus, solve_qp
from .scenarios import ScenarioConfig, paper_scenario

__version__ = "0.1.0"

__all__ = [
    "AffineSet",
    "ExpChain",
    "FilterState",
    "LinearizedSystem",
    "QPProblem",
    "QPSolution",
    "QPStatus",
    "QuadParams",
    "QuadState",
    "ReciprocalBarrier",
    "RunMetrics",
    "SafetyConstraint",
    "ScenarioConfig",
    "SimRecord",
    "SuperEllipsoid",
    "acceleration_to_attitude",
    "assemble_constraint",
    "box",
    "double_integrator_model",
    "kalman_step",
    "paper_scenario",
    "quad_step",
    "re_step",
    "rotation_matrix",
    "run_batch",
    "run_closed_loop",
    "solve_qp",
    "write_csv",
]
