"""Null controls for the eps-relaxed monodomain system by penalised HUM."""
from .analysis import (SweepReport, carleman_certificate, energy_certificate, epsilon_sweep,
                       estimate_observability_constant)
from .config import RunConfig, parse_config, serialize
from .discretize import DiffusionOperator, Grid, SolverError, assemble_diffusion, build_grid, solve_spd
from .dynamics import (ControlFunction, TerminalData, Trajectory, adjoint_solve, duality_gap, forward_bidomain,
                       forward_monodomain, forward_relaxed_linear, forward_relaxed_nonlinear)
from .hum import (ControlResult, HumConfig, hum_functional, hum_smooth_gradient, nonlinear_control_cubic,
                  nonlinear_control_lipschitz, prox_penalty, synthesize_control)
from .model import ProblemSpec, Reaction, baseline_problem, linearize_integral, linearize_secant, make_problem
from .weights import WeightSet, choose_lambda, choose_s, eval_weights, make_weights

__version__ = "0.1.0"
