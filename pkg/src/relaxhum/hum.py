"""Penalised HUM: minimise over adjoint terminal data (phi_T, phi_eT)

    J(xi) = 1/2 sum_n dt sum_omega w |phi^n|^2 + c_m <v0, phi^0> + eps <ue0, phi_e^0>
            + delta (||phi_T|| + ||phi_eT||)

with ``w = 1`` (plain) or ``w = exp(2 s alpha) phi^8`` (weighted).  The control
is ``f = w phi`` on omega.  All inner products and norms are discrete L2.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dynamics import ControlFunction, LinearStepper, TerminalData, forward_relaxed_linear, forward_relaxed_nonlinear
from .model import ProblemSpec, Reaction, linearize_integral, linearize_secant
from .weights import WeightSet

log = logging.getLogger(__name__)

MODES = ("plain", "weighted")


@dataclass
class HumConfig:
    delta: float = 1e-3
    mode: str = "plain"
    max_iters: int = 20000
    gtol: float = 1e-2  # stop when ||gradient mapping|| <= gtol * delta
    ftol: float = 0.0  # stop on relative decrease below ftol over `window` iterations
    window: int = 200
    power_iters: int = 10
    q: float = 4.0
    kappa: float = 1.1

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.max_iters < 1 or self.power_iters < 1:
            raise ValueError("iteration counts must be positive")


@dataclass
class ControlResult:
    control: ControlFunction
    terminal: TerminalData
    epsilon: float
    delta: float
    mode: str
    q: float
    control_norm_l2: float
    control_norm_lq: float
    terminal_v_norm: float
    terminal_ue_norm: float
    bound_ratio: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)
    outer_history: list = field(default_factory=list)

    @property
    def control_norm(self) -> float:
        return self.control_norm_l2 if self.mode == "plain" else self.control_norm_lq

    @property
    def terminal_norm(self) -> float:
        return self.terminal_v_norm + self.terminal_ue_norm

    def to_json(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "delta": self.delta,
            "mode": self.mode,
            "control_norm_l2": self.control_norm_l2,
            "control_norm_lq": self.control_norm_lq,
            "q": self.q,
            "terminal_v_norm": self.terminal_v_norm,
            "terminal_ue_norm": self.terminal_ue_norm,
            "bound_ratio": self.bound_ratio,
            "iterations": self.iterations,
            "converged": self.converged,
        }


class HumOperator:
    """Adjoint/forward plumbing for one (problem, potential, weight) triple."""

    def __init__(self, problem: ProblemSpec, a=None, weights: WeightSet | None = None,
                 mode: str = "plain", stepper: LinearStepper | None = None):
        if mode == "weighted" and weights is None:
            raise ValueError("weighted mode needs a WeightSet")
        self.problem = problem
        self.stepper = stepper or LinearStepper(problem, a)
        mask = problem.omega.astype(float)
        if mode == "weighted":
            self.w = weights.control_weight(problem.cell_times) * mask[None, :]
        else:
            self.w = np.broadcast_to(mask, (problem.n_steps, problem.grid.n_nodes)).copy()
        self.mode = mode
        self.vol = problem.grid.cell_volume

    def inner(self, x, y) -> float:
        return self.vol * float(np.dot(x, y))

    def adjoint(self, x: np.ndarray):
        n = self.problem.grid.n_nodes
        return self.stepper.adjoint(x[:n], x[n:])

    def control_values(self, P: np.ndarray) -> np.ndarray:
        return self.w * P[:-1]

    def observation(self, P: np.ndarray) -> float:
        return self.problem.dt * self.vol * float(np.sum(self.w * P[:-1] ** 2))

    def smooth(self, x: np.ndarray, P=None, Q=None) -> float:
        p = self.problem
        if P is None:
            P, Q = self.adjoint(x)
        return (0.5 * self.observation(P) + p.c_m * self.vol * float(p.v0 @ P[0])
                + p.epsilon * self.vol * float(p.ue0 @ Q[0]))

    def _terminal_gradient(self, v0, ue0, f) -> np.ndarray:
        p = self.problem
        V, U = self.stepper.forward(v0, ue0, f)
        return np.concatenate([p.c_m * V[-1], p.epsilon * U[-1]])

    def gradient(self, x: np.ndarray):
        """Return (smooth value, L2 gradient) of the smooth part at ``x``."""
        P, Q = self.adjoint(x)
        g = self._terminal_gradient(self.problem.v0, self.problem.ue0, self.control_values(P))
        return self.smooth(x, P, Q), g

    def gram(self, x: np.ndarray) -> np.ndarray:
        """Gramian: terminal (c_m v, eps ue) from rest under the control w phi(x)."""
        P, _ = self.adjoint(x)
        n = self.problem.grid.n_nodes
        return self._terminal_gradient(np.zeros(n), np.zeros(n), self.control_values(P))

    def block_norms(self, x: np.ndarray):
        n = self.problem.grid.n_nodes
        return np.sqrt(self.vol) * np.linalg.norm(x[:n]), np.sqrt(self.vol) * np.linalg.norm(x[n:])

    def lipschitz_estimate(self, iters: int, seed: int = 0) -> float:
        rng = np.random.default_rng(seed)
        x = rng.standard_normal(2 * self.problem.grid.n_nodes)
        if self.problem.epsilon == 0:
            x[self.problem.grid.n_nodes:] = 0.0
        lam = 0.0
        for _ in range(iters):
            x /= np.sqrt(self.inner(x, x))
            y = self.gram(x)
            lam = self.inner(x, y)
            x = y
            if not np.any(x):
                break
        return lam


def _operator(problem, a, weights, mode) -> HumOperator:
    return HumOperator(problem, a, weights, mode)


def _mode_for(weights, config: HumConfig | None) -> str:
    if config is not None:
        return config.mode
    return "plain" if weights is None else "weighted"


def hum_functional(problem: ProblemSpec, a=None, weights: WeightSet | None = None,
                   config: HumConfig | None = None, terminal: TerminalData | None = None) -> float:
    config = config or HumConfig()
    op = _operator(problem, a, weights, _mode_for(weights, config))
    x = terminal.as_vector()
    n1, n2 = op.block_norms(x)
    return op.smooth(x) + config.delta * (n1 + n2)


def hum_smooth_gradient(problem: ProblemSpec, a=None, weights: WeightSet | None = None,
                        terminal: TerminalData | None = None) -> TerminalData:
    op = _operator(problem, a, weights, _mode_for(weights, None))
    _, g = op.gradient(terminal.as_vector())
    return TerminalData.from_vector(g)


def _shrink(block: np.ndarray, norm: float, thresh: float) -> np.ndarray:
    if norm <= thresh or norm == 0.0:
        return np.zeros_like(block)
    return (1.0 - thresh / norm) * block


def prox_penalty(terminal: TerminalData, tau_delta: float, grid=None) -> TerminalData:
    """Blockwise shrinkage ``x -> max(0, 1 - tau delta/||x||) x``.

    Norms are discrete L2 when ``grid`` is given, Euclidean otherwise.
    """
    if tau_delta < 0:
        raise ValueError("tau_delta must be non-negative")
    norm = grid.norm if grid is not None else np.linalg.norm
    if tau_delta == 0:
        return TerminalData(terminal.phi_T.copy(), terminal.phi_eT.copy())
    return TerminalData(_shrink(terminal.phi_T, norm(terminal.phi_T), tau_delta),
                        _shrink(terminal.phi_eT, norm(terminal.phi_eT), tau_delta))


def _prox_vec(op: HumOperator, x: np.ndarray, thresh: float) -> np.ndarray:
    n = op.problem.grid.n_nodes
    n1, n2 = op.block_norms(x)
    return np.concatenate([_shrink(x[:n], n1, thresh), _shrink(x[n:], n2, thresh)])


def minimize_hum(op: HumOperator, config: HumConfig, x0: np.ndarray | None = None):
    """Monotone FISTA with gradient restart and backtracking.

    Returns ``(x, history, iterations, converged)``.
    """
    delta = config.delta
    n2 = 2 * op.problem.grid.n_nodes
    x = np.zeros(n2) if x0 is None else np.asarray(x0, dtype=float).copy()
    if op.problem.epsilon == 0:
        x[n2 // 2:] = 0.0

    def penalty(z):
        b1, b2 = op.block_norms(z)
        return delta * (b1 + b2)

    L = op.lipschitz_estimate(config.power_iters)
    if not L > 0:
        # no controllable direction; the minimiser is the prox of the linear term
        L = 1.0
    tau = 1.0 / L
    J_x = op.smooth(x) + penalty(x)
    history = [J_x]
    x_prev = x.copy()
    y = x.copy()
    t = 1.0
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        S_y, g_y = op.gradient(y)
        while True:
            z = _prox_vec(op, y - tau * g_y, tau * delta)
            d = z - y
            S_z = op.smooth(z)
            if S_z <= S_y + op.inner(g_y, d) + op.inner(d, d) / (2 * tau) + 1e-13 * (abs(S_y) + abs(S_z)):
                break
            tau *= 0.5
        gmap = np.sqrt(op.inner(d, d)) / tau
        J_z = S_z + penalty(z)
        x_prev = x
        if J_z <= J_x:
            x, J_x = z, J_z
        history.append(J_x)
        if gmap <= config.gtol * delta:
            converged = True
            break
        if config.ftol > 0 and it > config.window:
            old = history[-config.window - 1]
            if old - J_x <= config.ftol * max(abs(J_x), 1e-300):
                break
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        if J_z > history[-2] or op.inner(y - z, z - x_prev) > 0:
            t_next = 1.0  # restart momentum
            y = x.copy()
        else:
            y = x + (t / t_next) * (z - x) + ((t - 1.0) / t_next) * (x - x_prev)
        t = t_next
    log.debug("HUM stopped after %d iterations, J=%.6e, converged=%s", it, J_x, converged)
    return x, history, it, converged


def _denominator(problem: ProblemSpec) -> float:
    g = problem.grid
    return g.norm(problem.v0) + problem.epsilon * g.norm(problem.ue0)


def _build_result(problem, op: HumOperator, x, config, history, iterations, converged, validate=None) -> ControlResult:
    P, _ = op.adjoint(x)
    control = ControlFunction.on_region(problem, op.control_values(P))
    if validate is None:
        traj = forward_relaxed_linear(problem, control_f=control, stepper=op.stepper)
    else:
        traj = validate(control)
    g = problem.grid
    l2 = control.norm_l2(g)
    lq = control.norm_lq(g, config.q)
    denom = _denominator(problem)
    cn = l2 if config.mode == "plain" else lq
    ratio = cn / denom if denom > 0 else 0.0
    return ControlResult(
        control=control,
        terminal=TerminalData.from_vector(x),
        epsilon=problem.epsilon,
        delta=config.delta,
        mode=config.mode,
        q=config.q,
        control_norm_l2=l2,
        control_norm_lq=lq,
        terminal_v_norm=g.norm(traj["v"][-1]),
        terminal_ue_norm=g.norm(traj["ue"][-1]),
        bound_ratio=ratio,
        iterations=iterations,
        converged=converged,
        history=list(history),
    )


def synthesize_control(problem: ProblemSpec, a=None, weights: WeightSet | None = None,
                       config: HumConfig | None = None, x0=None, operator: HumOperator | None = None) -> ControlResult:
    config = config or HumConfig()
    op = operator or HumOperator(problem, a, weights, config.mode)
    if isinstance(x0, TerminalData):
        x0 = x0.as_vector()
    x, history, iters, converged = minimize_hum(op, config, x0)
    return _build_result(problem, op, x, config, history, iters, converged)


def _space_time_norm(problem: ProblemSpec, Z: np.ndarray) -> float:
    return float(np.sqrt(problem.dt * problem.grid.cell_volume * np.sum(Z**2)))


def _fixed_point(problem, reaction, linearize, weights, config, z0, tol, max_outer):
    N, n = problem.n_steps, problem.grid.n_nodes
    z = np.zeros((N + 1, n)) if z0 is None else np.asarray(z0, dtype=float)
    x = None
    a = linearize(reaction, z[1:])
    dists = []
    converged = False
    result = None
    total_inner = 0
    for _ in range(max_outer):
        op = HumOperator(problem, a, weights, config.mode)
        xk, history, iters, inner_ok = minimize_hum(op, config, x)
        total_inner += iters
        P, _ = op.adjoint(xk)
        V, _ = op.stepper.forward(problem.v0, problem.ue0, op.control_values(P))
        dist = _space_time_norm(problem, V - z) / max(_space_time_norm(problem, V), 1e-300)
        dists.append(dist)
        a_next = linearize(reaction, V[1:])
        x, z = xk, V
        result = (op, xk, history, inner_ok)
        if dist <= tol or np.array_equal(a_next, a):
            converged = True
            break
        a = a_next

    op, xk, history, inner_ok = result
    res = _build_result(problem, op, xk, config, history, total_inner, converged and inner_ok,
                        validate=lambda c: forward_relaxed_nonlinear(problem, reaction, c))
    res.outer_history = dists
    return res


def nonlinear_control_lipschitz(problem: ProblemSpec, reaction: Reaction, config: HumConfig | None = None,
                                z0=None, tol: float = 1e-8, max_outer: int = 50) -> ControlResult:
    """Picard loop ``z -> v`` with the secant linearisation ``a = h(z)/z``.

    The returned terminal norms come from the nonlinear forward solver driven
    by the final control.
    """
    if reaction.kind not in ("none", "lipschitz"):
        raise ValueError("expected a globally Lipschitz reaction")
    return _fixed_point(problem, reaction, linearize_secant, None, config or HumConfig(), z0, tol, max_outer)


def nonlinear_control_cubic(problem: ProblemSpec, reaction: Reaction, weights: WeightSet,
                            config: HumConfig | None = None, z0=None, tol: float = 1e-8,
                            max_outer: int = 50) -> ControlResult:
    """Same loop with ``a(z) = int_0^1 h'(s z) ds`` and the weighted functional."""
    if reaction.kind != "cubic":
        raise ValueError("expected a cubic reaction")
    config = config or HumConfig(mode="weighted")
    if config.mode != "weighted":
        raise ValueError("the cubic case uses the weighted functional")
    return _fixed_point(problem, reaction, linearize_integral, weights, config, z0, tol, max_outer)


def default_q(dim: int) -> float:
    """Default exponent for the L^q control norm; admissible range depends on dim."""
    lo, hi = q_range(dim)
    return 4.0 if lo < 4.0 < hi else 0.5 * (lo + hi)


def q_range(dim: int):
    if dim <= 2:
        return 2.0, float("inf")
    return (dim + 2) / 2.0, 2.0 * (dim + 2) / (dim - 2)
