"""Observability constants and inequality certificates, collected over epsilon
sweeps.

Certificates are diagnostics.  They evaluate both sides of an inequality on
computed adjoint states and report the implied constant; they prove nothing.
"""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse.linalg as spla

from .discretize import SolverError
from .dynamics import LinearStepper, TerminalData
from .hum import HumConfig, HumOperator, synthesize_control
from .model import ProblemSpec
from .weights import WeightSet, make_weights

log = logging.getLogger(__name__)

DISCLAIMER = ("Certificates and constants are empirical diagnostics on one discretisation; "
              "they do not verify the inequalities in general.")

SWEEP_COLUMNS = ["epsilon", "control_norm", "bound_ratio", "term_v", "term_ue", "c_obs",
                 "carleman_ratio_M", "carleman_ratio_Mi", "dist_to_limit", "converged"]


# ---------------------------------------------------------------------------
# observability constant
# ---------------------------------------------------------------------------

class ObservabilityPencil:
    """Quadratic forms on terminal data xi = (phi_T, phi_eT).

    ``observed(xi)  = sum_n dt ||phi^n||^2_omega``
    ``energy(xi)    = ||phi^0||^2 + eps ||phi_e^0||^2``

    Both are represented by L2-self-adjoint operators; :meth:`gram` is the
    HUM Gramian and :meth:`energy_op` one adjoint plus one free forward solve.
    """

    def __init__(self, problem: ProblemSpec, a=None):
        self.op = HumOperator(problem, a, None, "plain")
        self.problem = problem
        self.dim = 2 * problem.grid.n_nodes

    def gram(self, x):
        return self.op.gram(x)

    def energy_op(self, x):
        p = self.problem
        P, Q = self.op.adjoint(x)
        V, U = self.op.stepper.forward(P[0] / p.c_m, Q[0], None)
        return np.concatenate([p.c_m * V[-1], p.epsilon * U[-1]])

    def observed(self, x) -> float:
        P, _ = self.op.adjoint(x)
        return self.op.observation(P)

    def energy(self, x) -> float:
        P, Q = self.op.adjoint(x)
        g = self.problem.grid
        return g.norm(P[0]) ** 2 + self.problem.epsilon * g.norm(Q[0]) ** 2

    def trace_estimate(self, rng, probes: int = 8) -> float:
        vals = []
        for _ in range(probes):
            z = rng.choice([-1.0, 1.0], size=self.dim)
            vals.append(float(z @ self.gram(z)))
        return float(np.mean(vals))


def estimate_observability_constant(problem: ProblemSpec, a=None, *, seed: int = 0, rtol: float = 1e-11,
                                    max_iter: int = 2000, cg_rtol: float = 1e-13, shift_factor: float = 1e-12,
                                    return_info: bool = False):
    """Largest generalised Rayleigh quotient energy(xi)/observed(xi).

    Inverse power iteration ``x <- (G + sigma)^{-1} E x`` with the Gramian G
    inverted matrix-free by conjugate gradients.  ``sigma`` is
    ``shift_factor`` times a Hutchinson estimate of trace(G).
    """
    pen = ObservabilityPencil(problem, a)
    rng = np.random.default_rng(seed)
    sigma = shift_factor * abs(pen.trace_estimate(rng))
    n = pen.dim
    G = spla.LinearOperator((n, n), matvec=lambda v: pen.gram(v) + sigma * v, dtype=float)

    x = rng.standard_normal(n)
    lam_prev = np.nan
    lam = np.nan
    y = None
    for it in range(1, max_iter + 1):
        Ex = pen.energy_op(x)
        Gx = G.matvec(x)
        lam = float(x @ Ex) / float(x @ Gx)
        if it > 1 and abs(lam - lam_prev) <= rtol * abs(lam):
            break
        lam_prev = lam
        guess = lam * x if np.isfinite(lam) else None
        y, info = spla.cg(G, Ex, x0=guess, rtol=cg_rtol, atol=0.0, maxiter=20 * n)
        if info < 0:
            raise SolverError(f"CG breakdown in Gramian solve, last Rayleigh quotient {lam:.6e}", lam)
        x = y / np.linalg.norm(y)
    else:
        raise SolverError(f"power iteration did not converge in {max_iter} steps, last quotient {lam:.6e}", lam)
    if return_info:
        return lam, {"iterations": it, "shift": sigma, "vector": x}
    return lam


# ---------------------------------------------------------------------------
# certificates
# ---------------------------------------------------------------------------

@dataclass
class Certificate:
    lhs: float
    rhs: float
    ratio: float | None  # None when rhs == 0

    @classmethod
    def of(cls, lhs: float, rhs: float) -> "Certificate":
        return cls(float(lhs), float(rhs), float(lhs / rhs) if rhs > 0 else None)


def _adjoint_tables(problem, a, terminal: TerminalData):
    st = LinearStepper(problem, a)
    P, Q = st.adjoint(terminal.phi_T, terminal.phi_eT)
    return P[:-1], Q[:-1]  # row n evaluated at the cell time t_n + dt/2


def _rho(problem: ProblemSpec, Q: np.ndarray, variant: str) -> np.ndarray:
    op = {"M": problem.M, "Mi": problem.M_i}[variant]
    return -(op.matrix @ Q.T).T  # div(M grad phi_e) = -A phi_e


def carleman_certificate(problem: ProblemSpec, a, weights: WeightSet, terminal: TerminalData) -> dict:
    """Both sides of the system Carleman estimate, for rho built with M and M_i.

    lhs = int exp(3 s alpha)|rho|^2 + s^3 lam^4 int phi^3 exp(3 s alpha)|phi|^2
    rhs = exp(6 lam |psi|) s^7 lam^4 int_omega phi^8 exp(2 s alpha)|phi|^2
    """
    p = problem
    P, Q = _adjoint_tables(p, a, terminal)
    t = p.cell_times
    dV = p.dt * p.grid.cell_volume
    s, lam = weights.s, weights.lam
    e3 = weights.weight(t, 3.0, 0.0)
    phi3e3 = weights.weight(t, 3.0, 3.0)
    phi8e2 = weights.weight(t, 2.0, 8.0)
    mask = p.omega[None, :]
    state_term = s**3 * lam**4 * dV * float(np.sum(phi3e3 * P**2))
    rhs = np.exp(6 * lam * weights.psi_norm) * s**7 * lam**4 * dV * float(np.sum(np.where(mask, phi8e2 * P**2, 0.0)))
    out = {}
    for variant in ("M", "Mi"):
        rho = _rho(p, Q, variant)
        lhs = dV * float(np.sum(e3 * rho**2)) + state_term
        out[variant] = Certificate.of(lhs, rhs)
    return out


def energy_certificate(problem: ProblemSpec, weights: WeightSet, terminal: TerminalData, a=None,
                       variant: str = "Mi") -> Certificate:
    """Weighted energy estimate for rho with the eps^2 factor left out of rhs.

    lhs = int exp(3 s alpha*)|rho|^2,  rhs = exp(4 lam |psi|) int s^3 phi^4 exp(2 s alpha)|rho|^2.
    The implied constant is ``ratio / eps^2``.
    """
    p = problem
    _, Q = _adjoint_tables(p, a, terminal)
    rho = _rho(p, Q, variant)
    t = p.cell_times
    dV = p.dt * p.grid.cell_volume
    s, lam = weights.s, weights.lam
    e3star = np.exp(3.0 * s * weights.alpha_star(t))[:, None]
    lhs = dV * float(np.sum(e3star * rho**2))
    rhs = np.exp(4 * lam * weights.psi_norm) * s**3 * dV * float(np.sum(weights.weight(t, 2.0, 4.0) * rho**2))
    return Certificate.of(lhs, rhs)


def random_terminal(problem: ProblemSpec, seed: int) -> TerminalData:
    rng = np.random.default_rng(seed)
    n = problem.grid.n_nodes
    return TerminalData(rng.standard_normal(n), rng.standard_normal(n))


def default_weights(problem: ProblemSpec, m: float = 2.0, s0: float = 1.0, a_inf_norm: float = 0.0) -> WeightSet:
    """Weights with psi centred at the centroid of the control region."""
    center = problem.grid.coords[problem.omega].mean(axis=0)
    return make_weights(problem.grid, problem.T, center, m=m, s0=s0, a_inf_norm=a_inf_norm)


# ---------------------------------------------------------------------------
# epsilon sweep
# ---------------------------------------------------------------------------

@dataclass
class SweepRow:
    epsilon: float
    control_norm: float = float("nan")
    bound_ratio: float = float("nan")
    term_v: float = float("nan")
    term_ue: float = float("nan")
    c_obs: float = float("nan")
    carleman_ratio_M: float = float("nan")
    carleman_ratio_Mi: float = float("nan")
    dist_to_limit: float = float("nan")
    converged: bool = False
    error: str = ""


@dataclass
class SweepReport:
    rows: list
    metadata: dict = field(default_factory=dict)
    controls: dict = field(default_factory=dict, repr=False)  # epsilon -> control values

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    @property
    def all_converged(self) -> bool:
        return all(r.converged and not r.error for r in self.rows)

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SWEEP_COLUMNS)
            for r in self.rows:
                w.writerow([repr(getattr(r, c)) if isinstance(getattr(r, c), float) else getattr(r, c)
                            for c in SWEEP_COLUMNS])

    def to_json(self, path) -> None:
        doc = {"metadata": self.metadata, "rows": [asdict(r) for r in self.rows]}
        Path(path).write_text(json.dumps(doc, indent=2, default=_json_default))


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _sweep_row(args):
    template, eps, config, weights, seed, with_obs, with_cert = args
    p = template.replace(epsilon=float(eps))
    row = SweepRow(epsilon=float(eps))
    control = None
    try:
        res = synthesize_control(p, None, weights if config.mode == "weighted" else None, config)
        control = res.control.values
        row.control_norm = res.control_norm
        row.bound_ratio = res.bound_ratio
        row.term_v = res.terminal_v_norm
        row.term_ue = res.terminal_ue_norm
        row.converged = res.converged
        if with_obs:
            row.c_obs = estimate_observability_constant(p, seed=seed)
        if with_cert:
            cert = carleman_certificate(p, None, weights, random_terminal(p, seed))
            row.carleman_ratio_M = cert["M"].ratio if cert["M"].ratio is not None else float("nan")
            row.carleman_ratio_Mi = cert["Mi"].ratio if cert["Mi"].ratio is not None else float("nan")
    except (SolverError, ValueError, np.linalg.LinAlgError, FloatingPointError) as exc:
        row.converged = False
        row.error = f"{type(exc).__name__}: {exc}"
        log.warning("sweep row eps=%g failed: %s", eps, exc)
    return row, control


def epsilon_sweep(problem_template: ProblemSpec, config: HumConfig | None, eps_list, *, weights: WeightSet | None = None,
                  seed: int = 0, jobs: int = 1, observability: bool = True, certificates: bool = True) -> SweepReport:
    """Synthesize a control per epsilon and collect norms, C_obs and certificate ratios.

    ``dist_to_limit`` is ``||f^eps - f^0||_{L2(Q)}``; the eps = 0 control is
    computed separately when 0 is not in ``eps_list``.
    """
    config = config or HumConfig()
    eps_list = [float(e) for e in eps_list]
    if any(e < 0 for e in eps_list):
        raise ValueError("epsilon values must be non-negative")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    weights = weights or default_weights(problem_template)

    tasks = [(problem_template, e, config, weights, seed, observability, certificates) for e in eps_list]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_row, tasks))
    else:
        results = [_sweep_row(t) for t in tasks]

    rows = [r for r, _ in results]
    controls = {r.epsilon: c for r, c in results}
    if 0.0 in controls:
        limit = controls[0.0]
    else:
        _, limit = _sweep_row((problem_template, 0.0, config, weights, seed, False, False))
    p = problem_template
    for r in rows:
        c = controls[r.epsilon]
        if c is not None and limit is not None:
            r.dist_to_limit = float(np.sqrt(p.dt * p.grid.cell_volume * np.sum((c - limit) ** 2)))

    meta = {
        "grid": {"dim": p.grid.dim, "extents": list(p.grid.extents), "n_cells": list(p.grid.n_cells)},
        "T": p.T,
        "n_steps": p.n_steps,
        "delta": config.delta,
        "mode": config.mode,
        "lambda": weights.lam,
        "s": weights.s,
        "m": weights.m,
        "seed": seed,
        "certificate_terminal_data": "standard normal per node, numpy default_rng(seed)",
        "limit_control_norm": (float(np.sqrt(p.dt * p.grid.cell_volume * np.sum(limit**2)))
                               if limit is not None else None),
        "note": DISCLAIMER,
    }
    return SweepReport(rows, meta, controls)


def loglog_slope(eps, values) -> float:
    """Least-squares slope of log(values) against log(1/eps), eps > 0 only."""
    eps = np.asarray(eps, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = eps > 0
    x = np.log(1.0 / eps[keep])
    y = np.log(values[keep])
    return float(np.polyfit(x, y, 1)[0])


def nonincreasing_within(values, rel_tol: float) -> bool:
    """``values[k+1] <= (1 + rel_tol) * values[k]`` for all k (tiny absolute floor)."""
    v = np.asarray(values, dtype=float)
    floor = 1e-14 * max(float(np.max(np.abs(v))), 1e-300)
    return bool(np.all(v[1:] <= (1.0 + rel_tol) * v[:-1] + floor))
