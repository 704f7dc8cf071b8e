"""Backward-Euler solvers for the relaxed, monodomain and bidomain systems, and
the discrete adjoint.

Forward step ``n -> n+1`` (``A_e, A_i, A = A_i + A_e`` are the Dirichlet
diffusion matrices, ``k = mu/(mu+1)``)::

    (c_m/dt + k A_e + a^n) v^{n+1} = c_m/dt v^n + f^n 1_omega
    (eps/dt + A) ue^{n+1}          = eps/dt ue^n - A_i v^{n+1}

Adjoint step ``n+1 -> n`` is the algebraic transpose::

    (eps/dt + A) q^n               = eps/dt q^{n+1}
    (c_m/dt + k A_e + a^n) p^n     = c_m/dt p^{n+1} - A_i q^n

so that for every control and terminal pair

    c_m<v^N,p^N> + eps<ue^N,q^N> - c_m<v^0,p^0> - eps<ue^0,q^0> = sum_n dt <f^n, p^n>_omega.

Control and observation row ``n`` belong to the interval ``(t_n, t_{n+1})``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretize import Grid, SolverError
from .model import PotentialField, ProblemSpec, Reaction

NEWTON_TOL = 1e-12
NEWTON_MAXITER = 25


@dataclass
class Trajectory:
    grid: Grid
    dt: float
    fields: dict  # name -> array (n_steps + 1, n_nodes)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.fields[name]

    @property
    def n_steps(self) -> int:
        return next(iter(self.fields.values())).shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def to_csv(self, path) -> None:
        write_field_csv(path, self.grid, self.times, self.fields)


def write_field_csv(path, grid: Grid, times: np.ndarray, fields: dict) -> None:
    """Long-format CSV: ``t,x[,y],field,value``, one row per (time, node, field)."""
    coords = grid.coords
    axes = ["x", "y"][: grid.dim]
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *axes, "field", "value"])
        for n, t in enumerate(times):
            for name, arr in fields.items():
                for j in range(grid.n_nodes):
                    w.writerow([repr(float(t)), *(repr(float(c)) for c in coords[j]), name, repr(float(arr[n, j]))])


def read_field_csv(path, grid: Grid) -> dict:
    """Inverse of :func:`write_field_csv` (rows must be in the written order)."""
    rows: dict = {}
    with open(Path(path), newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.setdefault(rec["field"], []).append(float(rec["value"]))
    return {k: np.asarray(v).reshape(-1, grid.n_nodes) for k, v in rows.items()}


@dataclass
class ControlFunction:
    values: np.ndarray  # (n_steps, n_nodes), row n acts on (t_n, t_{n+1})
    mask: np.ndarray
    dt: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("control has non-finite entries")
        if np.any(self.values[:, ~self.mask] != 0.0):
            raise ValueError("control support must lie inside the control region")

    @classmethod
    def zeros(cls, problem: ProblemSpec, mask=None) -> "ControlFunction":
        mask = problem.omega if mask is None else mask
        return cls(np.zeros((problem.n_steps, problem.grid.n_nodes)), mask, problem.dt)

    @classmethod
    def on_region(cls, problem: ProblemSpec, values, mask=None) -> "ControlFunction":
        """Restrict arbitrary per-step values to the region (default omega)."""
        mask = problem.omega if mask is None else mask
        vals = np.where(mask[None, :], np.asarray(values, dtype=float), 0.0)
        return cls(vals, mask, problem.dt)

    def norm_lq(self, grid: Grid, q: float = 2.0) -> float:
        return float((self.dt * grid.cell_volume * np.sum(np.abs(self.values) ** q)) ** (1.0 / q))

    def norm_l2(self, grid: Grid) -> float:
        return self.norm_lq(grid, 2.0)


@dataclass
class TerminalData:
    phi_T: np.ndarray
    phi_eT: np.ndarray

    def __post_init__(self):
        self.phi_T = np.asarray(self.phi_T, dtype=float)
        self.phi_eT = np.asarray(self.phi_eT, dtype=float)
        if not (np.all(np.isfinite(self.phi_T)) and np.all(np.isfinite(self.phi_eT))):
            raise ValueError("terminal data must be finite")

    @classmethod
    def zeros(cls, n: int) -> "TerminalData":
        return cls(np.zeros(n), np.zeros(n))

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "TerminalData":
        n = x.size // 2
        return cls(x[:n].copy(), x[n:].copy())

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.phi_T, self.phi_eT])


def _solver(mat):
    return spla.splu(sp.csc_matrix(mat)).solve


class LinearStepper:
    """Factorised step operators for one (problem, potential) pair.

    Reuse one instance across many forward/adjoint solves; the factorisations
    are the expensive part.
    """

    def __init__(self, problem: ProblemSpec, a=None):
        p = problem
        self.problem = p
        self.potential: PotentialField = p.potential(a)
        n = p.grid.n_nodes
        dt = p.dt
        I = sp.identity(n, format="csr")
        self._base = (p.c_m / dt) * I + p.parabolic_coeff * p.M_e.matrix
        vals = self.potential.values
        if self.potential.is_constant_in_time:
            solve = _solver(self._base + sp.diags(vals[0]))
            self._v_solvers = [solve] * p.n_steps
        else:
            self._v_solvers = [_solver(self._base + sp.diags(row)) for row in vals]
        self._u_solve = _solver((p.epsilon / dt) * I + p.M.matrix)
        self._A_solve = self._u_solve if p.epsilon == 0 else _solver(p.M.matrix)
        self.Ai = p.M_i.matrix

    def elliptic_ue(self, v: np.ndarray, source=None) -> np.ndarray:
        rhs = -(self.Ai @ v)
        if source is not None:
            rhs = rhs + source
        return self._A_solve(rhs)

    def forward(self, v0, ue0, f=None):
        p = self.problem
        N, n = p.n_steps, p.grid.n_nodes
        c_dt, e_dt = p.c_m / p.dt, p.epsilon / p.dt
        V = np.empty((N + 1, n))
        U = np.empty((N + 1, n))
        V[0] = v0
        U[0] = ue0 if p.epsilon > 0 else self.elliptic_ue(V[0])
        for k in range(N):
            rhs = c_dt * V[k]
            if f is not None:
                rhs = rhs + f[k]
            V[k + 1] = self._v_solvers[k](rhs)
            U[k + 1] = self._u_solve(e_dt * U[k] - self.Ai @ V[k + 1])
        return V, U

    def adjoint(self, pT, qT):
        p = self.problem
        N, n = p.n_steps, p.grid.n_nodes
        c_dt, e_dt = p.c_m / p.dt, p.epsilon / p.dt
        P = np.empty((N + 1, n))
        Q = np.empty((N + 1, n))
        P[N] = pT
        Q[N] = qT
        for k in range(N - 1, -1, -1):
            Q[k] = self._u_solve(e_dt * Q[k + 1]) if p.epsilon > 0 else 0.0
            P[k] = self._v_solvers[k](c_dt * P[k + 1] - self.Ai @ Q[k])
        return P, Q


def _control_values(problem: ProblemSpec, control):
    if control is None:
        return None
    vals = control.values if isinstance(control, ControlFunction) else np.asarray(control, dtype=float)
    if vals.shape != (problem.n_steps, problem.grid.n_nodes):
        raise ValueError("control must have one row per time step")
    return vals


def _trajectory(problem: ProblemSpec, **fields) -> Trajectory:
    return Trajectory(problem.grid, problem.dt, fields)


def forward_relaxed_linear(problem: ProblemSpec, potential_a=None, control_f=None, stepper=None) -> Trajectory:
    st = stepper or LinearStepper(problem, potential_a)
    V, U = st.forward(problem.v0, problem.ue0, _control_values(problem, control_f))
    return _trajectory(problem, v=V, ue=U)


def _newton(jac_base, h: Reaction, rhs, guess, step: int):
    v = guess.copy()
    scale = max(1.0, float(np.max(np.abs(rhs))))
    res = np.inf
    for _ in range(NEWTON_MAXITER):
        G = jac_base @ v + h.value(v) - rhs
        res = float(np.max(np.abs(G)))
        if res <= NEWTON_TOL * scale:
            return v
        J = sp.csc_matrix(jac_base + sp.diags(h.derivative(v)))
        dv = spla.spsolve(J, G)
        v = v - dv
        if not np.all(np.isfinite(v)):
            break
        if np.max(np.abs(dv)) <= 1e-15 * max(1.0, float(np.max(np.abs(v)))):
            return v
    raise SolverError(f"Newton failed at step {step}, residual {res:.3e}", res, step)


def forward_relaxed_nonlinear(problem: ProblemSpec, reaction: Reaction, control_f=None) -> Trajectory:
    if reaction.kind == "none":
        return forward_relaxed_linear(problem, None, control_f)
    p = problem
    st = LinearStepper(p)
    f = _control_values(p, control_f)
    N, n = p.n_steps, p.grid.n_nodes
    c_dt, e_dt = p.c_m / p.dt, p.epsilon / p.dt
    V = np.empty((N + 1, n))
    U = np.empty((N + 1, n))
    V[0] = p.v0
    U[0] = p.ue0 if p.epsilon > 0 else st.elliptic_ue(V[0])
    base = st._base.tocsr()
    for k in range(N):
        rhs = c_dt * V[k] + (f[k] if f is not None else 0.0)
        V[k + 1] = _newton(base, reaction, rhs, V[k], k)
        U[k + 1] = st._u_solve(e_dt * U[k] - st.Ai @ V[k + 1])
    return _trajectory(p, v=V, ue=U)


def forward_monodomain(problem: ProblemSpec, reaction_or_potential=None, control_f=None) -> Trajectory:
    """Parabolic-elliptic limit: the relaxed scheme at eps = 0."""
    p0 = problem.replace(epsilon=0.0)
    if isinstance(reaction_or_potential, Reaction):
        return forward_relaxed_nonlinear(p0, reaction_or_potential, control_f)
    return forward_relaxed_linear(p0, reaction_or_potential, control_f)


def forward_bidomain(problem: ProblemSpec, reaction: Reaction | None = None, control_f=None, control_g=None) -> Trajectory:
    """Bidomain model with u_e eliminated through its elliptic constraint.

    Each step solves the coupled implicit system

        c_m/dt v + A_i v + A_i ue + h(v) = c_m/dt v^n + f 1_omega
        A_i v + A ue                     = f 1_omega - g 1_O

    which is the bidomain pair after subtracting the two equations.
    """
    p = problem
    reaction = reaction or Reaction("none")
    f = _control_values(p, control_f)
    g = _control_values(p, control_g)
    N, n = p.n_steps, p.grid.n_nodes
    c_dt = p.c_m / p.dt
    Ai, A = p.M_i.matrix, p.M.matrix
    I = sp.identity(n, format="csr")
    top_left = c_dt * I + Ai
    zero = np.zeros(n)

    V = np.empty((N + 1, n))
    U = np.empty((N + 1, n))
    V[0] = p.v0
    U[0] = spla.spsolve(sp.csc_matrix(A), -(Ai @ V[0]))
    for k in range(N):
        fk = f[k] if f is not None else zero
        gk = g[k] if g is not None else zero
        r1 = c_dt * V[k] + fk
        r2 = fk - gk
        v, u = V[k].copy(), U[k].copy()
        res = np.inf
        scale = max(1.0, float(np.max(np.abs(r1))), float(np.max(np.abs(r2))))
        linear = reaction.kind == "none"
        for it in range(NEWTON_MAXITER):
            F1 = top_left @ v + Ai @ u + reaction.value(v) - r1
            F2 = Ai @ v + A @ u - r2
            res = max(float(np.max(np.abs(F1))), float(np.max(np.abs(F2))))
            if res <= NEWTON_TOL * scale and not (linear and it == 0):
                break
            J = sp.bmat([[top_left + sp.diags(reaction.derivative(v)), Ai], [Ai, A]], format="csc")
            d = spla.spsolve(J, np.concatenate([F1, F2]))
            v, u = v - d[:n], u - d[n:]
            if linear:
                break
        else:
            raise SolverError(f"bidomain Newton failed at step {k}, residual {res:.3e}", res, k)
        V[k + 1], U[k + 1] = v, u
    return _trajectory(p, v=V, ue=U, ui=V + U)


def adjoint_solve(problem: ProblemSpec, potential_a=None, terminal: TerminalData | None = None, stepper=None) -> Trajectory:
    st = stepper or LinearStepper(problem, potential_a)
    terminal = terminal or TerminalData.zeros(problem.grid.n_nodes)
    P, Q = st.adjoint(terminal.phi_T, terminal.phi_eT)
    return _trajectory(problem, phi=P, phi_e=Q)


def duality_terms(problem: ProblemSpec, control_f, terminal: TerminalData, potential_a=None) -> dict:
    """Each inner product of the discrete duality identity, evaluated separately."""
    p = problem
    st = LinearStepper(p, potential_a)
    f = _control_values(p, control_f)
    fwd = forward_relaxed_linear(p, control_f=f, stepper=st)
    adj = adjoint_solve(p, terminal=terminal, stepper=st)
    g = p.grid
    obs = 0.0 if f is None else sum(p.dt * g.inner(f[k], adj["phi"][k]) for k in range(p.n_steps))
    return {
        "terminal_v": p.c_m * g.inner(fwd["v"][-1], terminal.phi_T),
        "terminal_ue": p.epsilon * g.inner(fwd["ue"][-1], terminal.phi_eT),
        "initial_v": p.c_m * g.inner(fwd["v"][0], adj["phi"][0]),
        "initial_ue": p.epsilon * g.inner(fwd["ue"][0], adj["phi_e"][0]),
        "control": obs,
    }


def duality_gap(problem: ProblemSpec, control_f, terminal: TerminalData, potential_a=None) -> float:
    t = duality_terms(problem, control_f, terminal, potential_a)
    return t["terminal_v"] + t["terminal_ue"] - t["initial_v"] - t["initial_ue"] - t["control"]
