"""Carleman weights built on an auxiliary function psi.

    phi(x,t)   = exp(lam (psi(x) + m |psi|)) / (t (T - t))
    alpha(x,t) = (exp(lam (psi(x) + m |psi|)) - exp(2 lam m |psi|)) / (t (T - t))

with ``phi*``/``alpha*`` the extremal values over the closed domain.  Products
like ``exp(2 s alpha) phi^8`` are formed in log space; underflow is exact zero.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .discretize import Grid

LAMBDA_GRID = 0.125 * 2.0 ** (np.arange(0, 97) / 8.0)  # 0.125 .. 512


@dataclass(frozen=True)
class PsiProfile:
    """psi(x) = prod_k sigma_k (1 - sigma_k); each factor peaks at the centre coordinate."""

    extents: tuple
    center: tuple

    def _factor(self, x: np.ndarray, L: float, xc: float):
        if xc >= L / 2:
            r = np.log(0.5) / np.log(xc / L)
            u = x / L
            sigma = u**r
            dsigma = r * u ** (r - 1) / L
        else:
            # mirrored so the exponent stays >= 1
            r = np.log(0.5) / np.log(1.0 - xc / L)
            u = 1.0 - x / L
            sigma = 1.0 - u**r
            dsigma = r * u ** (r - 1) / L
        return sigma * (1.0 - sigma), dsigma * (1.0 - 2.0 * sigma)

    def __call__(self, x) -> np.ndarray:
        return self.value_and_grad(x)[0]

    def value_and_grad(self, x):
        x = np.asarray(x, dtype=float)
        pts = x.reshape(-1, len(self.extents)) if len(self.extents) > 1 else x.reshape(-1, 1)
        vals, ders = zip(*(self._factor(pts[:, k], L, c) for k, (L, c) in enumerate(zip(self.extents, self.center))))
        value = np.prod(vals, axis=0)
        grad = np.empty_like(pts)
        for k in range(pts.shape[1]):
            others = [vals[j] for j in range(pts.shape[1]) if j != k]
            grad[:, k] = ders[k] * (np.prod(others, axis=0) if others else 1.0)
        shape = x.shape if len(self.extents) == 1 else x.shape[:-1]
        return value.reshape(shape), grad

    @property
    def norm(self) -> float:
        return 0.25 ** len(self.extents)


def build_psi(grid: Grid, omega0_center) -> PsiProfile:
    center = tuple(float(c) for c in np.atleast_1d(omega0_center))
    if len(center) != grid.dim:
        raise ValueError("centre needs one coordinate per axis")
    for c, L in zip(center, grid.extents):
        if not 0.0 < c < L:
            raise ValueError(f"centre {center} is not strictly inside the domain")
    return PsiProfile(grid.extents, center)


@dataclass(frozen=True)
class WeightSet:
    psi: PsiProfile
    psi_nodes: np.ndarray  # psi at interior nodes
    lam: float
    s: float
    m: float
    T: float

    def __post_init__(self):
        if self.m <= 1:
            raise ValueError("weights need m > 1")
        if self.lam <= 0 or self.s <= 0 or self.T <= 0:
            raise ValueError("lambda, s and T must be positive")

    @property
    def psi_norm(self) -> float:
        return self.psi.norm

    # log-space building blocks ------------------------------------------------
    def log_phi(self, psi_vals, t):
        t = np.asarray(t, dtype=float)
        return self.lam * (np.asarray(psi_vals) + self.m * self.psi_norm) - np.log(t * (self.T - t))

    def alpha(self, psi_vals, t):
        t = np.asarray(t, dtype=float)
        num = np.exp(self.lam * (np.asarray(psi_vals) + self.m * self.psi_norm)) - np.exp(2 * self.lam * self.m * self.psi_norm)
        return num / (t * (self.T - t))

    def alpha_star(self, t):
        t = np.asarray(t, dtype=float)
        p = self.psi_norm
        return (np.exp(self.lam * (self.m + 1) * p) - np.exp(2 * self.lam * self.m * p)) / (t * (self.T - t))

    def phi_star(self, t):
        t = np.asarray(t, dtype=float)
        return np.exp(self.lam * self.m * self.psi_norm) / (t * (self.T - t))

    def dt_alpha_star(self, t):
        t = np.asarray(t, dtype=float)
        p = self.psi_norm
        K = np.exp(self.lam * (self.m + 1) * p) - np.exp(2 * self.lam * self.m * p)
        return -K * (self.T - 2 * t) / (t * (self.T - t)) ** 2

    def weight(self, times, alpha_power: float, phi_power: float, psi_vals=None) -> np.ndarray:
        """``exp(alpha_power s alpha) phi^phi_power`` on a (time, node) table."""
        psi_vals = self.psi_nodes if psi_vals is None else psi_vals
        t = np.asarray(times, dtype=float)[:, None]
        expo = alpha_power * self.s * self.alpha(psi_vals[None, :], t) + phi_power * self.log_phi(psi_vals[None, :], t)
        return np.exp(expo)

    def control_weight(self, times) -> np.ndarray:
        """The HUM weight exp(2 s alpha) phi^8."""
        return self.weight(times, 2.0, 8.0)


def eval_weights(ws: WeightSet, x, t):
    """Return ``(phi, alpha, phi_star, alpha_star)`` at points ``x`` and time ``t``."""
    t = float(t)
    if not 0.0 < t < ws.T:
        raise ValueError("weights are singular at t = 0 and t = T")
    psi_vals = ws.psi(x)
    return (np.exp(ws.log_phi(psi_vals, t)), ws.alpha(psi_vals, t), float(ws.phi_star(t)), float(ws.alpha_star(t)))


def _alpha_order_holds(psi_vals: np.ndarray, lam: float, m: float, psi_norm: float) -> bool:
    # 3 alpha* <= 2 alpha with the common 1/(t(T-t)) factor dropped
    lhs = 3.0 * (np.exp(lam * (m + 1) * psi_norm) - np.exp(2 * lam * m * psi_norm))
    rhs = 2.0 * (np.exp(lam * (np.asarray(psi_vals) + m * psi_norm)) - np.exp(2 * lam * m * psi_norm))
    return bool(np.all(lhs <= rhs))


def check_alpha_order(ws: WeightSet) -> bool:
    """3 alpha* <= 2 alpha at every interior node and on the boundary (psi = 0)."""
    vals = np.concatenate([ws.psi_nodes, [0.0]])
    return _alpha_order_holds(vals, ws.lam, ws.m, ws.psi_norm)


def choose_lambda(ws: WeightSet) -> float:
    """Smallest lambda on the geometric search grid satisfying 3 alpha* <= 2 alpha."""
    vals = np.concatenate([ws.psi_nodes, [0.0]])
    for lam in LAMBDA_GRID:
        if _alpha_order_holds(vals, lam, ws.m, ws.psi_norm):
            return float(lam)
    raise ValueError(f"no lambda <= {LAMBDA_GRID[-1]} satisfies 3 alpha* <= 2 alpha")


def choose_s(T: float, a_inf_norm: float, s0: float) -> float:
    if T <= 0 or a_inf_norm < 0 or s0 <= 0:
        raise ValueError("need T > 0, ||a|| >= 0, s0 > 0")
    a = a_inf_norm
    return s0 * (T + (1.0 + a ** (2.0 / 3.0) + a ** (2.0 / 5.0)) * T**2 + T**4)


def make_weights(grid: Grid, T: float, omega0_center, *, m: float = 2.0, s0: float = 1.0,
                 a_inf_norm: float = 0.0, lam: float | None = None) -> WeightSet:
    """Build psi, then pick lambda and s by the standard rules unless given."""
    psi = build_psi(grid, omega0_center)
    draft = WeightSet(psi, psi(grid.coords if grid.dim > 1 else grid.coords[:, 0]), 1.0, 1.0, m, T)
    lam = choose_lambda(draft) if lam is None else lam
    return replace(draft, lam=float(lam), s=choose_s(T, a_inf_norm, s0))
