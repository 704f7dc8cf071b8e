"""Problem data for the relaxed monodomain system: constants, tensors, reactions."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .discretize import DiffusionOperator, Grid, assemble_diffusion, build_grid

REACTION_KINDS = ("none", "lipschitz", "cubic")


@dataclass(frozen=True)
class Reaction:
    """Ionic current ``h`` with ``h(0) = 0``.

    * ``none``: h = 0
    * ``lipschitz``: h(v) = L tanh(v), params ``{"L": ...}``
    * ``cubic``: h(v) = c3 v^3 + c1 v, params ``{"c3": ..., "c1": ...}``
    """

    kind: str = "none"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in REACTION_KINDS:
            raise ValueError(f"unknown reaction kind {self.kind!r}")
        if self.kind == "lipschitz":
            L = self.params.get("L", 1.0)
            if not np.isfinite(L) or L < 0:
                raise ValueError("lipschitz reaction needs a finite L >= 0")
        if self.kind == "cubic":
            if self.params.get("c3", 1.0) <= 0:
                raise ValueError("cubic reaction needs c3 > 0")
            if self.params.get("c1", 0.0) < 0:
                raise ValueError("cubic reaction needs c1 >= 0")

    @property
    def lipschitz_constant(self) -> float:
        if self.kind == "none":
            return 0.0
        if self.kind == "lipschitz":
            return float(self.params.get("L", 1.0))
        return float("inf")

    def value(self, v):
        v = np.asarray(v, dtype=float)
        if self.kind == "none":
            return np.zeros_like(v)
        if self.kind == "lipschitz":
            return self.params.get("L", 1.0) * np.tanh(v)
        return self.params.get("c3", 1.0) * v**3 + self.params.get("c1", 0.0) * v

    def derivative(self, v):
        v = np.asarray(v, dtype=float)
        if self.kind == "none":
            return np.zeros_like(v)
        if self.kind == "lipschitz":
            return self.params.get("L", 1.0) / np.cosh(v) ** 2
        return 3.0 * self.params.get("c3", 1.0) * v**2 + self.params.get("c1", 0.0)


def reaction_eval(reaction: Reaction, v):
    return reaction.value(v)


def linearize_secant(reaction: Reaction, z):
    """``h(z)/z`` away from zero and ``h'(0)`` at zero."""
    z = np.asarray(z, dtype=float)
    out = np.array(reaction.derivative(np.zeros_like(z)), dtype=float)
    nz = z != 0
    out[nz] = reaction.value(z[nz]) / z[nz]
    return out if out.ndim else float(out)


def linearize_integral(reaction: Reaction, z):
    """Closed form of ``int_0^1 h'(s z) ds`` for the built-in kinds."""
    z = np.asarray(z, dtype=float)
    if reaction.kind == "none":
        out = np.zeros_like(z)
    elif reaction.kind == "cubic":
        out = reaction.params.get("c3", 1.0) * z**2 + reaction.params.get("c1", 0.0)
    else:
        # L tanh(z)/z, with the removable singularity filled by h'(0) = L
        L = reaction.params.get("L", 1.0)
        out = np.full_like(z, L)
        nz = np.abs(z) > 1e-8
        out[nz] = L * np.tanh(z[nz]) / z[nz]
        small = ~nz
        out[small] = L * (1.0 - z[small] ** 2 / 3.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class PotentialField:
    """Zeroth-order coefficient ``a(t, x)``; row ``n`` is used on step ``n -> n+1``."""

    values: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("potential must be finite")

    @property
    def inf_norm(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    @property
    def is_constant_in_time(self) -> bool:
        return bool(np.all(self.values == self.values[:1]))


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    grid: Grid
    c_m: float
    mu: float
    epsilon: float
    M_i: DiffusionOperator
    M_e: DiffusionOperator
    omega: np.ndarray  # boolean mask over interior nodes
    T: float
    n_steps: int
    v0: np.ndarray
    ue0: np.ndarray

    def __post_init__(self):
        if self.c_m <= 0:
            raise ValueError("c_m must be positive")
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be >= 0")
        if self.T <= 0:
            raise ValueError("T must be positive")
        if self.n_steps < 2:
            raise ValueError("need at least 2 time steps")
        n = self.grid.n_nodes
        if self.omega.shape != (n,) or self.omega.dtype != bool:
            raise ValueError("omega must be a boolean mask over interior nodes")
        if not self.omega.any():
            raise ValueError("control region omega is empty")
        for name in ("v0", "ue0"):
            arr = getattr(self, name)
            if arr.shape != (n,) or not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be a finite field on the grid")

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def parabolic_coeff(self) -> float:
        return self.mu / (self.mu + 1.0)

    @cached_property
    def M(self) -> DiffusionOperator:
        # summed matrices, so A = A_i + A_e holds to the last bit
        return self.M_i + self.M_e

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_steps + 1)

    @property
    def cell_times(self) -> np.ndarray:
        return (np.arange(self.n_steps) + 0.5) * self.dt

    def replace(self, **changes) -> "ProblemSpec":
        kw = {k: getattr(self, k) for k in self.__dataclass_fields__}
        kw.update(changes)
        return ProblemSpec(**kw)

    def potential(self, a=None) -> PotentialField:
        """Normalise ``a`` (None, scalar, per-node, or per-step array) to a PotentialField."""
        shape = (self.n_steps, self.grid.n_nodes)
        if isinstance(a, PotentialField):
            vals = a.values
        elif a is None:
            vals = np.zeros(shape)
        else:
            vals = np.broadcast_to(np.asarray(a, dtype=float), shape).copy()
        if vals.shape != shape:
            raise ValueError(f"potential must have shape {shape}")
        return PotentialField(vals)


def make_problem(
    grid: Grid,
    *,
    c_m: float = 1.0,
    mu: float = 1.0,
    epsilon: float = 1e-2,
    M_e=1.0,
    M_i=None,
    omega: Sequence[Sequence[float]] | np.ndarray = ((0.3,), (0.7,)),
    T: float = 1.0,
    n_steps: int = 64,
    v0=None,
    ue0=None,
) -> ProblemSpec:
    """Assemble operators and masks into a ProblemSpec.

    ``M_i`` defaults to ``mu * M_e``, the proportional case in which the
    bidomain model reduces to the monodomain one.  ``v0``/``ue0`` may be arrays
    or callables of the node coordinates.
    """
    Ae = assemble_diffusion(grid, M_e)
    Ai = Ae.scaled(mu) if M_i is None else assemble_diffusion(grid, M_i)
    if isinstance(omega, np.ndarray) and omega.dtype == bool:
        mask = omega
    else:
        lo, hi = omega
        mask = grid.window_mask(lo, hi)

    def field_of(spec):
        if spec is None:
            return np.zeros(grid.n_nodes)
        if callable(spec):
            c = grid.coords
            return np.asarray(spec(c[:, 0] if grid.dim == 1 else c), dtype=float)
        return np.asarray(spec, dtype=float)

    return ProblemSpec(grid, float(c_m), float(mu), float(epsilon), Ai, Ae, mask, float(T), int(n_steps),
                       field_of(v0), field_of(ue0))


def baseline_problem(epsilon: float = 1e-2, n: int = 32, n_steps: int = 64, T: float = 1.0, **kw) -> ProblemSpec:
    """1-D unit interval, control on [0.3, 0.7], v0 = sin(pi x), ue0 = 0.5 sin(2 pi x)."""
    grid = build_grid(1, [1.0], [n])
    kw.setdefault("v0", lambda x: np.sin(np.pi * x))
    kw.setdefault("ue0", lambda x: 0.5 * np.sin(2 * np.pi * x))
    return make_problem(grid, epsilon=epsilon, n_steps=n_steps, T=T, **kw)
