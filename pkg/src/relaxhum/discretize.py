"""Uniform grids, Dirichlet diffusion operators and SPD solves.

Fields are plain 1-D numpy arrays holding one value per interior node.  In 2-D
the node index is ``i * ny + j`` (``indexing="ij"`` raveled in C order).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DENSE_LIMIT = 1000

TensorSpec = Union[float, Callable[[np.ndarray], np.ndarray]]


class SolverError(RuntimeError):
    """A linear or nonlinear solve failed to reach its tolerance."""

    def __init__(self, message: str, residual: float = float("nan"), step: int | None = None):
        super().__init__(message)
        self.residual = residual
        self.step = step


@dataclass(frozen=True)
class Grid:
    dim: int
    extents: tuple
    n_cells: tuple

    @property
    def spacing(self) -> tuple:
        return tuple(L / (n + 1) for L, n in zip(self.extents, self.n_cells))

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.n_cells))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axis_nodes(self, axis: int, boundary: bool = False) -> np.ndarray:
        n, h = self.n_cells[axis], self.spacing[axis]
        idx = np.arange(0, n + 2) if boundary else np.arange(1, n + 1)
        return idx * h

    def _mesh(self, boundary: bool) -> np.ndarray:
        axes = [self.axis_nodes(a, boundary) for a in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @property
    def coords(self) -> np.ndarray:
        """Interior node coordinates, shape ``(n_nodes, dim)``."""
        return self._mesh(boundary=False)

    @property
    def full_coords(self) -> np.ndarray:
        """Coordinates including the boundary layer, shape ``(prod(n+2), dim)``."""
        return self._mesh(boundary=True)

    @property
    def full_shape(self) -> tuple:
        return tuple(n + 2 for n in self.n_cells)

    def inner(self, x: np.ndarray, y: np.ndarray) -> float:
        """Discrete L2(Omega) inner product."""
        return self.cell_volume * float(np.dot(x, y))

    def norm(self, x: np.ndarray) -> float:
        return float(np.sqrt(self.cell_volume) * np.linalg.norm(x))

    def window_mask(self, lo: Sequence[float], hi: Sequence[float]) -> np.ndarray:
        """Boolean mask of interior nodes inside the closed box ``[lo, hi]``."""
        c = self.coords
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        tol = 1e-12 * max(self.extents)
        return np.all((c >= lo - tol) & (c <= hi + tol), axis=1)


def build_grid(dim: int, extents: Sequence[float], n_cells: Sequence[int]) -> Grid:
    if dim not in (1, 2):
        raise ValueError(f"dim must be 1 or 2, got {dim}")
    extents = tuple(float(e) for e in np.atleast_1d(extents))
    n_cells = tuple(int(n) for n in np.atleast_1d(n_cells))
    if len(extents) != dim or len(n_cells) != dim:
        raise ValueError("extents and n_cells need one entry per axis")
    if any(not np.isfinite(e) or e <= 0 for e in extents):
        raise ValueError(f"extents must be positive, got {extents}")
    if any(n < 3 for n in n_cells):
        raise ValueError(f"need at least 3 interior nodes per axis, got {n_cells}")
    return Grid(dim, extents, n_cells)


@dataclass(frozen=True)
class DiffusionOperator:
    """Sparse SPD matrix for ``-div(M grad .)`` with homogeneous Dirichlet data."""

    grid: Grid
    tensor: tuple  # per-axis conductivity at interior nodes
    matrix: sp.csr_matrix = field(repr=False)

    def __matmul__(self, x):
        return self.matrix @ x

    def __add__(self, other: "DiffusionOperator") -> "DiffusionOperator":
        if other.grid != self.grid:
            raise ValueError("operators live on different grids")
        tensor = tuple(a + b for a, b in zip(self.tensor, other.tensor))
        return DiffusionOperator(self.grid, tensor, (self.matrix + other.matrix).tocsr())

    def scaled(self, c: float) -> "DiffusionOperator":
        return DiffusionOperator(self.grid, tuple(c * t for t in self.tensor), (c * self.matrix).tocsr())

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


def _evaluate_tensor(spec: TensorSpec, grid: Grid) -> np.ndarray:
    pts = grid.full_coords
    if callable(spec):
        vals = np.asarray(spec(pts if grid.dim > 1 else pts[:, 0]), dtype=float)
        vals = np.broadcast_to(vals, (pts.shape[0],)).copy()
    else:
        vals = np.full(pts.shape[0], float(spec))
    if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
        raise ValueError("conductivity must be strictly positive (ellipticity)")
    return vals.reshape(grid.full_shape)


def _difference_1d(n: int) -> sp.csr_matrix:
    # rows: the n+1 interfaces; columns: interior nodes (boundary values are zero)
    rows = np.concatenate([np.arange(n), np.arange(1, n + 1)])
    cols = np.concatenate([np.arange(n), np.arange(n)])
    vals = np.concatenate([np.ones(n), -np.ones(n)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n + 1, n))


def _harmonic(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return 2.0 * a * b / (a + b)


def assemble_diffusion(grid: Grid, tensor) -> DiffusionOperator:
    """Assemble ``D^T K D / h^2`` summed over axes.

    ``tensor`` is a positive scalar, a callable of the coordinates, or in 2-D a
    pair of those giving the diagonal entries ``(M_xx, M_yy)``.  Interface
    conductivities are harmonic means of the neighbouring node values.
    """
    if grid.dim == 2 and isinstance(tensor, (tuple, list)):
        specs = tuple(tensor)
        if len(specs) != 2:
            raise ValueError("2-D tensor must be a diagonal pair")
    else:
        specs = (tensor,) * grid.dim

    full = [_evaluate_tensor(s, grid) for s in specs]
    interior = tuple(f[(slice(1, -1),) * grid.dim].ravel() for f in full)

    if grid.dim == 1:
        (n,), (h,) = grid.n_cells, grid.spacing
        k = _harmonic(full[0][:-1], full[0][1:])
        D = _difference_1d(n)
        A = D.T @ sp.diags(k / h**2) @ D
    else:
        (nx, ny), (hx, hy) = grid.n_cells, grid.spacing
        Mx, My = full
        kx = _harmonic(Mx[:-1, 1:-1], Mx[1:, 1:-1])  # (nx+1, ny)
        ky = _harmonic(My[1:-1, :-1], My[1:-1, 1:])  # (nx, ny+1)
        Dx = sp.kron(_difference_1d(nx), sp.identity(ny), format="csr")
        Dy = sp.kron(sp.identity(nx), _difference_1d(ny), format="csr")
        A = Dx.T @ sp.diags(kx.ravel() / hx**2) @ Dx + Dy.T @ sp.diags(ky.ravel() / hy**2) @ Dy
    return DiffusionOperator(grid, interior, sp.csr_matrix(A))


def smallest_eigenvalue(op: DiffusionOperator) -> float:
    """Smallest eigenvalue via shift-invert Lanczos (dense for tiny grids)."""
    n = op.matrix.shape[0]
    if n <= 64:
        return float(scipy.linalg.eigvalsh(op.dense(), subset_by_index=[0, 0])[0])
    val = spla.eigsh(op.matrix.tocsc(), k=1, sigma=0.0, which="LM", return_eigenvectors=False)
    return float(val[0])


def solve_spd(
    A,
    rhs: np.ndarray,
    tol: float = 1e-12,
    shift: float = 0.0,
    method: str = "cg",
    maxiter: int | None = None,
) -> np.ndarray:
    """Solve ``(shift*I + A) x = rhs`` for SPD ``A``.

    ``method="cg"`` runs Jacobi-preconditioned conjugate gradients until the
    residual drops below ``tol * ||rhs||``; ``method="direct"`` uses a dense
    Cholesky factorisation and is limited to small systems.
    """
    if shift < 0:
        raise ValueError("shift must be non-negative")
    if tol <= 0:
        raise ValueError("tol must be positive")
    M = A.matrix if isinstance(A, DiffusionOperator) else A
    M = sp.csr_matrix(M)
    n = M.shape[0]
    if shift:
        M = (M + shift * sp.identity(n, format="csr")).tocsr()
    rhs = np.asarray(rhs, dtype=float)
    bnorm = np.linalg.norm(rhs)
    if bnorm == 0.0:
        return np.zeros(n)

    if method == "direct":
        if n > DENSE_LIMIT:
            raise ValueError(f"dense solve limited to {DENSE_LIMIT} unknowns")
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(M.toarray()), rhs)
    if method != "cg":
        raise ValueError(f"unknown method {method!r}")

    inv_diag = 1.0 / M.diagonal()
    precond = spla.LinearOperator((n, n), matvec=lambda r: inv_diag * r)
    maxiter = maxiter or 10 * n
    x, info = spla.cg(M, rhs, rtol=tol, atol=0.0, maxiter=maxiter, M=precond)
    res = np.linalg.norm(rhs - M @ x)
    if info != 0 or res > tol * bnorm * (1 + 1e-8):
        raise SolverError(f"CG stopped after {maxiter} iterations, relative residual {res / bnorm:.3e}", res / bnorm)
    return x
