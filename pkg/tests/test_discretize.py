import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, strategies as st

from oracles import dense_diffusion_1d, dense_diffusion_2d
from relaxhum.discretize import (SolverError, assemble_diffusion, build_grid, smallest_eigenvalue, solve_spd)

# frozen from the dense loop-assembled oracle (scipy.linalg.eigvalsh)
LAMBDA_MIN_1PX_8 = 14.17616711136241


def test_grid_1d_nodes():
    g = build_grid(1, [1.0], [4])
    assert g.spacing == pytest.approx((0.2,))
    np.testing.assert_allclose(g.coords[:, 0], [0.2, 0.4, 0.6, 0.8])


def test_grid_2d_count():
    g = build_grid(2, [1.0, 1.0], [3, 3])
    assert g.n_nodes == 9
    assert g.coords.shape == (9, 2)


@pytest.mark.parametrize("args", [(1, [1.0], [2]), (3, [1.0] * 3, [4] * 3), (1, [0.0], [4]), (1, [-1.0], [4]),
                                  (2, [1.0], [4, 4])])
def test_grid_rejects(args):
    with pytest.raises(ValueError):
        build_grid(*args)


def test_constant_stencil():
    A = assemble_diffusion(build_grid(1, [1.0], [4]), 1.0).dense()
    np.testing.assert_allclose(np.diag(A), 50.0)
    np.testing.assert_allclose(np.diag(A, 1), -25.0)
    np.testing.assert_allclose(np.diag(A, -1), -25.0)
    assert np.count_nonzero(A) == 4 + 2 * 3


@given(st.floats(0.01, 100.0))
def test_constant_tensor_scales(c):
    g = build_grid(1, [2.0], [7])
    np.testing.assert_allclose(assemble_diffusion(g, c).dense(), c * assemble_diffusion(g, 1.0).dense(), rtol=1e-14)


def test_variable_tensor_matches_loop_oracle_1d():
    g = build_grid(1, [1.0], [8])
    A = assemble_diffusion(g, lambda x: 1.0 + x).dense()
    np.testing.assert_allclose(A, dense_diffusion_1d(8, 1.0, lambda x: 1.0 + x), rtol=1e-13)


def test_smallest_eigenvalue_frozen():
    op = assemble_diffusion(build_grid(1, [1.0], [8]), lambda x: 1.0 + x)
    oracle = scipy.linalg.eigvalsh(dense_diffusion_1d(8, 1.0, lambda x: 1.0 + x))[0]
    assert oracle == pytest.approx(LAMBDA_MIN_1PX_8, rel=1e-12)
    assert smallest_eigenvalue(op) == pytest.approx(LAMBDA_MIN_1PX_8, rel=1e-10)


def test_smallest_eigenvalue_sparse_path():
    op = assemble_diffusion(build_grid(1, [1.0], [100]), 1.0)
    h = 1.0 / 101
    assert smallest_eigenvalue(op) == pytest.approx(4 / h**2 * np.sin(np.pi * h / 2) ** 2, rel=1e-10)


def test_2d_pair_tensor_matches_loop_oracle():
    g = build_grid(2, [1.0, 2.0], [4, 5])
    mx = lambda p: 1.0 + p[:, 0] * p[:, 1]
    my = lambda p: 2.0 + np.sin(p[:, 0])
    A = assemble_diffusion(g, (mx, my)).dense()
    ref = dense_diffusion_2d(4, 5, 1.0, 2.0, lambda x, y: 1.0 + x * y, lambda x, y: 2.0 + np.sin(x))
    np.testing.assert_allclose(A, ref, rtol=1e-13)
    # 5-point pattern
    assert max(np.count_nonzero(r) for r in A) == 5


@given(st.lists(st.floats(0.1, 10.0), min_size=2, max_size=2), st.integers(3, 6), st.integers(3, 6))
def test_symmetric_positive_definite(k, nx, ny):
    g = build_grid(2, [1.0, 1.5], [nx, ny])
    A = assemble_diffusion(g, (lambda p: k[0] + p[:, 0], lambda p: k[1] + p[:, 1] ** 2)).dense()
    np.testing.assert_allclose(A, A.T, atol=0)
    assert scipy.linalg.eigvalsh(A)[0] > 0


@pytest.mark.parametrize("bad", [0.0, -1.0, lambda x: x - 0.5, float("nan")])
def test_rejects_nonpositive_tensor(bad):
    with pytest.raises(ValueError):
        assemble_diffusion(build_grid(1, [1.0], [5]), bad)


@given(st.integers(3, 30), st.floats(0.0, 10.0), st.integers(0, 2**31))
def test_solve_spd_cg_matches_dense(n, shift, seed):
    rng = np.random.default_rng(seed)
    op = assemble_diffusion(build_grid(1, [1.0], [n]), lambda x: 1.0 + x**2)
    b = rng.standard_normal(n)
    ref = np.linalg.solve(op.dense() + shift * np.eye(n), b)
    for method in ("cg", "direct"):
        x = solve_spd(op, b, tol=1e-12, shift=shift, method=method)
        assert np.linalg.norm(x - ref) <= 1e-9 * np.linalg.norm(ref)


def test_solve_spd_zero_rhs():
    op = assemble_diffusion(build_grid(1, [1.0], [5]), 1.0)
    assert not np.any(solve_spd(op, np.zeros(5)))


def test_solve_spd_reports_nonconvergence():
    op = assemble_diffusion(build_grid(1, [1.0], [200]), lambda x: 1.0 + 100 * x)
    with pytest.raises(SolverError) as info:
        solve_spd(op, np.ones(200), tol=1e-14, maxiter=2)
    assert info.value.residual > 1e-14


def test_solve_spd_argument_checks():
    op = assemble_diffusion(build_grid(1, [1.0], [5]), 1.0)
    with pytest.raises(ValueError):
        solve_spd(op, np.ones(5), shift=-1.0)
    with pytest.raises(ValueError):
        solve_spd(op, np.ones(5), method="lu")


def test_inner_product_is_volume_weighted():
    g = build_grid(2, [1.0, 1.0], [3, 3])
    x = np.ones(9)
    assert g.inner(x, x) == pytest.approx(9 * 0.25**2)
    assert g.norm(x) == pytest.approx(np.sqrt(9) * 0.25)
