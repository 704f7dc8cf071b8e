import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_problem
from relaxhum.discretize import build_grid
from relaxhum.dynamics import TerminalData, adjoint_solve, forward_relaxed_nonlinear, read_field_csv
from relaxhum.hum import (ControlResult, HumConfig, HumOperator, default_q, hum_functional, hum_smooth_gradient,
                          nonlinear_control_cubic, nonlinear_control_lipschitz, prox_penalty, q_range,
                          synthesize_control)
from relaxhum.model import Reaction, baseline_problem, make_problem
from relaxhum.weights import make_weights

JSON_KEYS = {"epsilon", "delta", "mode", "control_norm_l2", "control_norm_lq", "q", "terminal_v_norm",
             "terminal_ue_norm", "bound_ratio", "iterations", "converged"}


def tiny_problem(rng, eps=1e-2, T=1.0):
    """6 interior nodes, 5 steps."""
    grid = build_grid(1, [1.0], [6])
    return make_problem(grid, c_m=1.3, mu=0.7, epsilon=eps, M_e=lambda x: 1 + x, omega=((0.2,), (0.7,)),
                        T=T, n_steps=5, v0=rng.standard_normal(6), ue0=rng.standard_normal(6))


def fd_gradient(fun, x, h=1e-5):
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def smooth_part(p, a, weights, mode, x):
    cfg = HumConfig(mode=mode)
    op = HumOperator(p, a, weights, mode)
    n1, n2 = op.block_norms(x)
    return hum_functional(p, a, weights, cfg, TerminalData.from_vector(x)) - cfg.delta * (n1 + n2)


@pytest.mark.parametrize("mode", ["plain", "weighted"])
@pytest.mark.parametrize("eps", [1.0, 1e-2])
def test_gradient_matches_finite_differences(rng, mode, eps):
    p = tiny_problem(rng, eps)
    a = rng.uniform(0, 1, (p.n_steps, p.grid.n_nodes))
    ws = make_weights(p.grid, p.T, [0.45], s0=0.05) if mode == "weighted" else None
    x = rng.standard_normal(2 * p.grid.n_nodes)
    g = hum_smooth_gradient(p, a, ws, TerminalData.from_vector(x)).as_vector() * p.grid.cell_volume
    fd = fd_gradient(lambda z: smooth_part(p, a, ws, mode, z), x)
    np.testing.assert_allclose(g, fd, rtol=1e-6)


def test_gradient_zero_at_rest():
    p = baseline_problem(v0=np.zeros(32), ue0=np.zeros(32))
    g = hum_smooth_gradient(p, terminal=TerminalData.zeros(32))
    assert not np.any(g.phi_T) and not np.any(g.phi_eT)


def test_gradient_second_block_vanishes_at_zero_epsilon(rng):
    p = tiny_problem(rng, eps=0.0)
    g = hum_smooth_gradient(p, terminal=TerminalData(rng.standard_normal(6), rng.standard_normal(6)))
    assert not np.any(g.phi_eT)


def test_functional_zero_terminal():
    assert hum_functional(baseline_problem(), terminal=TerminalData.zeros(32)) == 0.0


@given(st.integers(0, 2**32 - 1))
def test_functional_nonnegative_without_data(seed):
    rng = np.random.default_rng(seed)
    p = tiny_problem(rng)
    p = p.replace(v0=np.zeros(6), ue0=np.zeros(6))
    term = TerminalData(rng.standard_normal(6), rng.standard_normal(6))
    assert hum_functional(p, terminal=term) >= 0.0


def test_functional_recomputed_from_csv(tmp_path, rng):
    p = random_problem(rng)
    term = TerminalData(rng.standard_normal(p.grid.n_nodes), rng.standard_normal(p.grid.n_nodes))
    cfg = HumConfig(delta=0.1)
    J = hum_functional(p, config=cfg, terminal=term)
    adjoint_solve(p, terminal=term).to_csv(tmp_path / "adj.csv")
    fields = read_field_csv(tmp_path / "adj.csv", p.grid)
    P, Q = fields["phi"], fields["phi_e"]
    vol, w = p.grid.cell_volume, p.omega.astype(float)
    ref = (0.5 * p.dt * vol * np.sum(w * P[:-1] ** 2) + p.c_m * vol * p.v0 @ P[0] + p.epsilon * vol * p.ue0 @ Q[0]
           + cfg.delta * (np.sqrt(vol * P[-1] @ P[-1]) + np.sqrt(vol * Q[-1] @ Q[-1])))
    assert J == pytest.approx(ref, rel=1e-12, abs=1e-12)


def test_prox_examples():
    blk = np.array([2.0, 0.0])
    out = prox_penalty(TerminalData(blk, np.array([0.3, 0.4])), 1.0)
    np.testing.assert_allclose(out.phi_T, [1.0, 0.0])
    assert not np.any(out.phi_eT)
    same = prox_penalty(TerminalData(blk, blk), 0.0)
    np.testing.assert_array_equal(same.phi_T, blk)
    zero = prox_penalty(TerminalData(np.zeros(2), np.zeros(2)), 1.0)
    assert not np.any(zero.phi_T)
    with pytest.raises(ValueError):
        prox_penalty(TerminalData(blk, blk), -1.0)


@given(st.lists(st.floats(-10, 10), min_size=8, max_size=8), st.lists(st.floats(-10, 10), min_size=8, max_size=8),
       st.floats(0.0, 5.0))
def test_prox_is_nonexpansive_shrinkage(u, v, tau):
    x, y = np.array(u), np.array(v)
    px = prox_penalty(TerminalData(x[:4], x[4:]), tau).as_vector()
    py = prox_penalty(TerminalData(y[:4], y[4:]), tau).as_vector()
    assert np.linalg.norm(px - py) <= np.linalg.norm(x - y) + 1e-12
    for blk_in, blk_out in ((x[:4], px[:4]), (x[4:], px[4:])):
        nrm = np.linalg.norm(blk_in)
        assert np.linalg.norm(blk_out) == pytest.approx(max(0.0, nrm - tau), abs=1e-12)


def test_zero_data_gives_zero_control():
    p = baseline_problem(v0=np.zeros(32), ue0=np.zeros(32))
    r = synthesize_control(p)
    assert r.converged and r.control_norm_l2 == 0.0 and r.terminal_norm == 0.0


@pytest.fixture(scope="module")
def baseline_result():
    return synthesize_control(baseline_problem(epsilon=1e-2), config=HumConfig(delta=1e-3))


def test_baseline_blockwise_terminal_bound(baseline_result):
    r = baseline_result
    p = baseline_problem(epsilon=1e-2)
    assert r.converged
    assert p.c_m * r.terminal_v_norm <= 1.1e-3
    assert p.epsilon * r.terminal_ue_norm <= 1.1e-3


def test_history_monotone(baseline_result):
    h = np.array(baseline_result.history)
    assert np.all(np.diff(h) <= 1e-12 * np.maximum(1.0, np.abs(h[:-1])))


def test_control_supported_in_omega(baseline_result):
    assert not np.any(baseline_result.control.values[:, ~baseline_problem().omega])


def test_result_json_keys(baseline_result):
    doc = baseline_result.to_json()
    assert set(doc) == JSON_KEYS
    json.dumps(doc)


def test_zero_epsilon_minimiser_drops_second_block():
    r = synthesize_control(baseline_problem(epsilon=0.0))
    assert r.converged
    assert not np.any(r.terminal.phi_eT)


def test_budget_exhaustion_is_flagged():
    r = synthesize_control(baseline_problem(), config=HumConfig(max_iters=1, gtol=1e-12))
    assert not r.converged and r.iterations == 1
    assert np.isfinite(r.terminal_v_norm) and r.terminal_v_norm > 0


def test_config_validation():
    for kw in ({"delta": 0.0}, {"mode": "smooth"}, {"max_iters": 0}):
        with pytest.raises(ValueError):
            HumConfig(**kw)
    with pytest.raises(ValueError):
        HumOperator(baseline_problem(), mode="weighted")


def test_lipschitz_zero_reaction_is_linear_control(baseline_result):
    r = nonlinear_control_lipschitz(baseline_problem(), Reaction())
    assert r.converged and len(r.outer_history) == 1
    np.testing.assert_allclose(r.control.values, baseline_result.control.values, rtol=1e-12, atol=1e-15)


def test_lipschitz_two_starts_agree():
    p = baseline_problem(n=16, n_steps=32)
    h = Reaction("lipschitz", {"L": 1.0})
    r0 = nonlinear_control_lipschitz(p, h)
    free = forward_relaxed_nonlinear(p, h)["v"]
    r1 = nonlinear_control_lipschitz(p, h, z0=free)
    assert r0.converged and r1.converged
    diff = np.sqrt(p.dt * p.grid.cell_volume * np.sum((r0.control.values - r1.control.values) ** 2))
    assert diff <= 1e-6 * max(r0.control_norm_l2, 1e-300)
    assert r0.terminal_v_norm <= 1.1e-3 + 1e-6


def test_lipschitz_rejects_cubic():
    with pytest.raises(ValueError):
        nonlinear_control_lipschitz(baseline_problem(), Reaction("cubic", {"c3": 1.0}))


def test_cubic_zero_data_zero_control():
    p = baseline_problem(v0=np.zeros(32), ue0=np.zeros(32))
    ws = make_weights(p.grid, p.T, [0.5])
    r = nonlinear_control_cubic(p, Reaction("cubic", {"c3": 1.0, "c1": 1.0}), ws)
    assert r.converged and r.control_norm_lq == 0.0 and r.q == 4.0


def test_cubic_requires_weighted_mode():
    p = baseline_problem()
    ws = make_weights(p.grid, p.T, [0.5])
    with pytest.raises(ValueError):
        nonlinear_control_cubic(p, Reaction("cubic", {"c3": 1.0}), ws, HumConfig(mode="plain"))
    with pytest.raises(ValueError):
        nonlinear_control_cubic(p, Reaction("lipschitz", {"L": 1.0}), ws)


def test_q_exponent():
    assert default_q(1) == default_q(2) == 4.0
    assert q_range(1) == (2.0, np.inf)
    lo, hi = q_range(3)
    assert (lo, hi) == (2.5, 10.0) and default_q(3) == 4.0


def test_weighted_mode_runs():
    p = baseline_problem(n=16, n_steps=32)
    ws = make_weights(p.grid, p.T, [0.5])
    r = synthesize_control(p, weights=ws, config=HumConfig(mode="weighted"))
    assert isinstance(r, ControlResult) and r.mode == "weighted"
    assert r.control_norm == r.control_norm_lq
    assert np.isfinite(r.bound_ratio)
