import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from relaxhum.discretize import build_grid
from relaxhum.model import (PotentialField, Reaction, baseline_problem, linearize_integral, linearize_secant,
                            make_problem, reaction_eval)

REACTIONS = [Reaction("lipschitz", {"L": 1.0}), Reaction("lipschitz", {"L": 2.5}),
             Reaction("cubic", {"c3": 1.0, "c1": 1.0}), Reaction("cubic", {"c3": 0.3, "c1": 0.0})]


def test_reaction_values():
    assert reaction_eval(Reaction("cubic", {"c3": 1.0, "c1": 1.0}), 2.0) == pytest.approx(10.0)
    assert reaction_eval(Reaction("lipschitz", {"L": 1.0}), 0.5) == pytest.approx(np.tanh(0.5))
    assert reaction_eval(Reaction(), 3.0) == 0.0


def test_reaction_lipschitz_constants():
    assert Reaction("lipschitz", {"L": 3.0}).lipschitz_constant == 3.0
    assert Reaction().lipschitz_constant == 0.0
    assert Reaction("cubic", {"c3": 1.0}).lipschitz_constant == np.inf


@pytest.mark.parametrize("kind,params", [("quartic", {}), ("lipschitz", {"L": -1.0}),
                                         ("lipschitz", {"L": np.inf}), ("cubic", {"c3": 0.0}),
                                         ("cubic", {"c3": 1.0, "c1": -1.0})])
def test_reaction_rejects(kind, params):
    with pytest.raises(ValueError):
        Reaction(kind, params)


@pytest.mark.parametrize("h", REACTIONS)
def test_secant_at_zero_is_derivative(h):
    assert linearize_secant(h, 0.0) == pytest.approx(float(h.derivative(0.0)))


@pytest.mark.parametrize("h", REACTIONS)
@given(z=st.floats(-5.0, 5.0))
def test_integral_linearisation_matches_quadrature(h, z):
    ref, _ = quad(lambda s: float(h.derivative(s * z)), 0.0, 1.0, epsabs=1e-14, epsrel=1e-13)
    assert linearize_integral(h, z) == pytest.approx(ref, rel=1e-10, abs=1e-12)


@pytest.mark.parametrize("h", REACTIONS)
@given(z=st.floats(-5.0, 5.0).filter(lambda v: abs(v) > 1e-6))
def test_secant_reproduces_reaction(h, z):
    # a(z) z = h(z) for both linearisations, since h(0) = 0
    assert linearize_secant(h, z) * z == pytest.approx(float(h.value(z)), rel=1e-12, abs=1e-15)
    assert linearize_integral(h, z) == pytest.approx(linearize_secant(h, z), rel=1e-12)


def test_integral_linearisation_continuous_at_zero():
    h = Reaction("lipschitz", {"L": 2.0})
    z = np.array([-1e-7, -1e-9, 0.0, 1e-9, 1e-7])
    np.testing.assert_allclose(linearize_integral(h, z), 2.0, rtol=1e-13)


def test_linearisations_vectorised():
    h = Reaction("cubic", {"c3": 1.0, "c1": 1.0})
    z = np.array([[0.0, 1.0], [2.0, -1.0]])
    np.testing.assert_allclose(linearize_secant(h, z), [[1.0, 2.0], [5.0, 2.0]])
    np.testing.assert_allclose(linearize_integral(h, z), [[1.0, 2.0], [5.0, 2.0]])


def test_problem_defaults():
    p = baseline_problem()
    assert p.grid.n_nodes == 32 and p.n_steps == 64 and p.dt == pytest.approx(1 / 64)
    np.testing.assert_array_equal(p.M_i.dense(), p.M_e.scaled(p.mu).dense())
    np.testing.assert_array_equal(p.M.dense(), p.M_i.dense() + p.M_e.dense())
    assert p.parabolic_coeff == pytest.approx(0.5)
    c = p.grid.coords[p.omega, 0]
    assert c.min() >= 0.3 - 1e-12 and c.max() <= 0.7 + 1e-12
    np.testing.assert_allclose(p.cell_times, (np.arange(64) + 0.5) / 64)


@pytest.mark.parametrize("change", [{"c_m": 0.0}, {"mu": -1.0}, {"epsilon": -1e-3}, {"T": 0.0}, {"n_steps": 1},
                                    {"v0": np.full(32, np.nan)}, {"omega": np.zeros(32, dtype=bool)},
                                    {"epsilon": float("nan")}])
def test_problem_validation(change):
    with pytest.raises(ValueError):
        baseline_problem().replace(**change)


def test_potential_normalisation():
    p = make_problem(build_grid(1, [1.0], [5]), n_steps=4)
    assert p.potential().values.shape == (4, 5)
    assert p.potential(2.0).inf_norm == 2.0
    assert p.potential(np.arange(5.0)).is_constant_in_time
    rows = np.arange(20.0).reshape(4, 5)
    assert not p.potential(rows).is_constant_in_time
    with pytest.raises(ValueError):
        p.potential(np.ones((3, 5)))
    with pytest.raises(ValueError):
        PotentialField(np.array([[np.inf]]))
