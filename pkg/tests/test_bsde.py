import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from conftest import models
from mppctl.bsde import (
    DriftField, KernelField, LinearSolution, apriori_bounds, apriori_check, bsde_residual,
    bsde_residuals, energy_identity_check, ito_identity_check, linear_estimate_constants,
    residual_convergence,
)
from mppctl.errors import BetaTooSmall
from mppctl.hjb import hjb_march
from mppctl.instances import constant_model, instance_single_state
from mppctl.sim import Trajectory, simulate_reference_batch


# ---------------------------------------------------------------- Itô lemma

def test_ito_trivial_constant(d2):
    tr = Trajectory(0.0, 0, ((0.2, 1), (0.7, 0)))
    res = ito_identity_check(d2, DriftField.zero(d2), KernelField.zero(d2), [0.3, -0.2], tr)
    assert res.residual_prima == 0.0 and res.residual_seconda == 0.0


def test_ito_no_jumps(d2):
    rng = np.random.default_rng(0)
    f = DriftField.random(d2, rng)
    res = ito_identity_check(d2, f, KernelField.zero(d2), [0.1, 0.2], Trajectory(0.0, 1, ()))
    expected = f.values[0, 1] * 1.2 * 0.5 + f.values[1, 1] * 0.8 * 0.5
    assert res.lhs == pytest.approx(expected, abs=1e-15)
    assert res.residual_prima <= 1e-12 and res.residual_seconda <= 1e-12


def test_ito_random_fields_d2(d2):
    rng = np.random.default_rng(1)
    batch = simulate_reference_batch(d2, 0.0, 0, np.arange(1000), seed=41)
    for tr in batch.trajectories():
        res = ito_identity_check(d2, DriftField.random(d2, rng), KernelField.random(d2, rng),
                                 rng.uniform(-1, 1, 2), tr)
        assert res.ok


@given(models(), st.integers(0, 2**31), st.floats(0.0, 0.9))
def test_ito_property(model, seed, frac):
    rng = np.random.default_rng(seed)
    t0 = frac * model.horizon
    batch = simulate_reference_batch(model, t0, 0, np.arange(5), seed=seed)
    for tr in batch.trajectories():
        res = ito_identity_check(model, DriftField.random(model, rng), KernelField.random(model, rng),
                                 rng.uniform(-1, 1, model.n_states), tr)
        assert res.ok


def test_ito_lhs_matches_direct_construction():
    model = constant_model(rate=1.0, n_states=2, phi=[0.5, 0.5])
    f = DriftField(np.array([[1.0, 2.0]]))
    V = KernelField(np.array([[[0.0, 1.0], [0.5, 0.0]]]))
    tr = Trajectory(0.0, 0, ((0.5, 1),))
    res = ito_identity_check(model, f, V, [0.0, 0.0], tr)
    # v(t,x) = t (f(x) - sum_y V(x,y) phi(y)) + 1{t>=0.5} V(x, 1)
    v_T_1 = 1.0 * (2.0 - 0.25) + 0.0
    assert res.lhs == pytest.approx(v_T_1)


def test_field_validation(d2):
    with pytest.raises(ValueError):
        DriftField(np.full((2, 2), np.nan))
    with pytest.raises(ValueError):
        KernelField(np.zeros((2, 2, 3)))


# ---------------------------------------------------------------- BSDE residual

def test_residual_single_state():
    model = instance_single_state()
    v = hjb_march(model, 10)
    batch = simulate_reference_batch(model, 0.0, 0, np.arange(200), seed=42)
    assert bsde_residuals(model, v, batch).max() <= 1e-12


def test_residual_d1_exact(d1):
    v = hjb_march(d1)
    batch = simulate_reference_batch(d1, 0.0, 0, np.arange(500), seed=43)
    assert bsde_residuals(d1, v, batch).max() <= 1e-10


def test_residual_d2_fine(d2):
    v = hjb_march(d2, 500)
    batch = simulate_reference_batch(d2, 0.0, 0, np.arange(1000), seed=44)
    assert bsde_residuals(d2, v, batch).max() <= 1e-3


def test_residual_single_path_matches_batch(d2):
    v = hjb_march(d2, 20)
    batch = simulate_reference_batch(d2, 0.0, 1, np.arange(20), seed=45)
    bulk = bsde_residuals(d2, v, batch)
    for i, tr in enumerate(batch.trajectories()):
        assert bsde_residual(d2, v, tr) == pytest.approx(bulk[i], abs=1e-15)


def test_residual_first_order(d2):
    study = residual_convergence(d2, (50, 150, 500), n_paths=1000, seed=46)
    assert study.fine_cells == [100, 300, 1000]
    assert 0.8 <= study.slope <= 1.5


# ---------------------------------------------------------------- energy identity

def test_linear_solution_matches_march():
    # a linear BSDE is an HJB system with one action and r = 1
    model = constant_model(rate=1.3, cells=3, n_states=3, phi=[0.2, 0.5, 0.3], running_cost=[[0.4], [-0.2], [0.9]],
                           terminal_cost=[1.0, 0.0, -0.5])
    sol = LinearSolution(model, DriftField(model.running_cost[:, :, 0]))
    v = hjb_march(model, 4000)
    np.testing.assert_allclose(sol.nodes_values[0], v.values[0], atol=1e-3)
    mid = sol.at(np.array([1]), np.array([0.5]))[0]
    np.testing.assert_allclose(mid, v.at(0.5), atol=1e-3)


def test_energy_trivial(d2):
    zero = d2.with_updates(terminal_cost=np.zeros(2))
    rep = energy_identity_check(zero, DriftField.zero(zero), 2.0, 200, seed=47)
    assert rep.lhs == 0.0 and rep.rhs == 0.0


def test_energy_single_state_deterministic():
    model = instance_single_state()
    rep = energy_identity_check(model, DriftField(model.running_cost[:, :, 0]), 2.0, 50, seed=48)
    assert rep.rel_error <= 1e-10
    # closed form: Y_t = g + c (T - t), A_t = t
    c, g, b = 0.7, 0.3, 2.0
    y = lambda t: g + c * (1 - t)  # noqa: E731
    rhs = math.exp(b) * g * g + 2 * quad(lambda t: math.exp(b * t) * y(t) * c, 0, 1)[0]
    assert rep.rhs == pytest.approx(rhs, rel=1e-12)


def test_energy_d2(d2):
    rep = energy_identity_check(d2, DriftField(d2.running_cost[:, :, 0]), 2.0, 100_000, seed=49)
    assert rep.passed()
    assert rep.bound_passed()


@given(models(), st.floats(0.5, 5.0))
def test_energy_property(model, beta):
    rng = np.random.default_rng(0)
    rep = energy_identity_check(model, DriftField.random(model, rng), beta, 4000, seed=50)
    assert abs(rep.lhs - rep.rhs) <= 4 * rep.combined_se + 1e-9 * max(1.0, abs(rep.lhs))


def test_linear_constants():
    assert linear_estimate_constants(1.0) == (8.0, 16.0)


# ---------------------------------------------------------------- a priori estimates

def test_apriori_identical_models(d2):
    rep = apriori_check(d2, d2, 2.0, 500, seed=51, substeps=50)
    assert rep.y_norm == 0.0 and rep.z_norm == 0.0
    assert rep.xi_term == 0.0 and rep.f_term == 0.0
    assert rep.y_ok and rep.z_ok


def test_apriori_terminal_shift(d2):
    c = 0.25
    other = d2.with_updates(terminal_cost=d2.terminal_cost - c)
    beta = 2.0
    rep = apriori_check(d2, other, beta, 2000, seed=52, substeps=50)
    # Ybar = c, Zbar = 0 exactly
    expected = c * c * (math.exp(beta * d2.A_T) - 1.0) / beta
    assert rep.y_norm == pytest.approx(expected, rel=1e-10)
    assert rep.z_norm == pytest.approx(0.0, abs=1e-20)
    assert rep.xi_term == pytest.approx(math.exp(beta * d2.A_T) * c * c)
    assert rep.y_ok and rep.z_ok


def test_apriori_perturbed_cost(d2):
    other = d2.with_updates(running_cost=d2.running_cost + 0.1)
    rep = apriori_check(d2, other, 2.0, 5000, seed=53, substeps=100)
    assert rep.y_ok and rep.z_ok
    assert rep.f_term > 0


def test_apriori_quadratic_scaling(d2):
    small = apriori_check(d2, d2.with_updates(running_cost=d2.running_cost + 0.01), 2.0, 2000, 54, substeps=100)
    big = apriori_check(d2, d2.with_updates(running_cost=d2.running_cost + 0.1), 2.0, 2000, 54, substeps=100)
    assert big.y_norm >= 50 * small.y_norm


def test_apriori_state_dependent_perturbation(d2):
    bump = np.zeros(d2.running_cost.shape)
    bump[:, 1, :] = 0.2
    other = d2.with_updates(running_cost=d2.running_cost + bump)
    rep = apriori_check(d2, other, 2.0, 5000, seed=55, substeps=100)
    assert rep.z_norm > 0
    assert rep.y_ok and rep.z_ok


def test_apriori_beta_too_small(d2):
    with pytest.raises(BetaTooSmall):
        apriori_check(d2, d2, 1.0, 10, seed=0)


def test_apriori_bounds_formula():
    y, z = apriori_bounds(2.0, 1.0, 1.0)
    assert y == pytest.approx(1.0 + 1.0)
    assert z == pytest.approx(10.0 + 9.0)
