import warnings

import numpy as np
import pytest

from conftest import bs_model, linked_model
from rdsys.errors import ConvergenceError, UsageError
from rdsys.fixed_point import (FeynmanKacOperator, McConfig, apply_F, beta_norm, default_beta,
                               iterate_to_fixed_point, kappa_bound, theoretical_rate)
from rdsys.grid import GridSpec, ValueField
from rdsys.model import EXPONENTIAL, ClaimSpec, Payoff


def small_operator(model, claim, nt=5, nx=7, paths=400, seed=0):
    t = np.linspace(0.0, model.T, nt + 1)
    x = GridSpec(0.7, 1.4, nx, "log-uniform").nodes()
    return FeynmanKacOperator(model, claim, t, (x,), McConfig(paths=paths, seed=seed))


def test_beta_norm_weights_early_times():
    t = np.linspace(0.0, 1.0, 3)
    x = (np.array([1.0, 2.0]),)
    v = ValueField(t, x, np.zeros((3, 2, 1)))
    w = ValueField(t, x, np.zeros((3, 2, 1)))
    w.values[0] = 1.0
    assert beta_norm(v, w, 0.0) == 1.0
    assert beta_norm(v, w, 2.0) == pytest.approx(np.exp(-2.0))
    other = ValueField(t[:2], x, np.zeros((2, 2, 1)))
    with pytest.raises(UsageError):
        beta_norm(v, other, 1.0)


def test_kappa_bound_values(default_model, bond_claim):
    assert kappa_bound(bond_claim, 0.0, default_model) == pytest.approx(1.2)
    assert kappa_bound(bond_claim, 1.0, default_model) == pytest.approx(1.0)
    with pytest.raises(UsageError):
        kappa_bound(bond_claim, 1.5, default_model)


def test_constant_claim_is_a_fixed_point():
    model = bs_model(m=2, rates=[[0.0, 0.7], [0.3, 0.0]])
    claim = ClaimSpec.simple((2.0, 2.0))
    op = small_operator(model, claim)
    v = op.terminal_field()
    w = op.apply(v)
    assert np.allclose(w.values, 2.0, atol=1e-12)


def test_operator_without_coupling_is_discounted_expectation():
    # one regime, no jumps: F v = E[h(X_T)] whatever v is
    model = bs_model(sigma=0.2)
    claim = ClaimSpec.simple((Payoff.capped_call(1.0, 0.5),))
    op = small_operator(model, claim, paths=4000)
    garbage = op.template(5.0)
    w = op.apply(garbage)
    w2 = op.apply(op.terminal_field())
    assert np.array_equal(w.values, w2.values)


def test_common_random_numbers_make_apply_deterministic(default_model, bond_claim):
    op = small_operator(default_model, bond_claim)
    v = op.terminal_field()
    assert np.array_equal(op.apply(v).values, op.apply(v).values)


def test_operator_lipschitz_in_beta_norm():
    model = linked_model()
    claim = ClaimSpec.simple((1.0, 0.0), jump_const=[[0.0, 0.4], [0.0, 0.0]])
    op = small_operator(model, claim)
    beta = default_beta(claim, model)
    rng = np.random.default_rng(0)
    v = op.terminal_field()
    w = v.replace_values(v.values + rng.normal(0, 0.3, v.values.shape))
    w.values[-1] = v.values[-1]
    ratio = beta_norm(op.apply(v), op.apply(w), beta) / beta_norm(v, w, beta)
    # with common random numbers the bound holds sample by sample up to quadrature error
    assert ratio <= theoretical_rate(claim, model, beta) + 0.05


def test_iteration_converges_to_bond_price(default_model, bond_claim):
    op = small_operator(default_model, bond_claim, paths=200)
    v, trace = iterate_to_fixed_point(default_model, bond_claim, op.terminal_field(), tol=1e-8,
                                      mc=McConfig(paths=200))
    tau = 1.0 - v.t_grid
    exact = np.exp(-0.5 * tau) + 0.4 * (1 - np.exp(-0.5 * tau))
    # x-independent claim: only the time quadrature error remains
    assert np.max(np.abs(v.values[:, :, 0] - exact[:, None])) < 2e-3
    assert trace.converged and np.all(trace.ratios() <= 0.5)
    assert np.all(np.abs(v.values[:, :, 1]) < 1e-12)


def test_non_convergence_carries_trace(default_model, bond_claim):
    op = small_operator(default_model, bond_claim, paths=50)
    with pytest.raises(ConvergenceError) as err:
        iterate_to_fixed_point(default_model, bond_claim, op.terminal_field(), tol=1e-30,
                               max_iter=2, mc=McConfig(paths=50))
    assert err.value.trace.iterations == 2


def test_small_beta_warns(default_model, bond_claim):
    op = small_operator(default_model, bond_claim, paths=50)
    with pytest.warns(RuntimeWarning):
        iterate_to_fixed_point(default_model, bond_claim, op.terminal_field(), beta=0.5,
                               tol=1e-3, mc=McConfig(paths=50))


def test_exponential_family_respects_truncation(default_model):
    claim = ClaimSpec.simple((1.0, 0.0), jump_const=[[0.0, 0.4], [0.0, 0.0]], family=EXPONENTIAL,
                             alpha=2.0)
    op = small_operator(default_model, claim, paths=200)
    assert op.truncation
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        v, _ = iterate_to_fixed_point(default_model, claim, op.terminal_field(), tol=1e-7,
                                      mc=McConfig(paths=200))
    kap = kappa_bound(claim, v.t_grid, default_model)
    assert np.all(np.abs(v.values) <= kap[:, None, None] + 1e-6)


def test_apply_F_matches_operator(default_model, bond_claim):
    op = small_operator(default_model, bond_claim)
    v = op.terminal_field()
    assert np.array_equal(apply_F(default_model, bond_claim, v, McConfig(paths=400)).values,
                          op.apply(v).values)


def test_kappa_small_K2_limit():
    from rdsys.model import kappa_from_constants
    K1, K3, tau = 0.3, 1.0, 2.0
    assert kappa_from_constants(K1, 1e-10, K3, tau) == pytest.approx(K3 + K1 * tau, rel=1e-8)


def test_discount_form_bond_in_one_application():
    # c = -lambda, flow lambda R: no coupling, so F maps anything onto the answer
    lam, R = 0.5, 0.4
    model = bs_model()
    claim = ClaimSpec.simple((1.0,), flow=[lam * R], discount=[-lam])
    op = small_operator(model, claim, nt=20, paths=200)
    w = op.apply(op.template(0.0))
    tau = 1.0 - w.t_grid
    exact = np.exp(-lam * tau) + R * (1 - np.exp(-lam * tau))
    assert np.max(np.abs(w.values[:, :, 0] - exact[:, None])) < 1e-3
    _, trace = iterate_to_fixed_point(model, claim, op.template(0.0), tol=1e-10,
                                      mc=McConfig(paths=200))
    assert trace.iterations == 2 and trace.rows[1].sup_dist < 1e-12


def test_single_application_matches_quadrature():
    # F applied to zero: v^n = 1 + R int_t^T E[lambda(S_s)] ds for the linked bond
    model = linked_model()
    R = 0.4
    claim = ClaimSpec.simple((1.0, 0.0), jump_const=[[0.0, R], [0.0, 0.0]])
    op = small_operator(model, claim, nt=8, nx=5, paths=4000, seed=3)
    w = op.apply(op.template(0.0))
    lam = model.intensities.channels[0][2]
    z, wts = np.polynomial.hermite_e.hermegauss(60)
    wts = wts / wts.sum()
    t = w.t_grid
    sig = 0.2
    for ix, x0 in enumerate(w.x_grids[0]):
        for it in range(len(t) - 1):
            s = t[it:]
            mean_lam = np.array([
                np.sum(wts * lam(0.0, (x0 * np.exp(sig * np.sqrt(u - t[it]) * z
                                                   - 0.5 * sig ** 2 * (u - t[it])))[:, None]))
                for u in s])
            integral = np.sum(0.5 * (mean_lam[1:] + mean_lam[:-1]) * np.diff(s))
            ref = 1.0 + R * integral
            se = w.se[it, ix, 0] if w.se is not None else 0.0
            assert abs(w.values[it, ix, 0] - ref) <= 3.0 * se + 2e-3


def test_fixed_point_does_not_depend_on_start():
    model = linked_model()
    claim = ClaimSpec.simple((1.0, 0.0), jump_linear=[[0.0, 0.4], [0.0, 0.0]])
    op = small_operator(model, claim, paths=300)
    mc = McConfig(paths=300)
    a, _ = iterate_to_fixed_point(model, claim, op.template(0.0), tol=1e-9, mc=mc)
    b, _ = iterate_to_fixed_point(model, claim, op.template(1.5), tol=1e-9, mc=mc)
    assert np.max(np.abs(a.values - b.values)) < 1e-7
