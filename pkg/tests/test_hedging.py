import numpy as np
import pytest

from conftest import bs_model, linked_model
from rdsys.errors import DegeneracyError, UsageError
from rdsys.grid import GridSpec
from rdsys.hedging import (LEFT_POINT, MILSTEIN, build_hedge, default_grid_for,
                           orthogonality_check, recursive_value_check, replicate_completed_market,
                           self_replication_error)
from rdsys.model import ClaimSpec, Payoff
from rdsys.pde import HEDGING, PdeProblem, solve_system
from rdsys.simulate import simulate_market

CALL = Payoff.capped_call(1.0, 0.5)


def hedge_field(model, claim, count=200, t_steps=200):
    return solve_system(PdeProblem(model, claim, (default_grid_for(model, 1.0, count=count),),
                                   t_steps, HEDGING))


def test_constant_claim_has_no_hedge_and_no_residual():
    model = linked_model()
    claim = ClaimSpec.simple((1.0, 1.0))
    bundle = simulate_market(model, 1.0, 0, 20, 0, paths=500)
    rep = build_hedge(hedge_field(model, claim, 50, 20), claim, model, bundle)
    assert np.allclose(rep.theta, 0.0, atol=1e-10)
    assert np.allclose(rep.residual, 0.0, atol=1e-10)
    assert rep.H0 == pytest.approx(1.0)


def test_without_switching_the_orthogonal_part_vanishes():
    model = bs_model()
    claim = ClaimSpec.simple((CALL,))
    bundle = simulate_market(model, 1.0, 0, 50, 1, paths=1000)
    rep = build_hedge(hedge_field(model, claim), claim, model, bundle)
    assert np.all(rep.L == 0.0)
    assert np.all(rep.covariation == 0.0)
    assert abs(rep.residual_stats()["mean"]) < 3 * rep.residual_stats()["se"] + 1e-4


def test_x_independent_claim_needs_no_stock(default_model, bond_claim):
    bundle = simulate_market(default_model, 1.0, 0, 50, 2, paths=2000)
    rep = build_hedge(hedge_field(default_model, bond_claim), bond_claim, default_model, bundle)
    assert np.max(np.abs(rep.theta)) < 1e-8
    # all the risk sits in the orthogonal part
    assert np.allclose(rep.residual, 0.0, atol=5e-3)
    assert all(c.passed for c in orthogonality_check(rep).values())


def test_linked_bond_orthogonality(bond_claim):
    model = linked_model()
    bundle = simulate_market(model, 1.0, 0, 100, 3, paths=4000)
    rep = build_hedge(hedge_field(model, bond_claim), bond_claim, model, bundle)
    checks = orthogonality_check(rep)
    assert checks["covariation"].passed and checks["L_mean"].passed
    assert np.max(np.abs(rep.theta)) > 1e-3


def test_milstein_reduces_residual(call_claim):
    model = linked_model()
    field_ = hedge_field(model, call_claim)
    bundle = simulate_market(model, 1.0, 0, 50, 4, paths=2000)
    left = build_hedge(field_, call_claim, model, bundle, LEFT_POINT).residual_stats()["rms"]
    mil = build_hedge(field_, call_claim, model, bundle, MILSTEIN).residual_stats()["rms"]
    assert mil < 0.6 * left


def test_numeraire_position_is_self_financing(call_claim):
    model = linked_model()
    bundle = simulate_market(model, 1.0, 0, 30, 5, paths=200)
    rep = build_hedge(hedge_field(model, call_claim, 100, 60), call_claim, model, bundle)
    wealth = rep.theta0 + np.einsum("nid,nid->ni", rep.theta, bundle.s)
    assert np.allclose(wealth, rep.H0 + rep.L + rep.gains)
    assert rep.cost_increments().shape == (200, 30)


def test_unknown_integral_rule(default_model, bond_claim):
    bundle = simulate_market(default_model, 1.0, 0, 5, 0, paths=10)
    with pytest.raises(UsageError):
        build_hedge(hedge_field(default_model, bond_claim, 20, 5), bond_claim, default_model,
                    bundle, "trapezoid")


def test_recursive_check_accepts_solution_and_rejects_bump(call_claim):
    model = linked_model()
    field_ = hedge_field(model, call_claim)
    kw = dict(n_samples=5, paths=4000, steps=50, seed=7)
    assert recursive_value_check(field_, call_claim, model, **kw).passed
    bumped = recursive_value_check(field_, call_claim, model, bump=0.05, **kw)
    assert not bumped.passed
    assert np.all(np.abs(bumped.gaps() + 0.05) < 0.02)


def test_self_replication_is_exact(bond_claim):
    model = linked_model()
    rep = self_replication_error(model, bond_claim, grid=default_grid_for(model, 1.0),
                                 t_steps=100, paths=500, steps=25)
    assert rep.max_abs <= 1e-12
    alive = rep.bond_position[:, :-1] != 0.0
    assert np.allclose(rep.bond_position[:, :-1][alive], 1.0)
    assert np.max(np.abs(rep.stock_position)) <= 1e-12


def test_recovery_in_layer_or_lump_sum_replicates_the_same(call_claim):
    model = linked_model()
    kw = dict(grid=default_grid_for(model, 1.0), t_steps=200, paths=500, steps=25)
    lump = ClaimSpec.simple((1.0, 0.0), jump_const=[[0.0, 0.4], [0.0, 0.0]])
    layer = ClaimSpec.simple((1.0, 0.4))
    a = replicate_completed_market(model, call_claim, lump, **kw)
    b = replicate_completed_market(model, call_claim, layer, **kw)
    assert np.allclose(a.errors, b.errors, atol=1e-10)


def test_digital_default_payment_is_short_one_bond():
    model = linked_model()
    bond = ClaimSpec.simple((1.0, 0.0))
    digital = ClaimSpec.simple((0.0, 1.0))
    rep = replicate_completed_market(model, digital, bond, grid=default_grid_for(model, 1.0),
                                     t_steps=100, paths=300, steps=20)
    alive = rep.bond_position[:, :-1] != 0.0
    assert np.allclose(rep.bond_position[:, :-1][alive], -1.0, atol=1e-8)
    assert np.max(np.abs(rep.stock_position)) < 1e-8
    assert rep.W0 == pytest.approx(1.0 - float(hedge_field(model, bond, 200, 100)(0.0, [[1.0]], 0)[0]))


def test_replication_error_shrinks(call_claim):
    model = linked_model()
    kw = dict(grid=default_grid_for(model, 1.0), t_steps=200, paths=1000)
    coarse = replicate_completed_market(model, call_claim, ClaimSpec.simple((1.0, 0.4)),
                                        steps=10, **kw).rms
    fine = replicate_completed_market(model, call_claim, ClaimSpec.simple((1.0, 0.4)),
                                      steps=40, **kw).rms
    assert fine < 0.65 * coarse


def test_degenerate_bond_raises(call_claim):
    model = linked_model()
    flat = ClaimSpec.simple((1.0, 1.0))
    with pytest.raises(DegeneracyError):
        replicate_completed_market(model, call_claim, flat, grid=default_grid_for(model, 1.0),
                                   t_steps=20, paths=10, steps=5)


def test_replication_preconditions(call_claim, bond_claim):
    with pytest.raises(UsageError):
        replicate_completed_market(bs_model(gamma=0.05, m=2, rates=[[0, 0.5], [0, 0]]), call_claim,
                                   bond_claim, grid=GridSpec(0.5, 2.0, 20), t_steps=5)
    coupon = ClaimSpec.simple((1.0, 0.0), flow=(0.01, 0.0))
    with pytest.raises(UsageError):
        replicate_completed_market(linked_model(), call_claim, coupon,
                                   grid=GridSpec(0.5, 2.0, 20), t_steps=5)
