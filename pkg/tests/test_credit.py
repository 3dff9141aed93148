import numpy as np
import pytest
from scipy.linalg import expm
from scipy.stats import norm

from rdsys.credit import (MARKET_VALUE, MAX_FIRMS, TREASURY, basket_generator, crash_drift,
                          crashed_price, get_scenario, joint_default_stats, kappa_excess,
                          lognormal_value, popcount, reachable_regimes, scenario_contagion_basket,
                          scenario_crash_at_default, scenario_defaultable_bond, scenario_from_config,
                          scenario_names)
from rdsys.errors import ConfigurationError, UsageError
from rdsys.model import Payoff, RateFunction
from rdsys.pde import PdeProblem, solve_system
from rdsys.simulate import simulate_market


def bs_call(x, k, sigma, tau):
    d1 = (np.log(x / k) + 0.5 * sigma ** 2 * tau) / (sigma * np.sqrt(tau))
    return x * norm.cdf(d1) - k * norm.cdf(d1 - sigma * np.sqrt(tau))


def test_registry_names():
    names = scenario_names()
    assert len(names) == 7
    for name in names:
        assert get_scenario(name).name == name
    with pytest.raises(ConfigurationError):
        get_scenario("nope")


def test_quadrature_matches_black_scholes_spread():
    x = np.array([0.7, 1.0, 1.6])
    ref = bs_call(x, 1.0, 0.2, 0.5) - bs_call(x, 1.5, 0.2, 0.5)
    assert np.allclose(lognormal_value(Payoff.capped_call(1.0, 0.5), 0.2, 0.5, x), ref, atol=1e-10)


def test_bond_oracles_at_maturity_and_known_points():
    tre = scenario_defaultable_bond(TREASURY, 0.4, 0.5)
    mv = scenario_defaultable_bond(MARKET_VALUE, 0.4, 0.5)
    x = np.array([[1.0]])
    assert tre.reference(1.0, x)[0].tolist() == [1.0, 0.0]
    assert tre.reference(0.0, x)[0, 0] == pytest.approx(np.exp(-0.5) + 0.4 * (1 - np.exp(-0.5)))
    assert mv.reference(0.0, x)[0, 0] == pytest.approx(np.exp(-0.3))
    # treasury recovery is worth more than market value recovery of the same rate here
    assert tre.reference(0.0, x)[0, 0] > mv.reference(0.0, x)[0, 0]


def test_bond_validation():
    with pytest.raises(ConfigurationError):
        scenario_defaultable_bond(TREASURY, 1.0)
    with pytest.raises(ConfigurationError):
        scenario_defaultable_bond("face", 0.4)
    assert get_scenario("defaultable_bond_linked").oracle is None


def test_popcount_and_generator():
    assert popcount(np.array([0, 1, 2, 3, 7, 1023])).tolist() == [0, 1, 1, 2, 3, 10]
    Q = basket_generator(2, 0.3, 2.0)
    assert np.allclose(Q.sum(axis=1), 0.0)
    assert np.all(Q[3] == 0.0)
    assert Q[0, 1] == pytest.approx(0.3) and Q[1, 3] == pytest.approx(0.6)
    assert Q[1, 2] == 0.0


def test_basket_size_limits():
    with pytest.raises(ConfigurationError):
        scenario_contagion_basket(MAX_FIRMS + 1)
    with pytest.raises(ConfigurationError):
        scenario_contagion_basket(1)
    with pytest.raises(ConfigurationError):
        scenario_contagion_basket(2, 0.3, 0.5)


def test_basket_oracle_is_matrix_exponential():
    sc = scenario_contagion_basket(3, 0.2, 1.5)
    Q = basket_generator(3, 0.2, 1.5)
    h = np.zeros(8)
    h[0] = 1.0
    assert np.allclose(sc.reference(0.25, [[1.0]])[0], expm(0.75 * Q) @ h)
    # with a = 1 the names are independent
    ind = scenario_contagion_basket(2, 0.3, 1.0).reference(0.0, [[1.0]])[0, 0]
    assert ind == pytest.approx(np.exp(-0.6))


def test_all_default_state_is_absorbing():
    sc = get_scenario("contagion_basket")
    bundle = simulate_market(sc.model, 1.0, 3, 20, 0, paths=200)
    assert np.all(bundle.eta == 3)
    assert reachable_regimes(sc.model, 3).tolist() == [False, False, False, True]


@pytest.mark.slow
def test_contagion_gives_positive_default_correlation():
    sc = get_scenario("contagion_basket")
    stats = joint_default_stats(simulate_market(sc.model, 1.0, 0, 20, 0, paths=100_000), 2)
    assert stats["excess"] > 3 * stats["se"]
    ind = scenario_contagion_basket(2, 0.3, 1.0)
    stats = joint_default_stats(simulate_market(ind.model, 1.0, 0, 20, 0, paths=100_000), 2)
    assert abs(stats["excess"]) <= 3 * stats["se"]


def test_crash_drift_vanishes_without_a_drop():
    lam = RateFunction.constant(0.5)
    x = np.array([[0.5], [2.0]])
    assert np.all(crash_drift(1.0, lam)(0.0, x, np.zeros(2, dtype=int)) == 0.0)
    assert np.allclose(crash_drift(0.4, lam)(0.0, x, np.zeros(2, dtype=int))[:, 0], 0.3 * x[:, 0])
    assert np.all(crash_drift(0.4, lam)(0.0, x, np.ones(2, dtype=int)) == 0.0)
    assert crashed_price(np.array([2.0, 2.0]), np.array([0, 1]), 0.4).tolist() == [2.0, 0.8]


@pytest.mark.parametrize("rs", [0.0, 0.4, 1.0])
def test_observed_stock_is_a_martingale(rs):
    sc = scenario_crash_at_default(0.4, rs, 0.2, 0.5)
    bundle = simulate_market(sc.model, 1.0, 0, 100, 0, paths=20_000)
    seen = crashed_price(bundle.s[:, -1, 0], bundle.eta[:, -1], rs)
    assert abs(seen.mean() - 1.0) <= 3 * seen.std(ddof=1) / np.sqrt(seen.size)


def test_crash_validation():
    with pytest.raises(ConfigurationError):
        scenario_crash_at_default(0.4, 1.5)
    with pytest.raises(ConfigurationError):
        scenario_crash_at_default(0.4, 0.0, terminal=(Payoff.constant(1.0), Payoff.constant(1.0)),
                                  post_default=True)
    with pytest.raises(ConfigurationError):
        scenario_crash_at_default(0.4, 0.4, terminal=(Payoff.constant(1.0), Payoff.constant(1.0)))


def test_post_default_payoff_reads_the_crashed_stock():
    sc = get_scenario("crash_at_default_linked")
    h_d = sc.claim.terminal[1]
    # capped call with strike 0.4 on Rs * x, Rs = 0.5
    assert h_d(np.array([[1.0]]))[0] == pytest.approx(0.1)


def test_pde_fields_respect_truncation_bound():
    for name in scenario_names():
        sc = get_scenario(name)
        field_ = solve_system(PdeProblem(sc.model, sc.claim, sc.grid, 50, sc.pde_variant))
        assert kappa_excess(field_, sc) <= 0.0


def test_scenario_config_round_trip():
    sc = get_scenario("crash_at_default")
    back = scenario_from_config(sc.to_dict())
    assert back.name == sc.name and back.oracle_kind == sc.oracle_kind
    assert np.array_equal(back.reference(0.3, [[1.0]]), sc.reference(0.3, [[1.0]]))
    data = sc.to_dict()
    data["claim"]["jump_linear"][0][1] = 0.3
    custom = scenario_from_config(data)
    assert custom.oracle is None
    with pytest.raises(UsageError):
        custom.reference(0.0, [[1.0]])


@pytest.mark.slow
@pytest.mark.parametrize("name", ["defaultable_bond_treasury", "defaultable_bond_market_value",
                                  "contagion_basket", "crash_at_default"])
def test_fixed_point_matches_oracle(name):
    from rdsys.credit import solve_fixed_point
    sc = get_scenario(name)
    fk, trace = solve_fixed_point(sc, paths=1000, tol=1e-4)
    assert trace.converged
    nodes = fk.nodes()
    for i, t in enumerate(fk.t_grid):
        ref = sc.reference(t, nodes).reshape(fk.values.shape[1:])
        assert np.all(np.abs(fk.values[i] - ref) <= sc.tolerance.fk_abs + 3 * fk.se[i])
