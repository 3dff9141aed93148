import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import bs_model, linked_model
from rdsys.errors import ModelDefinitionError, SimulationError, UsageError
from rdsys.model import (POSITIVE_ORTHANT, CoefficientField, Domain, IntensityMatrix, ModelSpec)
from rdsys.simulate import (PASTING, REWEIGHT, compensated_counters, girsanov_to_minimal_elmm,
                            regime_integral, simulate_frozen_batch, simulate_market)


def within(mean, se, target, k=3.0):
    return abs(mean - target) <= k * se + 1e-12


@pytest.mark.parametrize("construction", [PASTING, REWEIGHT])
def test_survival_probability(default_model, construction):
    b = simulate_market(default_model, 1.0, 0, 20, 5, paths=20000, construction=construction)
    mean, se = b.estimate(b.eta[:, -1] == 0)
    assert within(mean, se, np.exp(-0.5))


def test_lognormal_mean_and_variance():
    model = bs_model(sigma=0.3, gamma=0.05)
    b = simulate_market(model, 1.0, 0, 10, 1, paths=40000)
    mean, se = b.estimate(b.s[:, -1, 0])
    assert within(mean, se, np.exp(0.05))
    m2, se2 = b.estimate(b.s[:, -1, 0] ** 2)
    assert within(m2, se2, np.exp(0.1 + 0.09))


def test_jump_log_consistent_with_regime_path():
    model = linked_model()
    b = simulate_market(model, 1.0, 0, 25, 2, paths=3000)
    log = b.jumps.effective_only()
    changes = np.nonzero(b.eta[:, 1:] != b.eta[:, :-1])
    assert len(log) == changes[0].size
    assert np.array_equal(np.sort(log.path * 100 + log.step), np.sort(changes[0] * 100 + changes[1]))
    # absorbing default state is never left
    assert np.all(np.diff(b.eta, axis=1) >= 0)
    assert np.all((log.time > b.times[log.step]) & (log.time < b.times[log.step + 1]))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([PASTING, REWEIGHT]))
def test_paths_stay_in_domain_and_log_matches(seed, construction):
    b = simulate_market(linked_model(), 1.0, 0, 10, seed, paths=200, construction=construction)
    assert np.all(b.s > 0)
    # replaying the effective jumps reproduces the regime path at grid times
    log = b.jumps.effective_only()
    eta = b.eta[:, :1].repeat(b.steps + 1, axis=1)
    for p, st_, src, dst in zip(log.path, log.step, log.src, log.dst):
        assert eta[p, st_ + 1] == src
        eta[p, st_ + 1:] = dst
    assert np.array_equal(eta, b.eta)


def test_same_seed_byte_identical(tmp_path):
    model = linked_model()
    for name in ("a.csv", "b.csv"):
        simulate_market(model, 1.0, 0, 10, 9, paths=100).to_csv(tmp_path / name)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_path_count_does_not_change_early_paths():
    model = linked_model()
    a = simulate_market(model, 1.0, 0, 10, 4, paths=50)
    b = simulate_market(model, 1.0, 0, 10, 4, paths=200)
    assert np.array_equal(a.s, b.s[:50]) and np.array_equal(a.eta, b.eta[:50])


def test_pasting_rejects_rate_above_bound():
    model = bs_model(m=2, rates=[[0.0, 0.5], [0.0, 0.0]], bound=0.3)
    with pytest.raises(ModelDefinitionError):
        simulate_market(model, 1.0, 0, 10, 0, paths=2000)


def test_compensated_counters_mean_zero():
    model = linked_model()
    b = simulate_market(model, 1.0, 0, 50, 3, paths=20000)
    for key, vals in compensated_counters(model, b).items():
        mean, se = b.estimate(vals)
        assert within(mean, se, 0.0), key


def test_raw_counters_need_reweight(default_model):
    b = simulate_market(default_model, 1.0, 0, 10, 3, paths=100)
    with pytest.raises(UsageError):
        compensated_counters(default_model, b, effective=False)


def test_girsanov_reweighting_restores_martingale():
    model = bs_model(sigma=0.2, gamma=0.1)
    b = simulate_market(model, 1.0, 0, 20, 8, paths=40000)
    q = girsanov_to_minimal_elmm(model, b)
    mean, se = q.estimate(q.s[:, -1, 0])
    assert within(mean, se, 1.0)
    r = girsanov_to_minimal_elmm(model, b, resimulate=True)
    mean, se = r.estimate(r.s[:, -1, 0])
    assert within(mean, se, 1.0)


def test_regime_integral_of_indicator_is_time_alive(default_model):
    b = simulate_market(default_model, 1.0, 0, 20, 6, paths=2000)
    alive = regime_integral(b, lambda t, x, k: (k == 0).astype(float))[:, -1]
    log = b.jumps.effective_only()
    expect = np.ones(b.n_paths)
    expect[log.path] = log.time
    assert np.allclose(alive, expect, atol=1e-12)


def test_domain_exit_flagged_and_enforced():
    # arithmetic dynamics that leave the positive orthant
    model = ModelSpec(Domain(POSITIVE_ORTHANT, 1), 1, 1,
                      CoefficientField.constant(np.array([[-1.0]])),
                      CoefficientField.constant(np.array([[[0.3]]])),
                      IntensityMatrix.from_constant([[0.0]]), 1.0)
    with pytest.raises(SimulationError):
        simulate_market(model, 0.5, 0, 20, 0, paths=500)
    b = simulate_market(model, 0.5, 0, 20, 0, paths=500, max_exit_fraction=1.0)
    assert b.excluded.any() and not b.excluded.all()
    mean, _ = b.estimate(b.s[:, -1, 0])
    assert mean == pytest.approx(b.s[~b.excluded, -1, 0].mean())


def test_frozen_paths_exact_lognormal():
    model = bs_model(sigma=0.25, gamma=0.03, m=2, rates=[[0.0, 1.0], [0.0, 0.0]])
    times, x, ex = simulate_frozen_batch(model, (0.2, 1.0, 0), 8, 40000)
    assert times[0] == 0.2 and times[-1] == 1.0 and not ex.any()
    logs = np.log(x[:, -1, 0])
    tau = 0.8
    assert logs.mean() == pytest.approx((0.03 - 0.5 * 0.0625) * tau, abs=4 * 0.25 * np.sqrt(tau / 40000))


def test_antithetic_pairs_mirror():
    model = bs_model(sigma=0.2)
    b = simulate_market(model, 1.0, 0, 5, 1, paths=10, antithetic=True)
    logs = np.log(b.s[:, -1, 0])
    drift = -0.5 * 0.04
    assert np.allclose(logs[0::2] - drift, -(logs[1::2] - drift))


def test_reweight_counters_only_on_declared_channels():
    from rdsys.credit import get_scenario
    sc = get_scenario("contagion_basket")
    bundle = simulate_market(sc.model, 1.0, 0, 20, 0, paths=2000, construction=REWEIGHT)
    assert bundle.stats["annihilated"] == 0
    assert np.all(bundle.terminal_weight > 0)
    assert set(zip(bundle.jumps.src.tolist(), bundle.jumps.dst.tolist())) <= {
        (0, 1), (0, 2), (1, 3), (2, 3)}
