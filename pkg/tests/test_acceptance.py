"""Acceptance suite: one test per criterion, one PASS/FAIL line each.

The lines are collected in ``RESULTS`` and printed in the terminal summary
(see ``conftest.py``).  Tolerances are the stated ones; nothing here is
tuned to make a criterion pass.
"""

import os
import time

import numpy as np

from rdsys.cli import main as cli_main
from rdsys.credit import (LINKED_LAMBDA, SIGMA, cross_method_agreement, crashed_price,
                          get_scenario, kappa_excess, scenario_crash_at_default, scenario_names,
                          solve_fixed_point)
from rdsys.grid import GridSpec
from rdsys.hedging import (MILSTEIN, build_hedge, default_grid_for,
                           orthogonality_check, replicate_completed_market, self_replication_error)
from rdsys.model import ClaimSpec, Payoff
from rdsys.pde import HEDGING, PdeProblem, generator_martingale_check, solve_system
from rdsys.simulate import PASTING, REWEIGHT, compensated_counters, simulate_market

from conftest import linked_model

RESULTS = {}
_PDE = {}
_FK = {}


def record(n, title, passed, detail):
    RESULTS[n] = f"{'PASS' if passed else 'FAIL'} criterion {n:2d} ({title}): {detail}"
    assert passed, RESULTS[n]


def pde_field(name):
    if name not in _PDE:
        sc = get_scenario(name)
        _PDE[name] = solve_system(PdeProblem(sc.model, sc.claim, sc.grid, sc.t_steps,
                                             sc.pde_variant))
    return _PDE[name]


def fk_field(name):
    if name not in _FK:
        _FK[name] = solve_fixed_point(get_scenario(name), paths=1000, tol=1e-4, seed=0)[0]
    return _FK[name]


HEDGE_CLAIM = ClaimSpec.simple((Payoff.capped_call(1.0, 0.5), Payoff.constant(0.0)),
                               jump_const=[[0.0, 0.3], [0.0, 0.0]])


# 1 -------------------------------------------------------------------------
def test_criterion_01_closed_form_oracles():
    worst = 0.0
    start = time.perf_counter()
    names = [n for n in scenario_names() if get_scenario(n).oracle is not None]
    for name in names:
        sc = get_scenario(name)
        assert (sc.grid[0].count, sc.t_steps) == (200, 200)
        field_ = pde_field(name)
        nodes = field_.nodes()
        for i, t in enumerate(field_.t_grid):
            ref = sc.reference(t, nodes).reshape(field_.values.shape[1:])
            worst = max(worst, float(np.max(np.abs(field_.values[i] - ref))))
    elapsed = time.perf_counter() - start
    record(1, "closed-form oracles", worst <= 1e-5 and elapsed < 5.0,
           f"max abs error {worst:.2e} (<= 1e-5) over all nodes of {len(names)} scenarios, "
           f"{elapsed:.2f} s (< 5 s)")


# 2 -------------------------------------------------------------------------
def test_criterion_02_contraction():
    sc = get_scenario("defaultable_bond_linked")
    fk = sc.fk_grid[0]
    grid = (GridSpec(fk.lo, fk.hi, 30, fk.spacing),)
    start = time.perf_counter()
    _, trace = solve_fixed_point(sc, paths=1000, tol=1e-6, seed=0, grid=grid, t_steps=30,
                                 min_iter=6)
    elapsed = time.perf_counter() - start
    margins = [r.ratio - 3.0 * r.se / p.beta_dist
               for p, r in zip(trace.rows[:-1], trace.rows[1:])]
    ok = trace.iterations >= 6 and max(margins) <= 0.5 and elapsed < 120.0
    record(2, "contraction", ok,
           f"beta={trace.beta:g}, {trace.iterations} iterations, ratios "
           f"{', '.join(f'{r:.3f}' for r in trace.ratios())} (<= 0.5 + 3 SE), {elapsed:.0f} s")


# 3 -------------------------------------------------------------------------
def test_criterion_03_truncation_bound():
    worst = {}
    for name in scenario_names():
        sc = get_scenario(name)
        worst[name] = max(kappa_excess(pde_field(name), sc), kappa_excess(fk_field(name), sc))
    bad = [n for n, w in worst.items() if w > 0.0]
    record(3, "truncation bound", not bad,
           f"max(|v| - kappa - 1e-6) = {max(worst.values()):.3g} over {len(worst)} scenarios"
           + (f"; violated: {', '.join(bad)}" if bad else ""))


# 4 -------------------------------------------------------------------------
def test_criterion_04_cross_method():
    failed, rows = [], 0
    for name in scenario_names():
        sc = get_scenario(name)
        rep = cross_method_agreement(sc, pde_field=pde_field(name), fk_field=fk_field(name),
                                     n_nodes=20, seed=0)
        rows += len(rep.rows)
        if not rep.passed or len(rep.rows) != 20:
            failed.append(name)
    record(4, "cross-method agreement", not failed,
           f"{rows} nodes over {len(scenario_names())} scenarios agree pairwise within "
           f"max(1e-2 rel, 3 SE)" + (f"; failed: {', '.join(failed)}" if failed else ""))


# 5 -------------------------------------------------------------------------
TEST_FUNCTIONS = {
    "S": lambda x, k: x[:, 0],
    "S^2": lambda x, k: x[:, 0] ** 2,
    "all alive": lambda x, k: (k == 0).astype(float),
    "defaults": lambda x, k: ((k & 1) + (k >> 1 & 1)).astype(float),
    "capped S, both defaulted": lambda x, k: np.minimum(x[:, 0], 1.2) * (k == 3),
}


def test_criterion_05_construction_equivalence():
    sc = get_scenario("contagion_basket_linked")
    start = time.perf_counter()
    est = {}
    for c in (PASTING, REWEIGHT):
        b = simulate_market(sc.model, 1.0, 0, 50, 0, paths=100_000, construction=c,
                            keep_increments=False)
        est[c] = {n: b.estimate(f(b.s[:, -1], b.eta[:, -1])) for n, f in TEST_FUNCTIONS.items()}
    elapsed = time.perf_counter() - start
    z = {n: abs(est[PASTING][n][0] - est[REWEIGHT][n][0])
         / np.hypot(est[PASTING][n][1], est[REWEIGHT][n][1]) for n in TEST_FUNCTIONS}
    ok = max(z.values()) <= 3.0 and elapsed < 60.0
    record(5, "construction equivalence", ok,
           f"max |gap|/combined SE {max(z.values()):.2f} (<= 3) over {len(z)} functions, "
           f"1e5 paths each, {elapsed:.1f} s (< 60 s)")


# 6 -------------------------------------------------------------------------
def test_criterion_06_martingale_suite():
    cases = {
        "crash_at_default_linked": {
            "log S": lambda x, k: np.log(x[:, 0]),
            "S^2 (1 + k)": lambda x, k: x[:, 0] ** 2 * (1 + k),
            "default indicator": lambda x, k: k.astype(float),
        },
        "contagion_basket_linked": {
            "S^2": lambda x, k: x[:, 0] ** 2,
            "defaults": TEST_FUNCTIONS["defaults"],
            "S on all alive": lambda x, k: x[:, 0] * (k == 0),
        },
    }
    failures, checks = [], 0
    for name, fns in cases.items():
        sc = get_scenario(name)
        for construction in (PASTING, REWEIGHT):
            b = simulate_market(sc.model, 1.0, 0, 100, 1, paths=20_000, construction=construction)
            for label, f in fns.items():
                rep = generator_martingale_check(sc.model, b, f, name=label)
                checks += len(rep.rows)
                assert len(rep.rows) == 5
                if not rep.passed:
                    failures.append(f"{name}/{construction}/{label}")
            for (k, j), vals in compensated_counters(sc.model, b).items():
                mean, se = b.estimate(vals)
                checks += 1
                if abs(mean) > 3.0 * se:
                    failures.append(f"{name}/{construction}/M^{k}{j}")
    record(6, "martingale suite", not failures,
           f"{checks} zero-mean checks within 3 SE (5 check times per test function)"
           + (f"; failed: {', '.join(failures)}" if failures else ""))


# 7 -------------------------------------------------------------------------
def _hedge(model, steps, nx, nt, integral):
    field_ = solve_system(PdeProblem(model, HEDGE_CLAIM, (default_grid_for(model, 1.0, count=nx),),
                                     nt, HEDGING))
    bundle = simulate_market(model, 1.0, 0, steps, 11, paths=10_000)
    return build_hedge(field_, HEDGE_CLAIM, model, bundle, integral)


def test_criterion_07_hedge_decomposition():
    model = linked_model()
    coarse = _hedge(model, 50, 200, 100, MILSTEIN)
    fine = _hedge(model, 100, 400, 200, MILSTEIN)
    st_c, st_f = coarse.residual_stats(), fine.residual_stats()
    drop = 1.0 - st_f["rms"] / st_c["rms"]
    orth = orthogonality_check(fine)
    ok_mean = all(abs(s["mean"]) <= 3.0 * s["se"] for s in (st_c, st_f))
    ok = ok_mean and drop >= 0.30 and all(c.passed for c in orth.values())
    record(7, "hedge decomposition", ok,
           f"mean residual {st_f['mean']:.2e} (3 SE {3 * st_f['se']:.2e}); RMS "
           f"{st_c['rms']:.2e} -> {st_f['rms']:.2e} ({100 * drop:.0f}% drop, >= 30%); "
           f"covariation {orth['covariation'].statistic:.2e} "
           f"(3 SE {orth['covariation'].threshold:.2e})")


# 8 -------------------------------------------------------------------------
def test_criterion_08_replication():
    model = linked_model()
    bond = ClaimSpec.simple((1.0, 0.4))
    grid = default_grid_for(model, 1.0)
    self_err = self_replication_error(model, bond, grid=grid, t_steps=400, paths=5000,
                                      steps=100).max_abs
    steps = np.array([25, 100, 400])
    rms = np.array([replicate_completed_market(model, HEDGE_CLAIM, bond, grid=grid, t_steps=400,
                                               paths=5000, steps=int(n), seed=3).rms
                    for n in steps])
    slope = float(np.polyfit(np.log(steps), np.log(rms), 1)[0])
    ok = self_err <= 1e-12 and np.all(np.diff(rms) < 0) and -0.65 <= slope <= -0.35
    record(8, "completed-market replication", ok,
           f"self-replication max error {self_err:.1e}; RMS at {steps.tolist()} steps "
           f"{', '.join(f'{r:.2e}' for r in rms)}, log-log slope {slope:.2f} (about -0.5)")


# 9 -------------------------------------------------------------------------
def test_criterion_09_crash_martingale():
    parts, ok = [], True
    for rs in (0.0, 0.4, 1.0):
        sc = scenario_crash_at_default(0.4, rs, SIGMA, dict(LINKED_LAMBDA))
        b = simulate_market(sc.model, 1.0, 0, 200, 5, paths=50_000, keep_increments=False)
        seen = crashed_price(b.s[:, -1, 0], b.eta[:, -1], rs)
        mean, se = b.estimate(seen)
        ok &= abs(mean - 1.0) <= 3.0 * se
        parts.append(f"Rs={rs:g}: {mean:.4f} +/- {se:.4f}")
    record(9, "crash-at-default martingale", ok, "E[observed S_T] vs 1: " + "; ".join(parts))


# 10 ------------------------------------------------------------------------
def test_criterion_10_determinism(tmp_path):
    args = ["run", "--scenario", "crash_at_default_linked", "--stages",
            "validate,solve-pde,solve-fk,simulate,hedge,check-cross,"
            "check-truncation,check-contraction,check-martingale,check-hedge",
            "--paths", "1000", "--steps", "50", "--seed", "7"]
    codes = [cli_main([*args, "--out", str(tmp_path / tag)]) for tag in ("a", "b")]
    names = sorted(os.listdir(tmp_path / "a"))
    same = names == sorted(os.listdir(tmp_path / "b")) and all(
        (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names)
    b1 = simulate_market(linked_model(), 1.0, 0, 50, 9, paths=2000)
    b2 = simulate_market(linked_model(), 1.0, 0, 50, 9, paths=2000)
    f1, f2 = tmp_path / "p1.csv", tmp_path / "p2.csv"
    b1.to_csv(f1)
    b2.to_csv(f2)
    same &= f1.read_bytes() == f2.read_bytes()
    record(10, "determinism", same and codes[0] == codes[1] == 0,
           f"{len(names)} CLI artifacts byte-identical across two runs (exit codes {codes}); "
           "path CSV identical")
