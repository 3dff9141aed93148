"""
A stock that drops at default
=============================

At default the stock loses a fraction 1 - Rs of its value.  To keep the
observed price a martingale the pre-default stock must drift upward at
rate (1 - Rs) lambda.  A claim on the observed stock is then priced on
the pre-default coordinate, with post-default payoffs read at Rs x.
"""

import numpy as np

from rdsys.credit import (LINKED_LAMBDA, crashed_price, get_scenario, scenario_crash_at_default)
from rdsys.pde import PdeProblem, solve_system
from rdsys.simulate import simulate_market

for rs in (0.0, 0.4, 1.0):
    sc = scenario_crash_at_default(0.4, rs, 0.2, dict(LINKED_LAMBDA))
    b = simulate_market(sc.model, 1.0, 0, 200, 0, paths=20_000, keep_increments=False)
    seen = crashed_price(b.s[:, -1, 0], b.eta[:, -1], rs)
    print("Rs=%.1f  E[S_T] = %.4f +/- %.4f" % ((rs,) + b.estimate(seen)))

# a capped call that keeps paying after default, on the crashed stock
sc = get_scenario("crash_at_default_linked")
field = solve_system(PdeProblem(sc.model, sc.claim, sc.grid, sc.t_steps, sc.pde_variant))
x = np.array([[0.8], [1.0], [1.25]])
print("alive  :", field(0.0, x, 0))
print("default:", field(0.0, x, 1))
