"""
Pricing a defaultable zero-coupon bond three ways
=================================================

A bond pays 1 at T if the issuer survives and a recovery otherwise.  With
a constant default intensity the price is known in closed form, which
makes it a good place to see the grid solver, the Feynman-Kac fixed point
and plain simulation side by side.
"""

import numpy as np

from rdsys.credit import (LINKED_LAMBDA, TREASURY, cross_method_agreement,
                          scenario_defaultable_bond, solve_fixed_point)
from rdsys.pde import PdeProblem, solve_system

# constant intensity 0.5, recovery of 0.4 paid at default
sc = scenario_defaultable_bond(TREASURY, R=0.4, lambda_spec=0.5)
print(sc.formula)

field = solve_system(PdeProblem(sc.model, sc.claim, sc.grid, sc.t_steps))
x = np.array([[0.8], [1.0], [1.25]])
print("grid  :", field(0.0, x, 0))
print("exact :", sc.reference(0.0, x)[:, 0])

# the same price as the fixed point of the Feynman-Kac map; the step
# sizes shrink geometrically, at least as fast as the theoretical rate
fk, trace = solve_fixed_point(sc, paths=500, tol=1e-5)
print("fixed point at x=1:", fk(0.0, [[1.0]], 0)[0], "after", trace.iterations, "iterations")
print("step ratios:", np.round(trace.ratios(), 3), "bound", trace.theoretical_rate)

# now let the intensity fall as the index rises: no closed form any more,
# so the three methods are checked against each other instead
linked = scenario_defaultable_bond(TREASURY, R=0.4, lambda_spec=dict(LINKED_LAMBDA))
rep = cross_method_agreement(linked, n_nodes=5, mc_paths=5000)
for row in rep.rows:
    print(f"t={row.time:.2f} x={row.state[0]:.3f} pde={row.pde:.4f} fk={row.fk:.4f} "
          f"mc={row.mc:.4f}+/-{row.mc_se:.4f}")
print("agree:", rep.passed)
