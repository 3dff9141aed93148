"""
Default contagion in a small basket
===================================

Two names whose default intensity doubles once the other has defaulted.
Regimes are bitmasks of defaulted names, so the four states are 00, 10,
01 and 11.  The survival claim pays 1 if nobody defaulted by T.
"""

import numpy as np

from rdsys.credit import (get_scenario, joint_default_stats, scenario_contagion_basket)
from rdsys.pde import PdeProblem, solve_system
from rdsys.simulate import PASTING, REWEIGHT, simulate_market

sc = get_scenario("contagion_basket")
print(sc.model.labels)
print("generator:\n", sc.model.intensities.generator())

field = solve_system(PdeProblem(sc.model, sc.claim, sc.grid, sc.t_steps))
print("survival value, grid  :", field(0.0, [[1.0]], 0)[0])
print("survival value, expm  :", sc.reference(0.0, [[1.0]])[0, 0])

# contagion makes defaults cluster: the joint default probability exceeds
# the product of the marginals
bundle = simulate_market(sc.model, 1.0, 0, 20, 0, paths=50_000)
print(joint_default_stats(bundle, 2))
indep = scenario_contagion_basket(2, 0.3, 1.0)
print(joint_default_stats(simulate_market(indep.model, 1.0, 0, 20, 0, paths=50_000), 2))

# the two simulation constructions describe the same market; the reweight
# one carries a likelihood-ratio weight per path
linked = get_scenario("contagion_basket_linked")
for construction in (PASTING, REWEIGHT):
    b = simulate_market(linked.model, 1.0, 0, 50, 1, paths=50_000, construction=construction)
    alive = b.estimate((b.eta[:, -1] == 0).astype(float))
    print(construction, "P[no default] = %.4f +/- %.4f" % alive)
