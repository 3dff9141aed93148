"""
Hedging a claim on a defaultable index
======================================

A capped call on an index whose issuer may default, with a lump sum of
0.3 paid at default.  The stock alone cannot hedge the default jump, so
the payoff splits into an initial price, a stock gain and a remainder L
that is orthogonal to the stock.  With a traded bond the market is
complete again and the claim can be replicated.
"""

import numpy as np

from rdsys.hedging import (LEFT_POINT, MILSTEIN, build_hedge, default_grid_for,
                           orthogonality_check, replicate_completed_market)
from rdsys.model import (POSITIVE_ORTHANT, ClaimSpec, CoefficientField, Domain, IntensityMatrix,
                         ModelSpec, Payoff, RateFunction)
from rdsys.pde import HEDGING, PdeProblem, solve_system
from rdsys.simulate import simulate_market

lam = RateFunction.logistic(0.2, 1.0, 0.0, 3.0)
model = ModelSpec(Domain(POSITIVE_ORTHANT, 1), 2, 1, CoefficientField.zeros(2, (1,)),
                  CoefficientField.multiplicative(np.full((2, 1, 1), 0.2)),
                  IntensityMatrix(2, ((0, 1, lam),), 1.0), 1.0)
claim = ClaimSpec.simple((Payoff.capped_call(1.0, 0.5), Payoff.constant(0.0)),
                         jump_const=[[0.0, 0.3], [0.0, 0.0]])

for steps, nx in ((25, 100), (50, 200), (100, 400)):
    field = solve_system(PdeProblem(model, claim, (default_grid_for(model, 1.0, count=nx),),
                                    2 * steps, HEDGING))
    bundle = simulate_market(model, 1.0, 0, steps, 0, paths=5000)
    left = build_hedge(field, claim, model, bundle, LEFT_POINT).residual_stats()
    rep = build_hedge(field, claim, model, bundle, MILSTEIN)
    st = rep.residual_stats()
    print(f"steps={steps:4d}  H0={rep.H0:.5f}  rms residual left-point={left['rms']:.2e} "
          f"milstein={st['rms']:.2e}  mean={st['mean']:.1e}+/-{st['se']:.1e}")

# L does not co-move with the stock gains
print({k: (round(c.statistic, 7), c.passed) for k, c in orthogonality_check(rep).items()})

# add a traded bond with recovery 0.4 and replicate exactly (up to time steps)
bond = ClaimSpec.simple((1.0, 0.4))
for steps in (25, 100, 400):
    r = replicate_completed_market(model, claim, bond, grid=default_grid_for(model, 1.0),
                                   t_steps=400, paths=2000, steps=steps)
    print(f"replication with {steps:3d} rebalances: rms error {r.rms:.2e}")
