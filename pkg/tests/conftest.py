import numpy as np
import pytest

from rdsys.model import (POSITIVE_ORTHANT, ClaimSpec, CoefficientField, Domain, IntensityMatrix,
                         ModelSpec, Payoff, RateFunction)


def bs_model(sigma=0.2, gamma=0.0, m=1, rates=None, T=1.0, bound=None):
    """Lognormal index with ``m`` regimes and constant switching rates."""
    rates = np.zeros((m, m)) if rates is None else np.asarray(rates, dtype=float)
    drift = CoefficientField.multiplicative(np.full((m, 1), gamma))
    vol = CoefficientField.multiplicative(np.full((m, 1, 1), sigma))
    return ModelSpec(Domain(POSITIVE_ORTHANT, 1), m, 1, drift, vol,
                     IntensityMatrix.from_constant(rates, bound=bound), T)


def linked_model(sigma=0.2, T=1.0):
    lam = RateFunction.logistic(0.2, 1.0, 0.0, 3.0)
    return ModelSpec(Domain(POSITIVE_ORTHANT, 1), 2, 1, CoefficientField.zeros(2, (1,)),
                     CoefficientField.multiplicative(np.full((2, 1, 1), sigma)),
                     IntensityMatrix(2, ((0, 1, lam),), 1.0), T)


@pytest.fixture
def default_model():
    return bs_model(m=2, rates=[[0.0, 0.5], [0.0, 0.0]])


@pytest.fixture
def bond_claim():
    return ClaimSpec.simple((1.0, 0.0), jump_const=[[0.0, 0.4], [0.0, 0.0]])


@pytest.fixture
def call_claim():
    return ClaimSpec.simple((Payoff.capped_call(1.0, 0.5), Payoff.constant(0.0)),
                            jump_const=[[0.0, 0.3], [0.0, 0.0]])


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
