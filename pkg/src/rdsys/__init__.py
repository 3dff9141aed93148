"""Coupled semilinear parabolic systems in regime-switching markets.

Grid and Monte Carlo solvers for value functions ``v(t, x, k)``, market
path simulation with state-dependent regime intensities, hedge
decompositions and credit scenarios with reference values.
"""

from .errors import (ConfigurationError, ConvergenceError, DegeneracyError, EstimationError,
                     ModelDefinitionError, NumericalError, RdsysError, SimulationError, UsageError)
from .model import (ClaimSpec, CoefficientField, Domain, IntensityMatrix, ModelSpec, Payoff,
                    ProbeGrid, RateFunction, claim_constants, eval_interaction_g, validate_model)
from .grid import GridSpec, ValueField
from .simulate import (PathBundle, compensated_counters, girsanov_to_minimal_elmm,
                       simulate_frozen, simulate_market, simulate_market_pasting,
                       simulate_market_reweight)
from .fixed_point import (FeynmanKacOperator, McConfig, apply_F, beta_norm, iterate_to_fixed_point,
                          kappa_bound)
from .pde import (PdeProblem, apply_generator, generator_martingale_check, markov_property_check,
                  solve_system)
from .hedging import (build_hedge, orthogonality_check, recursive_value_check,
                      replicate_completed_market)
from .credit import (Scenario, cross_method_agreement, get_scenario, scenario_contagion_basket,
                     scenario_crash_at_default, scenario_defaultable_bond, scenario_names)

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "ConvergenceError", "DegeneracyError", "EstimationError",
    "ModelDefinitionError", "NumericalError", "RdsysError", "SimulationError", "UsageError",
    "ClaimSpec", "CoefficientField", "Domain", "IntensityMatrix", "ModelSpec", "Payoff",
    "ProbeGrid", "RateFunction", "claim_constants", "eval_interaction_g", "validate_model",
    "GridSpec", "ValueField",
    "PathBundle", "compensated_counters", "girsanov_to_minimal_elmm", "simulate_frozen",
    "simulate_market", "simulate_market_pasting", "simulate_market_reweight",
    "FeynmanKacOperator", "McConfig", "apply_F", "beta_norm", "iterate_to_fixed_point",
    "kappa_bound",
    "PdeProblem", "apply_generator", "generator_martingale_check", "markov_property_check",
    "solve_system",
    "build_hedge", "orthogonality_check", "recursive_value_check", "replicate_completed_market",
    "Scenario", "cross_method_agreement", "get_scenario", "scenario_contagion_basket",
    "scenario_crash_at_default", "scenario_defaultable_bond", "scenario_names",
]
