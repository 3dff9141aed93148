"""Ready-made credit scenarios with their reference values.

Regimes of a single name are ``0 = alive`` and ``1 = default`` (absorbing).
Baskets of ``ell`` names use a little-endian bitmask: bit ``i`` of the
regime index is set once name ``i`` has defaulted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.linalg import expm
from scipy.stats import norm

from .config import config_hash, from_dict
from .config import to_dict as config_to_dict
from .errors import ConfigurationError, UsageError
from .grid import GridSpec
from .model import (POSITIVE_ORTHANT, ClaimSpec, CoefficientField, Domain, IntensityMatrix,
                    ModelSpec, Payoff, RateFunction, as_states)
from .fixed_point import FeynmanKacOperator, McConfig, iterate_to_fixed_point, kappa_bound
from .hedging import recursive_value_check
from .pde import CRASH_AT_DEFAULT, GENERAL, PdeProblem, solve_system

CLOSED_FORM = "closed_form"
MATRIX_EXPONENTIAL = "matrix_exponential"
QUADRATURE = "quadrature"
NONE = "none"

TREASURY = "treasury"
MARKET_VALUE = "market_value"

MAX_FIRMS = 10

# default market parameters
SIGMA = 0.2
HORIZON = 1.0
LINKED_LAMBDA = dict(lo=0.2, hi=1.0, center=0.0, slope=3.0)


@dataclass(frozen=True)
class Tolerance:
    """Acceptance profile of a scenario.

    ``pde_abs`` bounds the grid solution against the oracle, ``fk_abs`` the
    Feynman-Kac fixed point (added to 3 standard errors), ``rel`` the
    cross-method relative tolerance.
    """

    pde_abs: float = 1e-5
    fk_abs: float = 5e-3
    rel: float = 1e-2
    sigmas: float = 3.0


@dataclass(frozen=True, eq=False)
class Scenario:
    """A model, a claim and what the value is known to be.

    ``oracle(t, x)`` returns ``(n, m)`` reference values (``None`` when the
    oracle kind is ``none``).  ``formula`` is a human-readable statement of
    the reference value.  ``pde_variant`` names the solver variant that
    prices the claim; ``measure`` the dynamics for direct simulation.
    """

    name: str
    model: ModelSpec
    claim: ClaimSpec
    oracle_kind: str
    oracle: object = None
    formula: str = ""
    tolerance: Tolerance = Tolerance()
    grid: tuple = ()
    t_steps: int = 200
    fk_grid: tuple = ()
    fk_t_steps: int = 10
    s0: float = 1.0
    k0: int = 0
    pde_variant: str = GENERAL
    measure: str = "model"
    meta: dict = field(default_factory=dict)

    def reference(self, t, x) -> np.ndarray:
        if self.oracle is None:
            raise UsageError(f"scenario {self.name!r} has no oracle")
        x = as_states(x, self.model.d)
        t = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],))
        return self.oracle(t, x)

    def to_dict(self) -> dict:
        out = config_to_dict(self.model, self.claim)
        out["scenario"] = {"name": self.name, "oracle": self.oracle_kind, "formula": self.formula,
                           "s0": self.s0, "k0": self.k0, "pde_variant": self.pde_variant,
                           "grid": [g.to_dict() for g in self.grid], "t_steps": self.t_steps,
                           **{k: v for k, v in self.meta.items()}}
        return out


# ---------------------------------------------------------------------------
# building blocks


def _lambda_spec(spec) -> RateFunction:
    if isinstance(spec, RateFunction):
        return spec
    if isinstance(spec, dict):
        return RateFunction.logistic(**spec)
    if np.ndim(spec) == 0:
        return RateFunction.constant(float(spec))
    raise ConfigurationError(f"cannot read intensity entry {spec!r}")


def _sigma_spec(spec, m):
    if isinstance(spec, CoefficientField):
        return spec
    vals = np.broadcast_to(np.asarray(spec, dtype=float), (m,))
    return CoefficientField.multiplicative(vals.reshape(m, 1, 1))


def single_name_model(lam: RateFunction, sigma=SIGMA, T=HORIZON, drift=None) -> ModelSpec:
    """Two-state absorbing default model over a lognormal index."""
    bound = max(lam.sup(), 1e-12)
    intens = IntensityMatrix(2, ((0, 1, lam),), bound)
    drift = CoefficientField.zeros(2, (1,)) if drift is None else drift
    return ModelSpec(Domain(POSITIVE_ORTHANT, 1), 2, 1, drift, _sigma_spec(sigma, 2), intens, T,
                     labels=("alive", "default"))


def _log_grid(s0, T, sigma, count, width=6.0, floor=None):
    spread = width * sigma * np.sqrt(T)
    lo = s0 * np.exp(-spread) if floor is None else floor
    return GridSpec(lo, s0 * np.exp(spread), count, "log-uniform")


def _fk_grid(s0, T, sigma, count=15, width=2.0):
    spread = width * sigma * np.sqrt(T)
    return GridSpec(s0 * np.exp(-spread), s0 * np.exp(spread), count, "log-uniform")


def two_state_generator(lam: float) -> np.ndarray:
    return np.array([[-lam, lam], [0.0, 0.0]])


# ---------------------------------------------------------------------------
# single-name bonds


def scenario_defaultable_bond(recovery_mode: str = TREASURY, R: float = 0.4, lambda_spec=0.5,
                              *, sigma=SIGMA, T=HORIZON, s0=1.0, name=None,
                              grid_count=200, t_steps=200) -> Scenario:
    """Zero-coupon bond paying 1 at T if alive, with recovery at default.

    ``treasury``: a lump sum ``R`` at default.  ``market_value``: a lump sum
    of ``R`` times the pre-default value.
    """
    if not 0.0 <= R < 1.0:
        raise ConfigurationError("recovery R must lie in [0, 1)")
    if recovery_mode not in (TREASURY, MARKET_VALUE):
        raise ConfigurationError(f"unknown recovery mode {recovery_mode!r}")
    lam = _lambda_spec(lambda_spec)
    model = single_name_model(lam, sigma, T)
    if recovery_mode == TREASURY:
        claim = ClaimSpec.simple((1.0, 0.0), jump_const=[[0.0, R], [0.0, 0.0]], name="bond-treasury")
    else:
        claim = ClaimSpec.simple((1.0, 0.0), jump_linear=[[0.0, R], [0.0, 0.0]],
                                 name="bond-market-value")
    oracle, kind, formula = None, NONE, ""
    if lam.is_constant:
        rate = lam.sup()
        if recovery_mode == TREASURY:
            formula = "v(t,x,alive) = exp(-lam (T-t)) + R (1 - exp(-lam (T-t))); v(t,x,default) = 0"

            def oracle(t, x, rate=rate):
                surv = np.exp(-rate * (T - t))
                return np.stack([surv + R * (1.0 - surv), np.zeros_like(t)], axis=1)
        else:
            formula = "v(t,x,alive) = exp(-lam (1-R) (T-t)); v(t,x,default) = 0"

            def oracle(t, x, rate=rate):
                return np.stack([np.exp(-rate * (1.0 - R) * (T - t)), np.zeros_like(t)], axis=1)
        kind = CLOSED_FORM
    default_name = f"defaultable_bond_{recovery_mode}" + ("" if lam.is_constant else "_linked")
    return Scenario(name or default_name, model, claim, kind, oracle, formula,
                    grid=(_log_grid(s0, T, SIGMA, grid_count),), t_steps=t_steps,
                    fk_grid=(_fk_grid(s0, T, SIGMA),), s0=s0,
                    meta={"recovery_mode": recovery_mode, "R": R})


# ---------------------------------------------------------------------------
# baskets


def popcount(k) -> np.ndarray:
    k = np.asarray(k, dtype=np.int64)
    out = np.zeros_like(k)
    while np.any(k):
        out += k & 1
        k = k >> 1
    return out


def basket_channels(ell: int, lam: RateFunction, a: float):
    """Single-name default transitions ``k -> k | (1 << i)`` with ``lam * a^{defaults in k}``."""
    chans = []
    for k in range(2 ** ell):
        fac = a ** int(popcount(k))
        for i in range(ell):
            if not k >> i & 1:
                chans.append((k, k | (1 << i), lam.scaled(fac)))
    return tuple(chans)


def basket_generator(ell: int, lam_bar: float, a: float) -> np.ndarray:
    m = 2 ** ell
    Q = np.zeros((m, m))
    for k, j, fn in basket_channels(ell, RateFunction.constant(lam_bar), a):
        Q[k, j] = fn.sup()
    Q[np.arange(m), np.arange(m)] = -Q.sum(axis=1)
    return Q


def scenario_contagion_basket(ell: int = 2, lambda_bar: float = 0.3, a: float = 2.0, s_link=None,
                              *, sigma=SIGMA, T=HORIZON, s0=1.0, terminal=None, name=None,
                              grid_count=200, t_steps=200) -> Scenario:
    """Basket of ``ell`` names whose intensities grow by ``a`` per prior default.

    The default claim pays 1 at T when every name survived.  ``s_link``
    (a :class:`RateFunction` or logistic parameters) replaces the constant
    base intensity by one driven by the index.
    """
    if ell < 2:
        raise ConfigurationError("a basket needs at least two names")
    if ell > MAX_FIRMS:
        raise ConfigurationError(f"ell > {MAX_FIRMS} would need {2 ** ell} regimes")
    if not lambda_bar > 0 or a < 1:
        raise ConfigurationError("need lambda_bar > 0 and a >= 1")
    m = 2 ** ell
    base = RateFunction.constant(lambda_bar) if s_link is None else _lambda_spec(s_link)
    chans = basket_channels(ell, base, a)
    bound = base.sup() * a ** (ell - 1)
    model = ModelSpec(Domain(POSITIVE_ORTHANT, 1), m, 1, CoefficientField.zeros(m, (1,)),
                      _sigma_spec(sigma, m), IntensityMatrix(m, chans, bound), T,
                      labels=tuple(format(k, f"0{ell}b")[::-1] for k in range(m)))
    if terminal is None:
        terminal = np.zeros(m)
        terminal[0] = 1.0
    terminal = np.asarray(terminal, dtype=float)
    claim = ClaimSpec.simple(tuple(terminal), name="basket-survival")
    oracle, kind, formula = None, NONE, ""
    if s_link is None:
        Q = basket_generator(ell, lambda_bar, a)
        kind = MATRIX_EXPONENTIAL
        formula = "v(t,x,.) = expm(Q (T-t)) h"

        def oracle(t, x):
            out = np.empty((t.size, m))
            for tau in np.unique(t):
                out[t == tau] = expm(Q * (T - tau)) @ terminal
            return out
    return Scenario(name or ("contagion_basket" if s_link is None else "contagion_basket_linked"),
                    model, claim, kind, oracle, formula,
                    grid=(_log_grid(s0, T, SIGMA, grid_count),), t_steps=t_steps,
                    fk_grid=(_fk_grid(s0, T, SIGMA),), s0=s0,
                    meta={"ell": ell, "lambda_bar": lambda_bar, "a": a})


# ---------------------------------------------------------------------------
# stock that drops at default


def crash_drift(stock_recovery: float, lam: RateFunction) -> CoefficientField:
    """Drift ``(1 - Rs) 1{alive} lam(t, x) x`` that makes the crashing stock a martingale."""
    rate = np.array([1.0 - stock_recovery, 0.0]).reshape(2, 1)
    return CoefficientField.multiplicative(rate, (lam, RateFunction.constant(1.0)))


def crashed_price(s, eta, stock_recovery: float) -> np.ndarray:
    """Observed stock ``S`` before default and ``Rs * S`` from default on."""
    return np.where(eta == 1, stock_recovery, 1.0) * s


def scenario_crash_at_default(recovery_R_claim: float = 0.4, stock_recovery: float = 0.4,
                              sigma_spec=SIGMA, lambda_spec=0.5, *, T=HORIZON, s0=1.0,
                              terminal=None, post_default=False, name=None,
                              grid_count=200, t_steps=200) -> Scenario:
    """Claim on a firm whose stock drops to ``Rs`` times its pre-default value.

    The state ``x`` is the pre-default stock.  ``terminal`` holds one payoff
    per regime written on the observed stock; the default-regime payoff is
    mapped to ``x`` coordinates by evaluating it at ``Rs * x``.  Recovery
    of the claim is ``recovery_R_claim`` times its pre-default value.  With
    ``post_default=True`` the default-regime payoff is live, which needs
    ``Rs > 0``.
    """
    if not 0.0 <= stock_recovery <= 1.0:
        raise ConfigurationError("stock recovery must lie in [0, 1]")
    if not 0.0 <= recovery_R_claim < 1.0:
        raise ConfigurationError("claim recovery must lie in [0, 1)")
    if terminal is None:
        terminal = (Payoff.constant(1.0), Payoff.constant(0.0))
    term_n, term_d = terminal
    if post_default:
        if stock_recovery == 0.0:
            raise ConfigurationError("post-default payments need a positive stock recovery")
        term_d = Payoff(term_d.family, term_d.params, stock_recovery * term_d.x_scale, term_d.axis)
    elif not (isinstance(term_d, Payoff) and term_d.is_constant and term_d.params["value"] == 0.0):
        raise ConfigurationError("post-default payoff without post_default=True")
    lam = _lambda_spec(lambda_spec)
    # the default-layer volatility is set equal to the alive-layer one
    model = single_name_model(lam, sigma_spec, T, drift=crash_drift(stock_recovery, lam))
    claim = ClaimSpec.simple((term_n, term_d), jump_linear=[[0.0, recovery_R_claim], [0.0, 0.0]],
                             name="crash-claim")
    oracle, kind, formula = None, NONE, ""
    if lam.is_constant and term_n.is_constant and term_d.is_constant and term_d.params["value"] == 0:
        rate = lam.sup()
        c_n = term_n.params["value"]
        kind = CLOSED_FORM
        formula = "v(t,x,alive) = h exp(-lam (1-R) (T-t)); v(t,x,default) = 0"

        def oracle(t, x):
            return np.stack([c_n * np.exp(-rate * (1 - recovery_R_claim) * (T - t)),
                             np.zeros_like(t)], axis=1)
    default_name = "crash_at_default" + ("_linked" if post_default or not lam.is_constant else "")
    sig = SIGMA if isinstance(sigma_spec, CoefficientField) else float(np.max(sigma_spec))
    return Scenario(name or default_name, model, claim, kind, oracle, formula,
                    grid=(_log_grid(s0, T, sig, grid_count),), t_steps=t_steps,
                    fk_grid=(_fk_grid(s0, T, sig),), s0=s0, pde_variant=CRASH_AT_DEFAULT,
                    meta={"stock_recovery": stock_recovery, "R": recovery_R_claim,
                          "post_default": post_default})


# ---------------------------------------------------------------------------
# quadrature reference for lognormal claims without default


def lognormal_value(payoff: Payoff, sigma: float, tau, x) -> np.ndarray:
    """``E[payoff(x exp(sigma W_tau - sigma^2 tau / 2))]`` by adaptive quadrature."""
    tau = np.broadcast_to(np.asarray(tau, dtype=float), np.shape(x))
    out = np.empty(np.shape(x))
    for i, (tt, xx) in enumerate(zip(tau.ravel(), np.ravel(x))):
        if tt <= 0:
            out.flat[i] = payoff(np.array([[xx]]))[0]
            continue
        s = sigma * np.sqrt(tt)

        def integrand(z, xx=xx, s=s):
            return payoff(np.array([[xx * np.exp(s * z - 0.5 * s * s)]]))[0] * norm.pdf(z)
        val, _ = quad(integrand, -10.0, 10.0, limit=200, epsabs=1e-13, epsrel=1e-12,
                      points=_kinks(payoff, xx, s))
        out.flat[i] = val
    return out


def _kinks(payoff, x, s):
    pts = []
    for key in ("strike",):
        if key in payoff.params:
            k = payoff.params[key] / payoff.x_scale
            pts.append((np.log(k / x) + 0.5 * s * s) / s)
    if "cap" in payoff.params and payoff.family == "capped_call":
        k = (payoff.params["strike"] + payoff.params["cap"]) / payoff.x_scale
        pts.append((np.log(k / x) + 0.5 * s * s) / s)
    if "cap" in payoff.params and payoff.family == "capped_put":
        k = (payoff.params["strike"] - payoff.params["cap"]) / payoff.x_scale
        if k > 0:
            pts.append((np.log(k / x) + 0.5 * s * s) / s)
    return [p for p in pts if -10 < p < 10] or None


# ---------------------------------------------------------------------------
# registry


def _linked_bond():
    return scenario_defaultable_bond(TREASURY, 0.4, dict(LINKED_LAMBDA),
                                     name="defaultable_bond_linked")


def _linked_basket():
    return scenario_contagion_basket(2, 0.3, 2.0, s_link=dict(LINKED_LAMBDA, lo=0.15, hi=0.45))


def _linked_crash():
    call = Payoff.capped_call(1.0, 0.5)
    return scenario_crash_at_default(0.4, 0.5, SIGMA, dict(LINKED_LAMBDA),
                                     terminal=(call, Payoff.capped_call(0.4, 0.5)),
                                     post_default=True)


REGISTRY = {
    "defaultable_bond_treasury": lambda: scenario_defaultable_bond(TREASURY, 0.4, 0.5),
    "defaultable_bond_market_value": lambda: scenario_defaultable_bond(MARKET_VALUE, 0.4, 0.5),
    "defaultable_bond_linked": _linked_bond,
    "contagion_basket": lambda: scenario_contagion_basket(2, 0.3, 2.0),
    "contagion_basket_linked": _linked_basket,
    "crash_at_default": lambda: scenario_crash_at_default(0.4, 0.4, SIGMA, 0.5),
    "crash_at_default_linked": _linked_crash,
}


def scenario_names() -> list:
    return list(REGISTRY)


def get_scenario(name: str) -> Scenario:
    try:
        return REGISTRY[name]()
    except KeyError:
        raise ConfigurationError(f"unknown scenario {name!r}; known: {', '.join(REGISTRY)}") from None


def joint_default_stats(bundle, ell: int) -> dict:
    """Default frequencies of names 0 and 1 and their joint default, from terminal regimes."""
    eta = bundle.eta[:, -1]
    d0 = (eta & 1).astype(bool)
    d1 = (eta >> 1 & 1).astype(bool)
    n = eta.size
    p0, p1, p01 = d0.mean(), d1.mean(), (d0 & d1).mean()
    # delta-method error of p01 - p0 p1 from per-path influence terms
    infl = (d0 & d1) - p1 * d0 - p0 * d1
    se = float(np.std(infl, ddof=1) / np.sqrt(n))
    return {"p_first": float(p0), "p_second": float(p1), "p_both": float(p01),
            "excess": float(p01 - p0 * p1), "se": se}


# ---------------------------------------------------------------------------
# cross-method agreement


@dataclass
class AgreementRow:
    time: float
    state: tuple
    regime: int
    pde: float
    fk: float
    fk_se: float
    mc: float
    mc_se: float
    passed: bool


@dataclass
class AgreementReport:
    scenario: str
    rows: list
    rel: float
    sigmas: float
    kappa_ok: bool = True
    stats: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows) and self.kappa_ok


def kappa_excess(field_, sc: Scenario, slack: float = 1e-6) -> float:
    """``max(|v| - kappa(t)) - slack`` over all nodes; non-positive when the bound holds."""
    kap = kappa_bound(sc.claim, field_.t_grid, sc.model)
    gap = np.abs(field_.values) - kap.reshape((-1,) + (1,) * (field_.values.ndim - 1))
    return float(gap.max() - slack)


def _agree(a, b, se, rel, sigmas):
    return abs(a - b) <= max(rel * max(abs(a), abs(b)), sigmas * se)


def sample_nodes(t_grid, x_nodes, m, count, seed):
    """``count`` distinct (time index, node index, regime) triples before maturity."""
    rng = np.random.default_rng(seed)
    total = (t_grid.size - 1) * x_nodes.shape[0] * m
    flat = np.sort(rng.choice(total, size=min(count, total), replace=False))
    ti, rest = np.divmod(flat, x_nodes.shape[0] * m)
    xi, k = np.divmod(rest, m)
    return ti, xi, k


def solve_fixed_point(sc: Scenario, *, paths=1000, tol=1e-4, seed=0, beta=None, grid=None,
                      t_steps=None, max_iter=50, min_iter=1):
    """Feynman-Kac fixed point of a scenario on its (or the given) coarse grid."""
    grid = sc.fk_grid if grid is None else grid
    t_grid = np.linspace(0.0, sc.model.T, (t_steps or sc.fk_t_steps) + 1)
    mc = McConfig(paths=paths, seed=seed)
    op = FeynmanKacOperator(sc.model, sc.claim, t_grid, tuple(g.nodes() for g in grid), mc)
    return iterate_to_fixed_point(sc.model, sc.claim, op.terminal_field(), beta=beta, tol=tol,
                                  max_iter=max_iter, mc=mc, min_iter=min_iter)


def cross_method_agreement(sc: Scenario, *, pde_field=None, fk_field=None, fk_paths=1000,
                           fk_tol=1e-4, mc_paths=20000, mc_steps=100, n_nodes=20, seed=0,
                           reachable_only=True) -> AgreementReport:
    """PDE field, Feynman-Kac fixed point and direct simulation at sampled nodes.

    Nodes are drawn from the fixed-point grid.  With ``reachable_only``
    regimes that cannot be reached from ``k0`` are not sampled.  The
    report also records whether both fields respect the truncation bound.
    """
    if pde_field is None:
        pde_field = solve_system(PdeProblem(sc.model, sc.claim, sc.grid, sc.t_steps,
                                            sc.pde_variant))
    if fk_field is None:
        fk, trace = solve_fixed_point(sc, paths=fk_paths, tol=fk_tol, seed=seed)
        fk_stats = {"fk_iterations": trace.iterations, "fk_converged": trace.converged}
    else:
        fk, fk_stats = fk_field, {}
    t_grid = fk.t_grid
    kappa_ok = kappa_excess(fk, sc) <= 0.0 and kappa_excess(pde_field, sc) <= 0.0
    nodes = fk.nodes()
    reach = np.ones(sc.model.m, dtype=bool)
    if reachable_only:
        reach = reachable_regimes(sc.model, sc.k0)
    ti, xi, k = sample_nodes(t_grid, nodes, int(reach.sum()), n_nodes, seed)
    k = np.nonzero(reach)[0][k]
    samples = [(float(t_grid[a]), nodes[b], int(c)) for a, b, c in zip(ti, xi, k)]
    rec = recursive_value_check(pde_field, sc.claim, sc.model, samples=samples, paths=mc_paths,
                                steps=mc_steps, seed=seed + 1, measure=sc.measure)
    tol = sc.tolerance
    rows = []
    fk_flat = fk.values.reshape(t_grid.size, nodes.shape[0], sc.model.m)
    se_flat = fk.se.reshape(fk_flat.shape)
    for (a, b, c), smp in zip(zip(ti, xi, k), rec.samples):
        pv = smp.field_value
        fv, fse = float(fk_flat[a, b, c]), float(se_flat[a, b, c])
        ok = (_agree(pv, fv, fse, tol.rel, tol.sigmas)
              and _agree(pv, smp.estimate, smp.se, tol.rel, tol.sigmas)
              and _agree(fv, smp.estimate, np.hypot(fse, smp.se), tol.rel, tol.sigmas))
        rows.append(AgreementRow(smp.time, smp.state, smp.regime, pv, fv, fse, smp.estimate,
                                 smp.se, bool(ok)))
    return AgreementReport(sc.name, rows, tol.rel, tol.sigmas, kappa_ok, fk_stats)


def reachable_regimes(model: ModelSpec, k0: int) -> np.ndarray:
    """Regimes reachable from ``k0`` through channels with positive sup intensity."""
    adj = model.intensities.sup_matrix() > 0
    seen = np.zeros(model.m, dtype=bool)
    seen[k0] = True
    frontier = [k0]
    while frontier:
        k = frontier.pop()
        for j in np.nonzero(adj[k] & ~seen)[0]:
            seen[j] = True
            frontier.append(int(j))
    return seen


def scenario_from_config(data: dict) -> Scenario:
    """Scenario from a config tree.

    A ``scenario`` block naming a registered scenario whose model and claim
    match the tree exactly keeps that scenario's oracle; otherwise the
    scenario has no oracle and takes its grids from the block or defaults.
    """
    model, claim = from_dict(data)
    block = data.get("scenario") or {}
    name = block.get("name", "custom")
    if name in REGISTRY:
        reg = REGISTRY[name]()
        if config_hash(reg.model, reg.claim) == config_hash(model, claim):
            return reg
    s0 = float(block.get("s0", 1.0))
    if "grid" in block:
        grid = tuple(GridSpec(g["lo"], g["hi"], int(g["count"]), g.get("spacing", "uniform"))
                     for g in block["grid"])
    elif model.d != 1:
        raise ConfigurationError("multi-dimensional configs need an explicit scenario.grid")
    sig = max(float(np.max(np.abs(model.vol(0.0, np.full((model.m, model.d), s0),
                                            np.arange(model.m))))), 0.05)
    if "grid" not in block:
        grid = (_log_grid(s0, model.T, sig, 200),)
    fk_grid = (_fk_grid(s0, model.T, sig),) if model.d == 1 else tuple(
        GridSpec(g.lo, g.hi, 15, g.spacing) for g in grid)
    return Scenario(f"{name}" if name not in REGISTRY else f"{name}-modified", model, claim, NONE,
                    grid=grid, t_steps=int(block.get("t_steps", 200)), fk_grid=fk_grid, s0=s0,
                    k0=int(block.get("k0", 0)), pde_variant=block.get("pde_variant", GENERAL))
