"""Finite-difference solver for the coupled semilinear system.

Each regime layer solves

    v_t + Gamma . grad v + 1/2 a : D^2 v + c v + g(t, x, v) = 0,   v(T) = h,

with ``a = Sigma Sigma^T``, marching backwards from the terminal layer.  The
spatial operator is discretized with non-uniform central differences and
handled implicitly (Crank-Nicolson, with a few backward-Euler half-steps at
the start to damp payoff kinks).  The reaction ``c v + g`` is averaged the
same way; its implicit half is resolved by Picard sub-iterations inside the
step, the implicit linear system staying a single sparse factorization per
regime.

Supported dimensions are d = 1 and d = 2 (the mixed derivative enters the
sparse operator directly).  The truncation hull needs an artificial
boundary condition: ``"linear"`` (zero second derivative, i.e. linear
extrapolation from the interior) or ``"dirichlet"`` (terminal payoff held
on the boundary).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import ConfigurationError, NumericalError, UsageError
from .grid import GridSpec, ValueField
from .model import (POSITIVE_ORTHANT, ClaimSpec, CoefficientField, ModelSpec, as_regimes,
                    as_states, claim_constants, interaction)
from .rng import STREAM_RESTART
from .simulate import regime_integral, simulate_market

GENERAL = "general"
MARKOV_TEST = "markov_test"
HEDGING = "hedging"
CRASH_AT_DEFAULT = "crash_at_default"
VARIANTS = (GENERAL, MARKOV_TEST, HEDGING, CRASH_AT_DEFAULT)


def coupling_claim(terminal, m: int) -> ClaimSpec:
    """Claim whose interaction is the pure coupling ``sum lambda (v^j - v^k)``."""
    return ClaimSpec.simple(tuple(terminal), name="coupling")


@dataclass
class PdeProblem:
    """Inputs of one solve.

    ``grid`` is one :class:`GridSpec` per state dimension, ``t_steps`` the
    number of time steps on ``[0, horizon]``.  ``drift_override`` replaces
    the model drift in the operator (the hedging variant always uses zero
    drift).  ``terminal`` replaces the claim's payoff (markov_test variant).
    """

    model: ModelSpec
    claim: ClaimSpec
    grid: tuple
    t_steps: int
    variant: str = GENERAL
    boundary: str = "linear"
    horizon: float | None = None
    drift_override: CoefficientField | None = None
    terminal: tuple | None = None
    picard_max: int = 50
    picard_tol: float = 1e-13
    rannacher_steps: int = 2

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown PDE variant {self.variant!r}")
        if self.boundary not in ("linear", "dirichlet"):
            raise ConfigurationError(f"unknown boundary condition {self.boundary!r}")
        if isinstance(self.grid, GridSpec):
            self.grid = (self.grid,)
        self.grid = tuple(self.grid)
        if len(self.grid) != self.model.d:
            raise ConfigurationError("one grid axis per state dimension expected")
        if self.model.d > 2:
            raise ConfigurationError("the finite-difference solver supports d <= 2")
        if self.model.domain.kind == POSITIVE_ORTHANT and any(g.lo <= 0 for g in self.grid):
            raise ConfigurationError("positive-orthant grids need lo > 0")
        if self.t_steps < 1:
            raise ConfigurationError("t_steps must be >= 1")
        if self.claim.m != self.model.m:
            raise ConfigurationError("claim and model disagree on the number of regimes")
        if self.variant == HEDGING and np.any(self.claim.discount != 0):
            raise ConfigurationError("the hedging equation has no discount term")
        h = self.model.T if self.horizon is None else float(self.horizon)
        if not (0 < h <= self.model.T + 1e-12):
            raise ConfigurationError("horizon must lie in (0, T]")
        self.horizon = h

    def effective_claim(self) -> ClaimSpec:
        if self.variant == MARKOV_TEST:
            term = self.terminal if self.terminal is not None else self.claim.terminal
            return coupling_claim(term, self.model.m)
        if self.terminal is not None:
            return replace(self.claim, terminal=tuple(self.terminal))
        return self.claim

    def effective_drift(self):
        if self.variant == HEDGING:
            return None
        if self.drift_override is not None:
            return self.drift_override
        return None if self.model.drift.is_zero else self.model.drift


def _axis_stencils(g):
    """First and second derivative weights (left, centre, right) at interior nodes."""
    hm = g[1:-1] - g[:-2]
    hp = g[2:] - g[1:-1]
    s = hm + hp
    d1 = np.stack([-hp / (hm * s), (hp - hm) / (hm * hp), hm / (hp * s)])
    d2 = np.stack([2.0 / (hm * s), -2.0 / (hm * hp), 2.0 / (hp * s)])
    return d1, d2


@dataclass
class _Operator:
    L: sp.csr_matrix          # spatial generator on interior rows
    interior: np.ndarray      # bool mask over flattened nodes
    constraint: sp.csr_matrix  # boundary rows (zero on interior rows)
    peclet: float


def _build_operator(problem: PdeProblem, nodes_axes, k, t) -> _Operator:
    model = problem.model
    shape = tuple(g.size for g in nodes_axes)
    n = int(np.prod(shape))
    d = len(shape)
    mesh = np.meshgrid(*nodes_axes, indexing="ij")
    pts = np.stack([m_.ravel() for m_ in mesh], axis=1)
    kk = np.full(n, k)
    a = model.diffusion_matrix(t, pts, kk)
    drift_field = problem.effective_drift()
    gam = np.zeros((n, d)) if drift_field is None else drift_field(t, pts, kk)
    idx = np.arange(n).reshape(shape)
    multi = np.stack(np.unravel_index(np.arange(n), shape), axis=1)
    interior = np.ones(n, dtype=bool)
    for dim in range(d):
        interior &= (multi[:, dim] > 0) & (multi[:, dim] < shape[dim] - 1)
    rows, cols, vals = [], [], []
    peclet = 0.0
    inner = np.nonzero(interior)[0]
    mi = multi[inner]
    for dim in range(d):
        g = nodes_axes[dim]
        d1, d2 = _axis_stencils(g)
        pos = mi[:, dim] - 1
        diff = 0.5 * a[inner, dim, dim]
        adv = gam[inner, dim]
        for off, w1, w2 in ((-1, d1[0], d2[0]), (0, d1[1], d2[1]), (1, d1[2], d2[2])):
            nb = mi.copy()
            nb[:, dim] += off
            rows.append(inner)
            cols.append(np.ravel_multi_index(nb.T, shape))
            vals.append(adv * w1[pos] + diff * w2[pos])
        hloc = np.maximum(g[1:-1] - g[:-2], g[2:] - g[1:-1])[pos]
        with np.errstate(divide="ignore", invalid="ignore"):
            pe = np.abs(adv) * hloc / np.maximum(a[inner, dim, dim], 1e-300)
        if pe.size:
            peclet = max(peclet, float(np.max(pe)))
    if d == 2:
        g0, g1 = nodes_axes
        i0, i1 = mi[:, 0], mi[:, 1]
        den = (g0[i0 + 1] - g0[i0 - 1]) * (g1[i1 + 1] - g1[i1 - 1])
        coef = a[inner, 0, 1] / den
        for s0, s1, sgn in ((1, 1, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0)):
            rows.append(inner)
            cols.append(idx[i0 + s0, i1 + s1])
            vals.append(sgn * coef)
    L = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    # boundary rows: linear extrapolation along the first boundary axis
    brow, bcol, bval = [], [], []
    for node in np.nonzero(~interior)[0]:
        brow.append(node)
        bcol.append(node)
        bval.append(1.0)
        if problem.boundary == "dirichlet":
            continue
        mult = multi[node]
        for dim in range(d):
            if mult[dim] == 0 or mult[dim] == shape[dim] - 1:
                break
        g = nodes_axes[dim]
        step = 1 if mult[dim] == 0 else -1
        j1 = mult.copy()
        j1[dim] += step
        j2 = mult.copy()
        j2[dim] += 2 * step
        x0, x1, x2 = g[mult[dim]], g[j1[dim]], g[j2[dim]]
        r = (x0 - x1) / (x1 - x2)
        # v0 = v1 + r (v1 - v2)
        brow += [node, node]
        bcol += [int(np.ravel_multi_index(j1, shape)), int(np.ravel_multi_index(j2, shape))]
        bval += [-(1.0 + r), r]
    C = sp.csr_matrix((bval, (brow, bcol)), shape=(n, n))
    return _Operator(L, interior, C, peclet)


@dataclass
class SolveStats:
    picard_iterations: list = field(default_factory=list)
    max_picard: int = 0
    peclet: float = 0.0
    reaction_step_bound: float = 0.0

    def as_dict(self) -> dict:
        it = np.asarray(self.picard_iterations) if self.picard_iterations else np.zeros(1)
        return {"picard_mean": float(it.mean()), "picard_max": int(it.max()),
                "max_cell_peclet": self.peclet, "reaction_step_bound": self.reaction_step_bound}


def solve_system(problem: PdeProblem) -> ValueField:
    """Backward march from the terminal layer; returns the field on the full grid."""
    model = problem.model
    claim = problem.effective_claim()
    axes = [g.nodes() for g in problem.grid]
    shape = tuple(a.size for a in axes)
    n = int(np.prod(shape))
    m = model.m
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=1)
    T = problem.horizon
    N = problem.t_steps
    t_grid = np.linspace(0.0, T, N + 1)
    dt = T / N
    discount = np.zeros(m) if problem.variant in (HEDGING, MARKOV_TEST) else claim.discount

    ops = [_build_operator(problem, axes, k, 0.0) for k in range(m)]
    stats = SolveStats(peclet=max(o.peclet for o in ops))
    stats.reaction_step_bound = float(dt * claim_constants(claim, model).lipschitz)
    eye = sp.identity(n, format="csr")
    factor_cache = {}

    def factor(k, theta, tau):
        key = (k, theta, tau)
        if key not in factor_cache:
            o = ops[k]
            P = sp.diags(o.interior.astype(float))
            A = (P @ (eye - theta * tau * o.L) + o.constraint).tocsc()
            try:
                factor_cache[key] = splu(A)
            except RuntimeError as exc:
                raise NumericalError(f"singular implicit system in regime {k}: {exc}") from None
        return factor_cache[key]

    def reaction(t, V):
        out = np.empty((n, m))
        for k in range(m):
            out[:, k] = interaction(claim, model, t, pts, np.full(n, k), V) + discount[k] * V[:, k]
        return out

    values = np.empty((N + 1, n, m))
    V = claim.h_all(pts)
    values[N] = V
    dirichlet = claim.h_all(pts) if problem.boundary == "dirichlet" else np.zeros((n, m))

    def step(V, t_old, t_new, theta, tau, tindex):
        R_old = reaction(t_old, V)
        base = np.empty((n, m))
        for k in range(m):
            o = ops[k]
            expl = V[:, k] + (1.0 - theta) * tau * (o.L @ V[:, k]) + (1.0 - theta) * tau * R_old[:, k]
            base[:, k] = np.where(o.interior, expl, dirichlet[:, k])
        guess = V.copy()
        for it in range(1, problem.picard_max + 1):
            R_new = reaction(t_new, guess) if theta > 0 else 0.0
            new = np.empty((n, m))
            for k in range(m):
                rhs = base[:, k] + np.where(ops[k].interior, theta * tau * R_new[:, k], 0.0) \
                    if theta > 0 else base[:, k]
                new[:, k] = factor(k, theta, tau).solve(rhs)
            if not np.all(np.isfinite(new)):
                raise NumericalError(f"non-finite values at time index {tindex}",
                                     time_index=tindex)
            change = float(np.max(np.abs(new - guess)))
            guess = new
            if change <= problem.picard_tol * (1.0 + float(np.max(np.abs(new)))):
                stats.picard_iterations.append(it)
                return new
        raise NumericalError(f"Picard sub-iterations did not converge at time index {tindex}",
                             time_index=tindex)

    for i in range(N, 0, -1):
        t_old, t_new = t_grid[i], t_grid[i - 1]
        if N - i < problem.rannacher_steps:
            mid = 0.5 * (t_old + t_new)
            V = step(V, t_old, mid, 1.0, 0.5 * dt, i)
            V = step(V, mid, t_new, 1.0, 0.5 * dt, i)
        else:
            V = step(V, t_old, t_new, 0.5, dt, i)
        values[i - 1] = V
    stats.max_picard = int(max(stats.picard_iterations, default=0))
    out = ValueField(t_grid, axes, values.reshape((N + 1, *shape, m)),
                     meta={"method": "finite-difference", "scheme": "crank-nicolson",
                           "rannacher_steps": problem.rannacher_steps,
                           "variant": problem.variant, "boundary": problem.boundary,
                           "grid": [g.to_dict() for g in problem.grid], "t_steps": N,
                           **stats.as_dict()})
    return out


# ---------------------------------------------------------------------------


def apply_generator(model: ModelSpec, f, t, x, k, eps: float = 1e-4) -> np.ndarray:
    """Generator of (S, eta) applied to a test function, by central differences.

    ``f(x, k)`` takes an ``(n, d)`` batch and a regime array and returns ``(n,)``.
    """
    x = as_states(x, model.d)
    n, d = x.shape
    k = as_regimes(k, n)
    if not np.all(model.domain.contains(x)):
        raise UsageError("x outside the domain")
    hstep = eps * np.maximum(1.0, np.abs(x))
    f0 = f(x, k)
    grad = np.zeros((n, d))
    hess = np.zeros((n, d, d))
    for i in range(d):
        e = np.zeros((n, d))
        e[:, i] = hstep[:, i]
        fp, fm = f(x + e, k), f(x - e, k)
        grad[:, i] = (fp - fm) / (2 * hstep[:, i])
        hess[:, i, i] = (fp - 2 * f0 + fm) / hstep[:, i] ** 2
        for j in range(i + 1, d):
            e2 = np.zeros((n, d))
            e2[:, j] = hstep[:, j]
            val = (f(x + e + e2, k) - f(x + e - e2, k) - f(x - e + e2, k) + f(x - e - e2, k))
            hess[:, i, j] = hess[:, j, i] = val / (4 * hstep[:, i] * hstep[:, j])
    out = np.einsum("ni,ni->n", model.drift(t, x, k), grad)
    out += 0.5 * np.einsum("nij,nij->n", model.diffusion_matrix(t, x, k), hess)
    lam = model.intensities.row(t, x, k)
    for j in range(model.m):
        if np.any(lam[:, j]):
            out += lam[:, j] * (f(x, np.full(n, j)) - f0)
    return out


@dataclass
class GeneratorRow:
    time: float
    mean: float
    se: float
    passed: bool


@dataclass
class GeneratorReport:
    name: str
    rows: list

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)


def generator_martingale_check(model: ModelSpec, bundle, f, check_times=None, *, name="f",
                               sigmas: float = 3.0, eps: float = 1e-4) -> GeneratorReport:
    """Mean of ``f(S_t, eta_t) - f(S_0, eta_0) - int_0^t (L f)(S_u, eta_u) du`` against zero.

    The integral runs piecewise between regime jumps (see
    :func:`regime_integral`), so each piece uses the regime in force.
    ``check_times`` default to five equally spaced times after the start.
    """
    times = bundle.times
    if check_times is None:
        check_times = np.linspace(times[0], times[-1], 6)[1:]
    comp = regime_integral(bundle, lambda t, x, k: apply_generator(model, f, t, x, k, eps))
    f0 = f(bundle.s[:, 0], bundle.eta[:, 0])
    rows = []
    for tc in check_times:
        i = int(np.argmin(np.abs(times - tc)))
        vals = f(bundle.s[:, i], bundle.eta[:, i]) - f0 - comp[:, i]
        mean, se = bundle.estimate(vals)
        rows.append(GeneratorRow(float(times[i]), float(mean), float(se),
                                 bool(abs(mean) <= sigmas * se + 1e-12)))
    return GeneratorReport(name, rows)


def solve_markov_test(model: ModelSpec, terminal, grid, t_steps, horizon=None,
                      boundary="linear") -> ValueField:
    """Solve the linear coupled system with payoff ``terminal`` at ``horizon``."""
    claim = coupling_claim(terminal, model.m)
    return solve_system(PdeProblem(model, claim, grid, t_steps, MARKOV_TEST, boundary,
                                   horizon=horizon))


@dataclass
class MarkovCheckRow:
    time: float
    restart_gap: float
    restart_se: float
    martingale_gap: float
    martingale_se: float
    passed: bool


@dataclass
class MarkovReport:
    rows: list
    value0: float

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)


def markov_property_check(model: ModelSpec, terminal, T_prime: float, s0, k0, *, grid,
                          t_steps=200, outer_paths=400, inner_paths=400, path_steps=100,
                          check_times=None, seed=0, sigmas=3.0) -> MarkovReport:
    """Conditional-expectation and martingale checks of the linear system's solution.

    Market paths are simulated from ``(s0, k0)``; at each check time every
    outer path is restarted ``inner_paths`` times to ``T_prime`` (restart
    estimator of the conditional expectation), and the gap to the PDE value
    at the path state is averaged over outer paths.  The martingale check
    compares ``v(t, S_t, eta_t)`` with ``v(0, S_0, eta_0)`` in mean.
    """
    field_ = solve_markov_test(model, terminal, grid, t_steps, horizon=T_prime)
    claim = coupling_claim(terminal, model.m)
    if check_times is None:
        check_times = np.linspace(0.0, T_prime, 6)[:-1]
    bundle = simulate_market(model, s0, k0, path_steps, seed, paths=outer_paths,
                             horizon=T_prime)
    v0 = float(field_(0.0, np.atleast_2d(bundle.s[0, 0]), int(bundle.eta[0, 0]))[0])
    rows = []
    for ci, tc in enumerate(check_times):
        i = int(round(tc / T_prime * path_steps))
        tc = float(bundle.times[i])
        s_c, k_c = bundle.s[:, i], bundle.eta[:, i]
        v_c = field_(tc, s_c, k_c)
        steps_left = path_steps - i
        inner = simulate_market(model, np.repeat(s_c, inner_paths, axis=0),
                                np.repeat(k_c, inner_paths), steps_left, seed,
                                paths=outer_paths * inner_paths, t0=tc, horizon=T_prime,
                                stream=STREAM_RESTART + 16 * (ci + 1), keep_increments=False)
        hv = claim.h(inner.s[:, -1], inner.eta[:, -1]).reshape(outer_paths, inner_paths)
        gap = hv.mean(axis=1) - v_c
        rg, rse = float(gap.mean()), float(gap.std(ddof=1) / np.sqrt(outer_paths))
        inc = v_c - v0
        mg, mse = float(inc.mean()), float(inc.std(ddof=1) / np.sqrt(outer_paths))
        ok_r = abs(rg) <= sigmas * rse + 1e-12
        ok_m = abs(mg) <= sigmas * mse + 1e-12
        rows.append(MarkovCheckRow(tc, rg, rse, mg, mse, bool(ok_r and ok_m)))
    return MarkovReport(rows, v0)
