"""Hedge decomposition of a claim along simulated paths, and its checks.

Given the solution ``v`` of the hedging equation (zero drift, no discount)
the payoff ``H`` decomposes pathwise as

    H = v(0, S_0, eta_0) + int theta dS + L_T,
    theta_t = grad_x v(t, S_t, eta_{t-}),
    L_t = sum over k != j of int (v^j - v^k + f^{kj}(v^k)) 1{eta_- = k} dM^{kj},

with ``M^{kj}`` the compensated regime counters.  Discretely the hedge is
rebalanced on the path grid and right after each regime jump.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegeneracyError, UsageError
from .grid import GridSpec, ValueField
from .model import ClaimSpec, ModelSpec, as_states
from .pde import HEDGING, PdeProblem, solve_system
from .rng import STREAM_RESTART
from .simulate import (PathBundle, piecewise_sum, regime_integral, simulate_market,
                       weighted_mean)


def _jump_payoffs(field_: ValueField, claim: ClaimSpec, bundle: PathBundle):
    """Per effective jump: the value spread ``v^j - v^k + f^{kj}(v^k)`` and ``f^{kj}(v^k)``."""
    log = bundle.jumps.effective_only()
    if not len(log):
        return log, np.zeros(0), np.zeros(0)
    V = field_(log.time, log.state)
    rows = np.arange(len(log))
    vk = V[rows, log.src]
    f = claim.jump(log.src, log.dst, vk)
    return log, V[rows, log.dst] - vk + f, f


def _per_step(bundle: PathBundle, log, amounts) -> np.ndarray:
    """Cumulative sum of jump amounts, booked at the end of the jump's step."""
    inc = np.zeros((bundle.n_paths, bundle.steps))
    if len(log):
        np.add.at(inc, (log.path, log.step), amounts)
    out = np.zeros((bundle.n_paths, bundle.steps + 1))
    out[:, 1:] = np.cumsum(inc, axis=1)
    return out


def compensator_rate(field_: ValueField, claim: ClaimSpec, model: ModelSpec):
    """``(t, x, k) -> sum_j lambda^{kj} (v^j - v^k + f^{kj}(v^k))``."""
    def rate(t, x, k):
        V = field_(t, x)
        n = x.shape[0]
        vk = V[np.arange(n), k]
        lam = model.intensities.row(t, x, k)
        spread = V - vk[:, None] + claim.jump_const[k] + claim.jump_linear[k] * vk[:, None]
        return np.sum(np.where(lam != 0.0, lam * spread, 0.0), axis=1)
    return rate


def payoff_along_paths(field_: ValueField, claim: ClaimSpec, bundle: PathBundle):
    """``H`` of each path: terminal payoff, running payments and lump sums.

    Payments that depend on the claim's value use ``v`` from the field.
    Returns ``(H, paid)`` where ``paid`` is the cumulative payment path.
    """
    flow = regime_integral(bundle, lambda t, x, k: claim.flow(k, field_(t, x, k)))
    log, _, f = _jump_payoffs(field_, claim, bundle)
    lumps = _per_step(bundle, log, f)
    paid = flow + lumps
    H = claim.h(bundle.s[:, -1], bundle.eta[:, -1]) + paid[:, -1]
    return H, paid


@dataclass
class HedgeReport:
    """Per-path hedge accounting on the bundle's grid.

    ``theta`` holds the hedge at each grid time (``(n, N + 1, d)``, using
    the regime in force at that time), ``gains`` the cumulative
    ``int theta dS``, ``L`` the orthogonal part, ``theta0`` the numeraire
    position ``H0 + L + gains - theta . S``.
    """

    H0: float
    H: np.ndarray
    theta: np.ndarray
    gains: np.ndarray
    L: np.ndarray
    theta0: np.ndarray
    value: np.ndarray
    paid: np.ndarray
    residual: np.ndarray
    covariation: np.ndarray
    weight: np.ndarray
    flagged: np.ndarray
    times: np.ndarray
    stats: dict = field(default_factory=dict)

    def _est(self, x):
        return weighted_mean(x, self.weight, self.flagged)

    def residual_stats(self) -> dict:
        mean, se = self._est(self.residual)
        rms = float(np.sqrt(self._est(self.residual ** 2)[0]))
        return {"mean": mean, "se": se, "rms": rms}

    def cost_increments(self) -> np.ndarray:
        """``dC = d(value + paid) - theta dS`` per step."""
        total = self.value + self.paid
        return np.diff(total, axis=1) - np.diff(self.gains, axis=1)

    def to_csv(self, path) -> None:
        """Per-path terminal quantities."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path", "H", "gains", "L_T", "residual", "covariation", "weight", "flagged"])
            for i in range(self.H.size):
                w.writerow([i, repr(float(self.H[i])), repr(float(self.gains[i, -1])),
                            repr(float(self.L[i, -1])), repr(float(self.residual[i])),
                            repr(float(self.covariation[i])), repr(float(self.weight[i])),
                            int(self.flagged[i])])

    def steps_to_csv(self, path) -> None:
        """Per-step aggregates across paths."""
        keep = ~self.flagged
        inc = self.cost_increments()[keep]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "mean_theta", "mean_L", "mean_gains", "mean_cost_increment",
                        "sd_cost_increment"])
            for i, t in enumerate(self.times):
                ci = inc[:, i - 1] if i > 0 else np.zeros(1)
                w.writerow([repr(float(t)), repr(float(self.theta[keep, i, 0].mean())),
                            repr(float(self.L[keep, i].mean())),
                            repr(float(self.gains[keep, i].mean())),
                            repr(float(ci.mean())), repr(float(ci.std()))])

    def manifest(self) -> dict:
        inc = self.cost_increments()[~self.flagged]
        return {"H0": self.H0, "paths": int(self.H.size), "flagged": int(self.flagged.sum()),
                "residual": self.residual_stats(),
                "cost_increment_mean": float(inc.mean()), "cost_increment_sd": float(inc.std()),
                **self.stats}

    def write_manifest(self, path) -> None:
        Path(path).write_text(json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n")


LEFT_POINT = "left-point"
MILSTEIN = "milstein"


def build_hedge(field_: ValueField, claim: ClaimSpec, model: ModelSpec,
                bundle: PathBundle, integral: str = LEFT_POINT) -> HedgeReport:
    """Hedge decomposition along every path of ``bundle``.

    ``integral`` selects the approximation of ``int theta dS`` per piece:
    ``"left-point"`` is the gain of holding ``theta(t0)`` over the piece
    (a tradeable, discretely rebalanced hedge); ``"milstein"`` adds
    ``1/2 sum_ij d_j theta_i (dS_i dS_j - a_ij dt)`` with ``a`` the diffusion
    matrix, a first-order strong approximation of the Ito integral itself.
    """
    if integral not in (LEFT_POINT, MILSTEIN):
        raise UsageError(f"unknown integral rule {integral!r}")
    if field_.m != model.m or claim.m != model.m:
        raise UsageError("field, claim and model disagree on the number of regimes")
    n, N = bundle.n_paths, bundle.steps
    s, eta, t = bundle.s, bundle.eta, bundle.times
    lo = np.array([g[0] for g in field_.x_grids])
    hi = np.array([g[-1] for g in field_.x_grids])
    flagged = np.any((s < lo) | (s > hi), axis=(1, 2)) | bundle.excluded

    theta = np.empty((n, N + 1, model.d))
    value = np.empty((n, N + 1))
    for i in range(N + 1):
        theta[:, i] = field_.gradient(t[i], s[:, i], eta[:, i])
        value[:, i] = field_(t[i], s[:, i], eta[:, i])
    H0 = float(field_(t[0], s[:1, 0], eta[:1, 0])[0])

    def gain_piece(t0, x0, t1, x1, k):
        th = field_.gradient(t0, x0, k)
        dx = x1 - x0
        out = np.sum(th * dx, axis=1)
        if integral == MILSTEIN:
            hs = field_.hessian(t0, x0, k)
            a = model.diffusion_matrix(t0, x0, k) * (t1 - t0)[:, None, None]
            out += 0.5 * np.einsum("nij,nij->n", hs, np.einsum("ni,nj->nij", dx, dx) - a)
        return out

    gains = piecewise_sum(bundle, gain_piece)
    log, spread, _ = _jump_payoffs(field_, claim, bundle)
    comp = regime_integral(bundle, compensator_rate(field_, claim, model))
    L = _per_step(bundle, log, spread) - comp
    H, paid = payoff_along_paths(field_, claim, bundle)
    residual = H - (H0 + gains[:, -1] + L[:, -1])
    theta0 = H0 + L + gains - np.einsum("nid,nid->ni", theta, s)
    covariation = np.sum(np.diff(L, axis=1) * np.diff(gains, axis=1), axis=1)
    weight = bundle.terminal_weight
    return HedgeReport(H0, H, theta, gains, L, theta0, value, paid, residual, covariation,
                       weight, flagged, t, {"steps": N, "jumps": len(log), "integral": integral})


@dataclass
class StatCheck:
    name: str
    statistic: float
    se: float
    threshold: float
    passed: bool

    def as_dict(self) -> dict:
        return {"name": self.name, "statistic": self.statistic, "se": self.se,
                "threshold": self.threshold, "passed": self.passed}


def _zero_check(name, mean, se, sigmas=3.0, floor=1e-12):
    thr = sigmas * se + floor
    return StatCheck(name, float(mean), float(se), float(thr), bool(abs(mean) <= thr))


def orthogonality_check(report: HedgeReport, sigmas: float = 3.0) -> dict:
    """Covariation of L with the hedge gains, and the mean of L_T, against zero."""
    cm, cse = report._est(report.covariation)
    lm, lse = report._est(report.L[:, -1])
    return {"covariation": _zero_check("covariation", cm, cse, sigmas),
            "L_mean": _zero_check("L_mean", lm, lse, sigmas)}


# ---------------------------------------------------------------------------


@dataclass
class RecursiveSample:
    time: float
    state: tuple
    regime: int
    field_value: float
    estimate: float
    se: float
    passed: bool


@dataclass
class RecursiveReport:
    samples: list
    sigmas: float
    rtol: float

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.samples)

    def gaps(self) -> np.ndarray:
        return np.array([s.estimate - s.field_value for s in self.samples])


def sample_states(model: ModelSpec, s0, k0, times, per_time: int, seed: int, steps=50):
    """States visited by market paths at the given times (pasting construction)."""
    paths = per_time
    bundle = simulate_market(model, s0, k0, steps, seed, paths=paths, keep_increments=False)
    out = []
    for t in times:
        i = int(round(t / model.T * steps))
        for p in range(paths):
            out.append((float(bundle.times[i]), bundle.s[p, i].copy(), int(bundle.eta[p, i])))
    return out


def recursive_value_check(field_: ValueField, claim: ClaimSpec, model: ModelSpec, *,
                          samples=None, s0=1.0, k0=0, n_samples=20, paths=20000, steps=100,
                          seed=0, measure="minimal_elmm", sigmas=3.0, rtol=0.0,
                          bump: float = 0.0) -> RecursiveReport:
    """Compare ``v(t, x, k)`` with a simulation of the recursive payoff from ``(t, x, k)``.

    The right side uses drift-free market paths (``measure="minimal_elmm"``)
    or the model's own dynamics (``measure="model"``) and plugs the field
    into the value-dependent payments.  ``bump`` adds a constant to the
    field (used to show that a wrong candidate fails).  A sample passes when
    the gap is within ``max(sigmas * se, rtol * |v|)``.
    """
    if measure == "minimal_elmm":
        sim_model = model.without_drift()
    elif measure == "model":
        sim_model = model
    else:
        raise UsageError(f"unknown measure {measure!r}")
    fld = field_ if bump == 0.0 else field_.replace_values(field_.values + bump)
    if samples is None:
        times = np.linspace(0.0, model.T, 5, endpoint=False)
        per = max(1, n_samples // len(times))
        samples = sample_states(sim_model, s0, k0, times, per, seed + 1)
    out = []
    for idx, (t, x, k) in enumerate(samples):
        x = as_states(x, model.d)
        remaining = max(1, int(round(steps * (model.T - t) / model.T)))
        bundle = simulate_market(sim_model, np.repeat(x, paths, axis=0), k, remaining, seed,
                                 paths=paths, t0=t, stream=STREAM_RESTART + 1000 + idx,
                                 keep_increments=False)
        H, _ = payoff_along_paths(fld, claim, bundle)
        est, se = bundle.estimate(H)
        v = float(fld(t, x, k)[0])
        tol = max(sigmas * se, rtol * abs(v))
        out.append(RecursiveSample(float(t), tuple(x[0]), int(k), v, est, se,
                                   bool(abs(est - v) <= tol)))
    return RecursiveReport(out, sigmas, rtol)


# ---------------------------------------------------------------------------
# replication with a traded defaultable bond


@dataclass
class ReplicationReport:
    errors: np.ndarray
    bond_position: np.ndarray
    stock_position: np.ndarray
    cash_position: np.ndarray
    W0: float
    steps: int

    @property
    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.errors ** 2)))

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.errors)))


def replicate_completed_market(model: ModelSpec, claim: ClaimSpec, bond_claim: ClaimSpec, *,
                               grid, t_steps, s0=1.0, paths=10000, steps=100, seed=0,
                               fields=None, degeneracy_tol=1e-8) -> ReplicationReport:
    """Self-financing replication with the stock and a traded defaultable bond.

    Two regimes (0 = alive, 1 = default, absorbing).  Positions are set on
    the path grid and right after default: bond units
    ``(v^d - v^n + f^{nd}(v^n)) / (vbar^d - vbar^n + fbar^{nd}(vbar^n))`` and stock units
    ``v_x - bond units * vbar_x`` while alive; after default the bond is
    dropped and the stock position is ``v_x`` of the default layer.  The
    report holds the terminal error ``wealth - H`` per path.  The traded
    bond may carry its recovery either in its default layer or as a lump sum
    ``fbar^{nd}`` paid to the holder at default; it must not pay a flow.
    """
    if model.m != 2:
        raise UsageError("replication is defined for the two-state default model")
    if not model.drift.is_zero:
        raise UsageError("replication assumes zero drift")
    if np.any(bond_claim.flow_const) or np.any(bond_claim.flow_linear):
        raise UsageError("the traded bond must not pay a flow")
    if fields is None:
        g = grid if isinstance(grid, (tuple, list)) else (grid,)
        v = solve_system(PdeProblem(model, claim, g, t_steps, HEDGING))
        vb = solve_system(PdeProblem(model, bond_claim, g, t_steps, HEDGING))
    else:
        v, vb = fields
    bundle = simulate_market(model, s0, 0, steps, seed, paths=paths, keep_increments=False)
    n, N = bundle.n_paths, bundle.steps
    t, s, eta = bundle.times, bundle.s, bundle.eta
    scale = max(1.0, float(np.max(np.abs(vb.values))))

    def positions(tt, x, k):
        V, Vb = v(tt, x), vb(tt, x)
        gx, gbx = v.gradient(tt, x)[:, :, 0], vb.gradient(tt, x)[:, :, 0]
        alive = k == 0
        den = Vb[:, 1] - Vb[:, 0] + bond_claim.jump(0, 1, Vb[:, 0])
        bad = alive & (np.abs(den) < degeneracy_tol * scale)
        if np.any(bad):
            raise DegeneracyError(f"bond default spread vanishes at x={x[bad][0]}")
        num = V[:, 1] - V[:, 0] + claim.jump(0, 1, V[:, 0])
        psi = np.where(alive, num / np.where(alive, den, 1.0), 0.0)
        rows = np.arange(x.shape[0])
        phi = gx[rows, k] - psi * gbx[rows, k]
        return psi, phi, Vb[rows, k]

    W = np.full(n, float(v(t[0], s[:1, 0], 0)[0]))
    W0 = float(W[0])
    psi_path = np.zeros((n, N + 1))
    phi_path = np.zeros((n, N + 1))
    cash_path = np.zeros((n, N + 1))
    log = bundle.jumps.effective_only()
    jump_at = {(int(p), int(st)): (float(tj), sj) for p, st, tj, sj in
               zip(log.path, log.step, log.time, log.state)}
    paid = np.zeros(n)
    for i in range(N):
        psi, phi, bond_now = positions(np.full(n, t[i]), s[:, i], eta[:, i])
        psi_path[:, i], phi_path[:, i] = psi, phi
        cash_path[:, i] = W - psi * bond_now - phi * s[:, i, 0]
        x_end = s[:, i + 1]
        k_end = eta[:, i + 1]
        hit = np.nonzero(eta[:, i] != k_end)[0]
        bond_end = vb(np.full(n, t[i + 1]), x_end, k_end)
        dW = phi * (x_end[:, 0] - s[:, i, 0]) + psi * (bond_end - bond_now)
        if hit.size:
            # split at default: trade up to tau, collect the lump sum, re-hedge
            tj = np.array([jump_at[(int(p), i)][0] for p in hit])
            sj = np.array([jump_at[(int(p), i)][1] for p in hit])
            b_post = vb(tj, sj, np.ones(hit.size, dtype=np.int64))
            b_pre = vb(tj, sj, np.zeros(hit.size, dtype=np.int64))
            b_post = b_post + bond_claim.jump(0, 1, b_pre)
            g1 = phi[hit] * (sj[:, 0] - s[hit, i, 0]) + psi[hit] * (b_post - bond_now[hit])
            vn = v(tj, sj, np.zeros(hit.size, dtype=np.int64))
            lump = claim.jump(0, 1, vn)
            paid[hit] += lump
            _, phi2, _ = positions(tj, sj, np.ones(hit.size, dtype=np.int64))
            g2 = phi2 * (x_end[hit, 0] - sj[:, 0])
            dW[hit] = g1 + g2 - lump
        W = W + dW
    H = claim.h(s[:, -1], eta[:, -1])
    flow = regime_integral(bundle, lambda tt, x, k: claim.flow(k, v(tt, x, k)))[:, -1]
    errors = W - flow - H
    return ReplicationReport(errors, psi_path, phi_path, cash_path, W0, N)


def self_replication_error(model: ModelSpec, bond_claim: ClaimSpec, **kw) -> ReplicationReport:
    """Replicate the traded bond with itself (positions 1 and 0)."""
    return replicate_completed_market(model, bond_claim, bond_claim, **kw)


def default_grid_for(model: ModelSpec, s0: float, width: float = 6.0, count: int = 200):
    """Log-uniform grid covering ``width`` standard deviations around ``s0``."""
    sig = float(np.max(np.abs(model.vol(0.0, np.array([[s0]]), np.zeros(1, dtype=np.int64)))))
    spread = width * max(sig, 1e-3) * np.sqrt(model.T) / max(s0, 1e-12)
    return GridSpec(s0 * np.exp(-spread), s0 * np.exp(spread), count, "log-uniform")
