"""Path simulation of the regime-switching market and of frozen-regime diffusions.

Two constructions of the coupled pair (S, eta) are provided:

``pasting``
    S follows the diffusion of the current regime; regime jumps come from
    thinning a Poisson clock of rate ``(m - 1) * bound``: each candidate
    picks a target regime uniformly and is accepted with probability
    ``lambda(t, S_t) / bound``.
``reweight``
    One counter per declared channel, each an independent unit-rate Poisson
    process, so eta moves autonomously; the likelihood ratio back to the model
    measure is carried as a per-path weight (exponential form, so weights
    never go negative).

Both constructions step S on a uniform grid and superpose candidate event
times exactly inside each step, splitting the Brownian increment with a
Brownian bridge.  Randomness comes from :class:`CounterRNG`, keyed by
(seed, stream, path, step, slot), so a path does not depend on how many
other paths are simulated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ModelDefinitionError, SimulationError, UsageError
from .model import POSITIVE_ORTHANT, ModelSpec, as_states
from .rng import STREAM_FROZEN, STREAM_MARKET, CounterRNG

PASTING = "pasting"
REWEIGHT = "reweight"

# slots used per step: 0 candidate count, 1..r step Brownian increment, then
# per candidate a block of (time, channel, accept, r bridge normals)
_CAND_BASE = 64


def _poisson_counts(u, mu):
    """Inverse-CDF Poisson draws with common mean ``mu`` for uniforms ``u``."""
    if mu <= 0.0:
        return np.zeros(u.shape, dtype=np.int64)
    kmax = int(mu + 12.0 * np.sqrt(mu) + 20.0)
    ks = np.arange(kmax + 1)
    logp = -mu + ks * np.log(mu) - np.cumsum(np.log(np.maximum(ks, 1)))
    cdf = np.cumsum(np.exp(logp))
    return np.minimum(np.searchsorted(cdf, u, side="left"), kmax).astype(np.int64)


def resolve_scheme(model: ModelSpec, scheme: str) -> str:
    if scheme == "auto":
        # log-euler only where it is consistent: multiplicative dynamics on the orthant
        mult = model.vol.family == "multiplicative" and (
            model.drift.is_zero or model.drift.family == "multiplicative")
        return "log-euler" if model.domain.kind == POSITIVE_ORTHANT and mult else "euler"
    if scheme not in ("euler", "log-euler"):
        raise UsageError(f"unknown scheme {scheme!r}")
    if scheme == "log-euler" and model.domain.kind != POSITIVE_ORTHANT:
        raise UsageError("log-euler needs the positive-orthant domain")
    return scheme


def advance(model: ModelSpec, scheme: str, t, s, k, dt, dw):
    """One step of the frozen-regime SDE for a batch.

    ``dt`` is a scalar or per-path array, ``dw`` the Brownian increments
    ``(n, r)`` over that step.  The log-euler step is exact for the
    multiplicative family with coefficients frozen over the step.
    """
    dt = np.asarray(dt, dtype=float)
    if dt.ndim == 1:
        dt = dt[:, None]
    vol = model.vol(t, s, k)
    if model.drift.is_zero:
        drift = 0.0
    else:
        drift = model.drift(t, s, k)
    if scheme == "euler":
        return s + drift * dt + np.einsum("nir,nr->ni", vol, dw)
    rel = vol / s[:, :, None]
    mu = drift / s - 0.5 * np.sum(rel * rel, axis=2)
    return s * np.exp(mu * dt + np.einsum("nir,nr->ni", rel, dw))


@dataclass
class JumpLog:
    """Counter events of a bundle, in (path, time) order.

    ``effective`` marks events that changed the regime; for the pasting
    construction every logged event is effective.  ``state`` is S at the
    event time (S is continuous, so pre- and post-jump values coincide).
    """

    path: np.ndarray
    time: np.ndarray
    step: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    state: np.ndarray
    effective: np.ndarray

    @classmethod
    def empty(cls, d):
        z = np.zeros(0, dtype=np.int64)
        return cls(z, np.zeros(0), z, z, z, np.zeros((0, d)), np.zeros(0, dtype=bool))

    def __len__(self):
        return int(self.path.size)

    def select(self, mask) -> "JumpLog":
        return JumpLog(self.path[mask], self.time[mask], self.step[mask], self.src[mask],
                       self.dst[mask], self.state[mask], self.effective[mask])

    def effective_only(self) -> "JumpLog":
        return self.select(self.effective)


@dataclass
class PathBundle:
    """Simulated paths on a uniform grid.

    ``s`` has shape ``(n, N + 1, d)``, ``eta`` ``(n, N + 1)`` with the value
    at ``times[i]`` (a jump exactly on a grid time has probability zero, so
    this is also the left limit).  ``dw`` holds the Brownian increments per
    step, ``weight`` the likelihood-ratio path (``None`` when the bundle is
    drawn under the model measure).  ``excluded`` marks paths that left the
    domain or whose weight underflowed; estimators drop them.
    """

    times: np.ndarray
    s: np.ndarray
    eta: np.ndarray
    dw: np.ndarray | None
    jumps: JumpLog
    weight: np.ndarray | None
    excluded: np.ndarray
    seed: int
    construction: str
    scheme: str
    antithetic: bool = False
    stats: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.s.shape[0]

    @property
    def steps(self) -> int:
        return self.times.size - 1

    @property
    def terminal_weight(self) -> np.ndarray:
        if self.weight is None:
            return np.ones(self.n_paths)
        return self.weight[:, -1]

    def estimate(self, values) -> tuple[float, float]:
        """Weighted mean and standard error of a per-path functional."""
        return weighted_mean(values, self.terminal_weight, self.excluded, self.antithetic)

    def to_csv(self, path) -> None:
        """Long-format CSV: ``path,time,s0..s{d-1},regime,weight``."""
        n, n1, d = self.s.shape
        w = self.weight if self.weight is not None else np.ones((n, n1))
        cols = [np.repeat(np.arange(n), n1), np.tile(self.times, n)]
        cols += [self.s[:, :, i].ravel() for i in range(d)]
        cols += [self.eta.ravel(), w.ravel()]
        header = ",".join(["path", "time"] + [f"s{i}" for i in range(d)] + ["regime", "weight"])
        fmt = ["%d", "%.10g"] + ["%.17g"] * d + ["%d", "%.17g"]
        np.savetxt(path, np.column_stack(cols), delimiter=",", header=header, comments="", fmt=fmt)

    def manifest(self) -> dict:
        return {
            "seed": self.seed,
            "construction": self.construction,
            "scheme": self.scheme,
            "paths": self.n_paths,
            "steps": self.steps,
            "horizon": [float(self.times[0]), float(self.times[-1])],
            "antithetic": self.antithetic,
            "jumps_logged": len(self.jumps),
            "excluded": int(self.excluded.sum()),
            **{k: v for k, v in self.stats.items()},
        }

    def write_manifest(self, path) -> None:
        Path(path).write_text(json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n")


def weighted_mean(values, weights=None, excluded=None, antithetic=False):
    """Mean of ``values * weights`` over kept paths, with its standard error.

    The estimator is not self-normalized: the weights already have mean one
    under the simulation measure.  Antithetic pairs (2i, 2i+1) are averaged
    before the error is computed.
    """
    values = np.asarray(values, dtype=float)
    if weights is not None:
        values = values * np.asarray(weights, dtype=float)
    keep = np.ones(values.shape[0], dtype=bool) if excluded is None else ~np.asarray(excluded)
    if antithetic and values.shape[0] % 2 == 0:
        pair_keep = keep[0::2] & keep[1::2]
        samples = 0.5 * (values[0::2] + values[1::2])[pair_keep]
    else:
        samples = values[keep]
    if samples.size == 0:
        return float("nan"), float("nan")
    mean = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / np.sqrt(samples.size)) if samples.size > 1 else float("inf")
    return mean, se


# ---------------------------------------------------------------------------


def _prepare_start(model, s0, k0, paths):
    s0 = as_states(s0, model.d)
    if s0.shape[0] == 1:
        s0 = np.repeat(s0, paths, axis=0)
    if s0.shape[0] != paths:
        raise UsageError("start states must be one point or one per path")
    if not np.all(model.domain.contains(s0)):
        raise UsageError("start state outside the domain")
    k0 = np.asarray(k0, dtype=np.int64)
    k0 = np.full(paths, int(k0)) if k0.ndim == 0 else k0.copy()
    if k0.shape != (paths,) or np.any(k0 < 0) or np.any(k0 >= model.m):
        raise UsageError("start regimes must lie in 0..m-1")
    return s0, k0


def _total_rate(model, t, x):
    out = np.zeros(x.shape[0])
    for _, _, fn in model.intensities.channels:
        out += fn(t, x)
    return out


def simulate_market(model: ModelSpec, s0, k0, steps: int, seed: int, *,
                    paths: int | None = None, construction: str = PASTING,
                    scheme: str = "auto", t0: float = 0.0, horizon: float | None = None,
                    antithetic: bool = False, stream: int = STREAM_MARKET,
                    path_offset: int = 0, keep_increments: bool = True,
                    max_exit_fraction: float = 1e-3) -> PathBundle:
    """Simulate ``paths`` trajectories of (S, eta) on ``[t0, horizon]``.

    ``s0`` and ``k0`` may be a single start or one per path (the latter is
    how restart estimators branch from stored path states).
    """
    if construction not in (PASTING, REWEIGHT):
        raise UsageError(f"unknown construction {construction!r}")
    if steps < 1:
        raise UsageError("steps must be >= 1")
    if paths is None:
        paths = np.atleast_2d(np.asarray(s0, dtype=float)).shape[0] if np.ndim(s0) > 1 else 1
    scheme = resolve_scheme(model, scheme)
    horizon = model.T if horizon is None else float(horizon)
    if not (0.0 <= t0 < horizon <= model.T + 1e-12):
        raise UsageError("need 0 <= t0 < horizon <= T")
    s_cur, k_cur = _prepare_start(model, s0, k0, paths)
    m, d, r = model.m, model.d, model.r
    times = np.linspace(t0, horizon, steps + 1)
    h = (horizon - t0) / steps
    rng = CounterRNG(seed, stream)
    ids = np.arange(paths, dtype=np.int64) + path_offset
    if antithetic:
        keys = ids // 2
        sign = np.where(ids % 2 == 0, 1.0, -1.0)[:, None]
    else:
        keys = ids
        sign = np.ones((paths, 1))
    ukeys = keys.astype(np.uint64)

    bound = model.intensities.bound
    if construction == PASTING:
        clock = (m - 1) * bound if model.intensities.channels else 0.0
        n_counters = 0
    else:
        # unit-rate reference counters on declared channels only: a counter whose
        # intensity is identically zero would only annihilate weights
        pairs = sorted({(a, b) for a, b, _ in model.intensities.channels})
        pair_src = np.array([p[0] for p in pairs], dtype=np.int64)
        pair_dst = np.array([p[1] for p in pairs], dtype=np.int64)
        n_counters = len(pairs)
        clock = float(n_counters)
        lam_fns = {(a, b): fn for a, b, fn in model.intensities.channels}

    s_out = np.empty((paths, steps + 1, d))
    eta_out = np.empty((paths, steps + 1), dtype=np.int64)
    dw_out = np.empty((paths, steps, r)) if keep_increments else None
    s_out[:, 0] = s_cur
    eta_out[:, 0] = k_cur
    logw = np.zeros(paths) if construction == REWEIGHT else None
    w_out = np.empty((paths, steps + 1)) if construction == REWEIGHT else None
    if w_out is not None:
        w_out[:, 0] = 1.0
    exited = np.zeros(paths, dtype=bool)
    annihilated = np.zeros(paths, dtype=bool)
    log_rows = []
    slot_stride = 3 + r

    def move(idx, t, a, dwp):
        """Advance paths ``idx`` by time ``a`` with increments ``dwp``."""
        if construction == REWEIGHT:
            logw[idx] -= (_total_rate(model, t, s_cur[idx]) - n_counters) * a
        new = advance(model, scheme, t, s_cur[idx], k_cur[idx], a, dwp)
        bad = ~np.all(np.isfinite(new), axis=1)
        if np.any(bad & ~exited[idx]):
            raise SimulationError(f"non-finite state at step {step}", step=step)
        out = ~model.domain.contains(np.where(bad[:, None], 1.0, new))
        if np.any(out):
            exited[idx[out]] = True
            new[out] = s_cur[idx[out]]
        s_cur[idx] = new

    for step in range(steps):
        t = times[step]
        z = rng.normal(ukeys[:, None], step, np.arange(1, r + 1)[None, :]) * sign
        dw_step = np.sqrt(h) * z
        if dw_out is not None:
            dw_out[:, step] = dw_step
        counts = _poisson_counts(rng.uniform(ukeys, step, 0), clock * h)
        kmax = int(counts.max()) if counts.size else 0
        if kmax == 0:
            move(np.arange(paths), t, h, dw_step)
        else:
            if _CAND_BASE + kmax * slot_stride >= 1 << 20:
                raise SimulationError("too many candidate events in one step", step=step)
            cslots = _CAND_BASE + np.arange(kmax) * slot_stride
            u_time = rng.uniform(ukeys[:, None], step, cslots[None, :])
            u_time[np.arange(kmax)[None, :] >= counts[:, None]] = np.inf
            u_time.sort(axis=1)
            offset = np.zeros(paths)
            w_rem = dw_step.copy()
            for c in range(kmax):
                idx = np.nonzero(counts > c)[0]
                tau = u_time[idx, c] * h
                a = tau - offset[idx]
                rem = h - offset[idx]
                zb = rng.normal(ukeys[idx, None], step,
                                cslots[c] + 3 + np.arange(r)[None, :]) * sign[idx]
                frac = (a / rem)[:, None]
                sd = np.sqrt(np.maximum(a * (rem - a) / rem, 0.0))[:, None]
                dwa = frac * w_rem[idx] + sd * zb
                move(idx, t + offset[idx], a, dwa)
                w_rem[idx] -= dwa
                offset[idx] = tau
                tc = t + tau
                u_ch = rng.uniform(ukeys[idx], step, cslots[c] + 1)
                if construction == PASTING:
                    src = k_cur[idx]
                    pick = np.minimum((u_ch * (m - 1)).astype(np.int64), m - 2)
                    dst = pick + (pick >= src)
                    lam = model.intensities.rate(tc, s_cur[idx], src, dst)
                    if np.any(lam > bound * (1.0 + 1e-12)) or np.any(lam < 0):
                        raise ModelDefinitionError(
                            f"intensity {float(lam.max()):.6g} outside [0, bound={bound:.6g}] "
                            f"at step {step}", field="intensities")
                    u_acc = rng.uniform(ukeys[idx], step, cslots[c] + 2)
                    acc = u_acc * bound < lam
                    hit = idx[acc]
                    if hit.size:
                        log_rows.append((hit, tc[acc], np.full(hit.size, step), src[acc],
                                         dst[acc], s_cur[hit].copy(), np.ones(hit.size, bool)))
                        k_cur[hit] = dst[acc]
                else:
                    cnt = np.minimum((u_ch * n_counters).astype(np.int64), n_counters - 1)
                    src = pair_src[cnt]
                    dst = pair_dst[cnt]
                    lam = np.zeros(idx.size)
                    for (a_, b_), fn in lam_fns.items():
                        sel = (src == a_) & (dst == b_)
                        if np.any(sel):
                            lam[sel] = fn(tc[sel], s_cur[idx[sel]])
                    zero = lam <= 0.0
                    annihilated[idx[zero]] = True
                    with np.errstate(divide="ignore"):
                        logw[idx] += np.log(lam)
                    eff = k_cur[idx] == src
                    log_rows.append((idx.copy(), tc, np.full(idx.size, step), src, dst,
                                     s_cur[idx].copy(), eff))
                    k_cur[idx[eff]] = dst[eff]
            rem = h - offset
            move(np.arange(paths), t + offset, rem, w_rem)
        s_out[:, step + 1] = s_cur
        eta_out[:, step + 1] = k_cur
        if w_out is not None:
            w_out[:, step + 1] = np.exp(logw)

    jumps = _assemble_log(log_rows, d)
    stats = {"exits": int(exited.sum()), "exit_fraction": float(exited.mean())}
    excluded = exited.copy()
    if construction == REWEIGHT:
        under = (w_out[:, -1] == 0.0) & ~annihilated
        stats["annihilated"] = int(annihilated.sum())
        stats["underflow"] = int(under.sum())
        excluded |= under
    if stats["exit_fraction"] > max_exit_fraction:
        raise SimulationError(
            f"{stats['exits']} of {paths} paths left the domain "
            f"(fraction {stats['exit_fraction']:.3g} > {max_exit_fraction:g})")
    return PathBundle(times, s_out, eta_out, dw_out, jumps, w_out, excluded, seed,
                      construction, scheme, antithetic, stats)


def _assemble_log(rows, d) -> JumpLog:
    if not rows:
        return JumpLog.empty(d)
    path = np.concatenate([r[0] for r in rows]).astype(np.int64)
    time = np.concatenate([r[1] for r in rows])
    step = np.concatenate([r[2] for r in rows]).astype(np.int64)
    src = np.concatenate([r[3] for r in rows]).astype(np.int64)
    dst = np.concatenate([r[4] for r in rows]).astype(np.int64)
    state = np.concatenate([r[5] for r in rows]).reshape(-1, d)
    eff = np.concatenate([r[6] for r in rows]).astype(bool)
    order = np.lexsort((time, path))
    return JumpLog(path[order], time[order], step[order], src[order], dst[order],
                   state[order], eff[order])


def simulate_market_pasting(model, s0, k0, steps, seed, paths=1, **kw) -> PathBundle:
    return simulate_market(model, s0, k0, steps, seed, paths=paths, construction=PASTING, **kw)


def simulate_market_reweight(model, s0, k0, steps, seed, paths=1, **kw) -> PathBundle:
    return simulate_market(model, s0, k0, steps, seed, paths=paths, construction=REWEIGHT, **kw)


# ---------------------------------------------------------------------------
# change to the minimal martingale measure


def girsanov_to_minimal_elmm(model: ModelSpec, bundle: PathBundle, *, resimulate=False,
                             paths=None) -> PathBundle:
    """Bundle whose expectations are taken under the minimal martingale measure.

    By default the likelihood ratio ``E(-int Phi dW)`` is accumulated on the
    stored Brownian increments (left-point Phi with the regime at the start
    of each step) and multiplied into any existing weight.  With
    ``resimulate=True`` the market is simulated afresh without drift, using
    the bundle's seed and construction.
    """
    if resimulate:
        s0 = bundle.s[:, 0]
        return simulate_market(model.without_drift(), s0, bundle.eta[:, 0], bundle.steps,
                               bundle.seed, paths=bundle.n_paths,
                               construction=bundle.construction, scheme=bundle.scheme,
                               t0=float(bundle.times[0]), horizon=float(bundle.times[-1]),
                               antithetic=bundle.antithetic)
    if bundle.dw is None:
        raise UsageError("bundle carries no Brownian increments")
    n, steps = bundle.n_paths, bundle.steps
    logz = np.zeros((n, steps + 1))
    for i in range(steps):
        t = bundle.times[i]
        h = bundle.times[i + 1] - t
        phi = model.market_price_of_risk(t, bundle.s[:, i], bundle.eta[:, i])
        logz[:, i + 1] = logz[:, i] - np.sum(phi * bundle.dw[:, i], axis=1) \
            - 0.5 * np.sum(phi * phi, axis=1) * h
    z = np.exp(logz)
    weight = z if bundle.weight is None else bundle.weight * z
    out = PathBundle(bundle.times, bundle.s, bundle.eta, bundle.dw, bundle.jumps, weight,
                     bundle.excluded.copy(), bundle.seed, bundle.construction, bundle.scheme,
                     bundle.antithetic, dict(bundle.stats))
    out.stats["measure"] = "minimal-elmm"
    return out


# ---------------------------------------------------------------------------
# path functionals


@dataclass
class Segments:
    """Pieces of the grid steps that contain effective regime jumps.

    Each piece runs from ``(t0, x0)`` to ``(t1, x1)`` on path ``path`` inside
    grid step ``step`` with regime ``regime`` in force.  Steps without jumps
    are not listed: they are a single piece from grid node to grid node.
    """

    path: np.ndarray
    step: np.ndarray
    t0: np.ndarray
    x0: np.ndarray
    t1: np.ndarray
    x1: np.ndarray
    regime: np.ndarray

    @property
    def steps_with_jumps(self):
        return self.path, self.step


def jump_segments(bundle: PathBundle) -> Segments:
    log = bundle.jumps.effective_only()
    t, s = bundle.times, bundle.s
    d = s.shape[2]
    if not len(log):
        z = np.zeros(0, dtype=np.int64)
        e = np.zeros(0)
        return Segments(z, z, e, np.zeros((0, d)), e, np.zeros((0, d)), z)
    steps = bundle.steps
    key = log.path * (steps + 1) + log.step
    first = np.r_[True, key[1:] != key[:-1]]
    last = np.r_[key[1:] != key[:-1], True]
    p, st = log.path, log.step
    left_t = np.where(first, t[st], np.r_[0.0, log.time[:-1]])
    left_x = np.where(first[:, None], s[p, st], np.r_[np.zeros((1, d)), log.state[:-1]])
    pl, sl = p[last], st[last]
    return Segments(
        np.r_[p, pl], np.r_[st, sl],
        np.r_[left_t, log.time[last]], np.r_[left_x, log.state[last]],
        np.r_[log.time, t[sl + 1]], np.r_[log.state, s[pl, sl + 1]],
        np.r_[log.src, log.dst[last]])


def piecewise_sum(bundle: PathBundle, piece) -> np.ndarray:
    """Cumulative sum over grid steps of ``piece(t0, x0, t1, x1, k)``.

    Steps containing regime jumps are split at the jumps (see
    :func:`jump_segments`).  Returns ``(n, N + 1)`` starting at zero.
    """
    n, steps = bundle.n_paths, bundle.steps
    t, s = bundle.times, bundle.s
    inc = np.empty((n, steps))
    for i in range(steps):
        inc[:, i] = piece(np.full(n, t[i]), s[:, i], np.full(n, t[i + 1]), s[:, i + 1],
                          bundle.eta[:, i])
    seg = jump_segments(bundle)
    if seg.path.size:
        inc[seg.path, seg.step] = 0.0
        np.add.at(inc, (seg.path, seg.step), piece(seg.t0, seg.x0, seg.t1, seg.x1, seg.regime))
    out = np.zeros((n, steps + 1))
    out[:, 1:] = np.cumsum(inc, axis=1)
    return out


def regime_integral(bundle: PathBundle, fn) -> np.ndarray:
    """Cumulative ``int_t0^t fn(u, S_u, eta_u) du`` at every grid time.

    Trapezoid rule per step; a step containing effective regime jumps is
    split at the jump times, using the logged S at each jump, so that every
    piece is integrated with the regime that was actually in force.
    ``fn(t, x, k)`` is vectorized and returns ``(n,)``.
    """
    return piecewise_sum(bundle, lambda t0, x0, t1, x1, k:
                         0.5 * (t1 - t0) * (fn(t0, x0, k) + fn(t1, x1, k)))


def compensated_counters(model: ModelSpec, bundle: PathBundle, *, effective=True) -> dict:
    """Terminal compensated counters per channel ``(k, j)``.

    With ``effective=True`` the counter is the number of ``k -> j`` regime
    changes minus ``int lambda^{kj}(t, S_t) 1{eta_t = k} dt``; this is what
    the pasting construction simulates.  With ``effective=False`` (reweight
    bundles only) all events of the raw counter ``N^{kj}`` are counted
    against ``int lambda^{kj}(t, S_t) dt``.
    """
    if not effective and bundle.construction != REWEIGHT:
        raise UsageError("raw counters are only simulated by the reweight construction")
    out = {}
    log = bundle.jumps.effective_only() if effective else bundle.jumps
    for src, dst, fn in model.intensities.channels:
        if effective:
            comp = regime_integral(bundle, lambda t, x, k, fn=fn, src=src:
                                   np.where(k == src, fn(t, x), 0.0))[:, -1]
        else:
            comp = regime_integral(bundle, lambda t, x, k, fn=fn: fn(t, x))[:, -1]
        sel = (log.src == src) & (log.dst == dst)
        count = np.bincount(log.path[sel], minlength=bundle.n_paths).astype(float)
        out[(src, dst)] = count - comp
    return out


# ---------------------------------------------------------------------------
# frozen-regime diffusions


@dataclass
class FrozenPath:
    start: tuple
    times: np.ndarray
    x: np.ndarray
    exit_flag: bool


def frozen_paths(model: ModelSpec, t0: float, x0, k, steps: int, rng: CounterRNG, path_ids,
                 *, scheme="auto", horizon=None, step_offset=0):
    """Iterator over the states of a batch of frozen-regime diffusions.

    Yields ``(i, t_i, x_i, exited)`` for ``i = 0..steps``; stepping happens
    lazily so long batches need no path storage.
    """
    scheme = resolve_scheme(model, scheme)
    horizon = model.T if horizon is None else horizon
    x = np.array(as_states(x0, model.d), dtype=float)
    n = x.shape[0]
    k = np.broadcast_to(np.asarray(k, dtype=np.int64), (n,))
    keys = np.asarray(path_ids, dtype=np.uint64)
    times = np.linspace(t0, horizon, steps + 1)
    h = (horizon - t0) / steps if steps else 0.0
    exited = np.zeros(n, dtype=bool)
    slots = np.arange(model.r)[None, :]
    yield 0, times[0], x, exited
    for i in range(steps):
        dw = np.sqrt(h) * rng.normal(keys[:, None], step_offset + i, slots)
        new = advance(model, scheme, times[i], x, k, h, dw)
        bad = ~np.all(np.isfinite(new), axis=1)
        if np.any(bad):
            raise SimulationError(f"non-finite frozen-path state at step {i}", step=i)
        out = ~model.domain.contains(new)
        if np.any(out):
            exited |= out
            new[out] = x[out]
        x = new
        yield i + 1, times[i + 1], x, exited


def simulate_frozen(model: ModelSpec, start, steps: int, scheme: str = "auto",
                    seed: int = 0, path_id: int = 0) -> FrozenPath:
    """One path of ``X^{t,x,k}`` from ``start = (t, x, k)`` to T."""
    t0, x0, k0 = start
    if steps < 1:
        raise UsageError("steps must be >= 1")
    x0 = as_states(x0, model.d)[:1]
    if not model.domain.contains(x0)[0]:
        raise UsageError("start point outside the domain")
    rng = CounterRNG(seed, STREAM_FROZEN)
    xs = []
    times = []
    exited = None
    for _, t, x, ex in frozen_paths(model, t0, x0, k0, steps, rng, [path_id], scheme=scheme):
        xs.append(x[0].copy())
        times.append(t)
        exited = ex
    return FrozenPath((float(t0), tuple(x0[0]), int(k0)), np.array(times), np.array(xs),
                      bool(exited[0]))


def simulate_frozen_batch(model: ModelSpec, start, steps: int, paths: int, scheme="auto",
                          seed: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``paths`` independent copies of ``X^{t,x,k}``; returns (times, x, exited)."""
    t0, x0, k0 = start
    rng = CounterRNG(seed, STREAM_FROZEN)
    x0 = np.repeat(as_states(x0, model.d)[:1], paths, axis=0)
    out = np.empty((paths, steps + 1, model.d))
    times = np.empty(steps + 1)
    for i, t, x, ex in frozen_paths(model, t0, x0, k0, steps, rng, np.arange(paths),
                                    scheme=scheme):
        out[:, i] = x
        times[i] = t
    return times, out, ex.copy()
