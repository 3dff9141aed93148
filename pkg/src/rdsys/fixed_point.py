"""Feynman-Kac operator on value fields and its Picard iteration.

For a field ``v`` the operator returns, at every node ``(t_i, x, k)``,

    E[ h^k(X_T) e^{C_T} + int_t^T g^k(s, X_s, v(s, X_s)) e^{C_s} ds ],
    C_s = int_t^s c^k(u, X_u) du,

along the frozen-regime diffusion ``X = X^{t_i, x, k}``.  Its fixed point
solves the coupled system.  The operator is a contraction in the weighted
norm ``sup e^{-beta (T - t)} |v|`` once ``beta > L e^{Kc T}``.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, EstimationError, UsageError
from .grid import ValueField
from .model import (EXPONENTIAL, ClaimSpec, ModelSpec, claim_constants, interaction,
                    kappa_from_constants)
from .rng import STREAM_FEYNMAN_KAC, CounterRNG
from .simulate import frozen_paths


def kappa_bound(claim: ClaimSpec, t, model: ModelSpec):
    """Truncation boundary ``kappa(t)`` from the claim's growth constants."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > model.T * (1 + 1e-12)):
        raise UsageError("t outside [0, T]")
    c = claim_constants(claim, model)
    if min(c.K1, c.K2, c.K3) < 0:
        raise UsageError("growth constants must be non-negative")
    out = kappa_from_constants(c.K1, c.K2, c.K3, model.T - t)
    return float(out) if out.ndim == 0 else out


def beta_norm(v: ValueField, w: ValueField, beta: float) -> float:
    """``max e^{-beta (T - t)} |v - w|`` over nodes, max over regimes."""
    if not v.same_grid(w):
        raise UsageError("fields live on different grids")
    diff = np.abs(v.values - w.values)
    weight = np.exp(-beta * (v.T - v.t_grid))
    layer = diff.reshape(diff.shape[0], -1).max(axis=1)
    return float(np.max(weight * layer))


def default_beta(claim: ClaimSpec, model: ModelSpec) -> float:
    c = claim_constants(claim, model)
    return 2.0 * c.lipschitz * np.exp(c.Kc * model.T)


def theoretical_rate(claim: ClaimSpec, model: ModelSpec, beta: float) -> float:
    c = claim_constants(claim, model)
    if c.lipschitz == 0:
        return 0.0
    return c.lipschitz * np.exp(c.Kc * model.T) / beta if beta > 0 else float("inf")


@dataclass(frozen=True)
class McConfig:
    """Monte Carlo settings for the operator.

    ``substeps`` refines the path between consecutive field times; the time
    integrals still use the field's time nodes (trapezoid rule).
    """

    paths: int = 1000
    substeps: int = 1
    seed: int = 0
    max_exit_fraction: float = 1e-3
    scheme: str = "auto"


class FeynmanKacOperator:
    """Node-wise Monte Carlo evaluation of the operator on a fixed grid.

    Each node reuses the same random numbers on every application (common
    random numbers), so successive iterates differ only through the input
    field.  ``truncation`` is ``"auto"`` (clamp for the exponential family,
    whose interaction is only locally Lipschitz), ``True`` or ``False``.
    """

    def __init__(self, model: ModelSpec, claim: ClaimSpec, t_grid, x_grids,
                 mc: McConfig = McConfig(), truncation="auto"):
        self.model = model
        self.claim = claim
        self.t_grid = np.asarray(t_grid, dtype=float)
        if abs(self.t_grid[-1] - model.T) > 1e-12 or np.any(np.diff(self.t_grid) <= 0):
            raise UsageError("time grid must increase and end at T")
        self.x_grids = tuple(np.asarray(g, dtype=float) for g in x_grids)
        if len(self.x_grids) != model.d:
            raise UsageError("one x grid per state dimension expected")
        self.mc = mc
        if truncation == "auto":
            truncation = claim.family == EXPONENTIAL
        self.truncation = bool(truncation)
        self.constants = claim_constants(claim, model)
        self.kappa = kappa_from_constants(self.constants.K1, self.constants.K2,
                                          self.constants.K3, model.T - self.t_grid)
        self.rng = CounterRNG(mc.seed, STREAM_FEYNMAN_KAC)
        self.exit_stats = {}

    def template(self, fill=0.0) -> ValueField:
        shape = (self.t_grid.size, *(g.size for g in self.x_grids), self.model.m)
        return ValueField(self.t_grid, self.x_grids, np.full(shape, float(fill)))

    def terminal_field(self) -> ValueField:
        """Field equal to the terminal payoff at every time."""
        f = self.template()
        hv = self.claim.h_all(f.nodes())
        f.values[:] = hv.reshape(f.values.shape[1:])
        return f

    def apply(self, v_in: ValueField, keep_samples=False):
        """One application; returns the new field (and per-path samples)."""
        model, claim, mc = self.model, self.claim, self.mc
        nt = self.t_grid.size
        if v_in.values.shape[0] != nt or v_in.m != model.m:
            raise UsageError("input field does not match the operator's grid")
        nodes = self.template().nodes()
        nn, m, p = nodes.shape[0], model.m, mc.paths
        out = np.empty((nt, nn, m))
        se = np.zeros((nt, nn, m))
        samples = np.empty((nt - 1, nn, m, p)) if keep_samples else None
        hv = claim.h_all(nodes)
        out[-1] = hv
        worst_exit = 0.0
        sub = max(1, int(mc.substeps))
        for i in range(nt - 1):
            # batch layout: (node, regime, path)
            x0 = np.repeat(nodes, m * p, axis=0)
            k = np.tile(np.repeat(np.arange(m), p), nn)
            ids = ((i * nn + np.repeat(np.arange(nn), m * p)) * m + k) * p + np.tile(np.arange(p), nn * m)
            steps = (nt - 1 - i) * sub
            cdisc = claim.discount[k]
            acc = None
            prev = None
            exited = None
            for step, t, x, ex in frozen_paths(model, self.t_grid[i], x0, k, steps, self.rng, ids,
                                               scheme=mc.scheme, step_offset=i * sub):
                if step % sub:
                    continue
                lidx = i + step // sub
                V = v_in.at_layer(lidx, x)
                kap = self.kappa[lidx] if self.truncation else None
                g = interaction(claim, model, t, x, k, V, kappa=kap)
                term = g * np.exp(cdisc * (t - self.t_grid[i]))
                if prev is None:
                    acc = np.zeros_like(term)
                else:
                    acc += 0.5 * (self.t_grid[lidx] - self.t_grid[lidx - 1]) * (prev + term)
                prev = term
                exited = ex
            total = acc + claim.h(x, k) * np.exp(cdisc * (model.T - self.t_grid[i]))
            total = total.reshape(nn, m, p)
            ex = exited.reshape(nn, m, p)
            frac = ex.mean(axis=2)
            worst_exit = max(worst_exit, float(frac.max()))
            if np.any(frac > mc.max_exit_fraction):
                bad = np.unravel_index(int(np.argmax(frac)), frac.shape)
                raise EstimationError(
                    f"exit fraction {frac[bad]:.3g} at node t={self.t_grid[i]:.4g}, "
                    f"x={tuple(nodes[bad[0]])}, k={bad[1]}")
            keep = ~ex
            cnt = keep.sum(axis=2)
            mean = np.where(keep, total, 0.0).sum(axis=2) / cnt
            out[i] = mean
            if p > 1:
                var = np.where(keep, (total - mean[..., None]) ** 2, 0.0).sum(axis=2) / (cnt - 1)
                se[i] = np.sqrt(var / cnt)
            if samples is not None:
                samples[i] = np.where(keep, total, mean[..., None])
        self.exit_stats = {"worst_exit_fraction": worst_exit}
        shape = v_in.values.shape
        field_ = ValueField(self.t_grid, self.x_grids, out.reshape(shape), se.reshape(shape),
                            {"method": "feynman-kac", "paths": p, "seed": mc.seed})
        if keep_samples:
            return field_, samples
        return field_


def apply_F(model: ModelSpec, claim: ClaimSpec, v_in: ValueField, mc: McConfig = McConfig(),
            truncation="auto") -> ValueField:
    """One application of the operator on the grid of ``v_in``."""
    op = FeynmanKacOperator(model, claim, v_in.t_grid, v_in.x_grids, mc, truncation)
    return op.apply(v_in)


@dataclass
class TraceRow:
    iteration: int
    beta_dist: float
    sup_dist: float
    se: float
    ratio: float


@dataclass
class ContractionTrace:
    beta: float
    theoretical_rate: float
    rows: list = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.rows)

    def ratios(self) -> np.ndarray:
        return np.array([r.ratio for r in self.rows[1:]])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "beta_dist", "sup_dist", "se", "ratio", "theoretical_rate"])
            for r in self.rows:
                w.writerow([r.iteration, repr(r.beta_dist), repr(r.sup_dist), repr(r.se),
                            repr(r.ratio), repr(self.theoretical_rate)])


def _norm_se(diff_samples, beta, t_grid, T):
    """SE of the weighted sup distance, taken at the maximizing node."""
    p = diff_samples.shape[-1]
    mean = diff_samples.mean(axis=-1)
    weight = np.exp(-beta * (T - t_grid[:-1]))
    scaled = np.abs(mean) * weight[:, None, None]
    idx = np.unravel_index(int(np.argmax(scaled)), scaled.shape)
    sd = np.std(diff_samples[idx], ddof=1) if p > 1 else 0.0
    return float(weight[idx[0]] * sd / np.sqrt(p))


def iterate_to_fixed_point(model: ModelSpec, claim: ClaimSpec, v0: ValueField,
                           beta: float | None = None, tol: float = 1e-6, max_iter: int = 50,
                           mc: McConfig = McConfig(), truncation="auto",
                           min_iter: int = 1) -> tuple[ValueField, ContractionTrace]:
    """Picard iteration ``v_{n+1} = F v_n`` until the weighted step is below ``tol``."""
    if beta is None:
        beta = default_beta(claim, model)
    rate = theoretical_rate(claim, model, beta)
    consts = claim_constants(claim, model)
    if consts.lipschitz > 0 and beta <= consts.lipschitz * np.exp(consts.Kc * model.T):
        warnings.warn("beta <= L e^{Kc T}: contraction is not guaranteed", RuntimeWarning,
                      stacklevel=2)
    op = FeynmanKacOperator(model, claim, v0.t_grid, v0.x_grids, mc, truncation)
    trace = ContractionTrace(float(beta), float(rate))
    v = v0
    prev_samples = None
    prev_dist = None
    for it in range(1, max_iter + 1):
        w, samples = op.apply(v, keep_samples=True)
        dist = beta_norm(w, v, beta)
        sup = beta_norm(w, v, 0.0)
        if prev_samples is not None:
            se = _norm_se(samples - prev_samples, beta, v0.t_grid, model.T)
        else:
            se = float(np.max(w.se)) if w.se is not None else 0.0
        ratio = dist / prev_dist if prev_dist else float("nan")
        trace.rows.append(TraceRow(it, dist, sup, se, ratio))
        v, prev_samples, prev_dist = w, samples, dist
        if dist < tol and it >= min_iter:
            trace.converged = True
            v.meta.update({"iterations": it, "beta": float(beta)})
            return v, trace
    raise ConvergenceError(f"no convergence in {max_iter} iterations "
                           f"(last weighted step {trace.rows[-1].beta_dist:.3g})", trace=trace)
