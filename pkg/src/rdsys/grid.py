"""Value fields ``v(t, x, k)`` on tensor grids with multilinear interpolation."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import UsageError


def _locate(grid, z):
    """Cell index and weight for points ``z`` in ``grid``, clamped to the hull."""
    zc = np.clip(z, grid[0], grid[-1])
    if grid.size == 1:
        return np.zeros(z.shape, dtype=np.int64), np.zeros(z.shape), zc != z
    i = np.clip(np.searchsorted(grid, zc, side="right") - 1, 0, grid.size - 2)
    w = (zc - grid[i]) / (grid[i + 1] - grid[i])
    return i, w, zc != z


@dataclass
class ValueField:
    """Values on ``t_grid x x_grids[0] x ... x regimes``.

    ``values`` has shape ``(Nt + 1, n_1, ..., n_d, m)``; ``se`` optionally
    holds Monte Carlo standard errors of the same shape.  Queries outside
    the x hull are clamped to the nearest node and counted in
    ``extrapolation_hits``.
    """

    t_grid: np.ndarray
    x_grids: tuple
    values: np.ndarray
    se: np.ndarray | None = None
    meta: dict = field(default_factory=dict)
    extrapolation_hits: int = 0

    def __post_init__(self):
        self.t_grid = np.asarray(self.t_grid, dtype=float)
        self.x_grids = tuple(np.asarray(g, dtype=float) for g in self.x_grids)
        self.values = np.asarray(self.values, dtype=float)
        shape = (self.t_grid.size, *(g.size for g in self.x_grids))
        if self.values.shape[:-1] != shape:
            raise UsageError(f"values shape {self.values.shape} does not match grid {shape}")

    @property
    def m(self) -> int:
        return self.values.shape[-1]

    @property
    def d(self) -> int:
        return len(self.x_grids)

    @property
    def T(self) -> float:
        return float(self.t_grid[-1])

    def same_grid(self, other: "ValueField") -> bool:
        return (self.values.shape == other.values.shape
                and np.array_equal(self.t_grid, other.t_grid)
                and all(np.array_equal(a, b) for a, b in zip(self.x_grids, other.x_grids)))

    def nodes(self) -> np.ndarray:
        """All spatial nodes as an ``(n, d)`` array in C order."""
        mesh = np.meshgrid(*self.x_grids, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)

    def replace_values(self, values, se=None, **meta) -> "ValueField":
        return ValueField(self.t_grid, self.x_grids, values, se, {**self.meta, **meta})

    # interpolation ----------------------------------------------------------
    def _interp(self, arr, t, x, time_index=None):
        x = np.asarray(x, dtype=float)
        n = x.shape[0]
        if time_index is not None and self.d == 1:
            i, w, hit = _locate(self.x_grids[0], x[:, 0])
            self.extrapolation_hits += int(hit.sum())
            layer = arr[time_index]
            w = w.reshape((n,) + (1,) * (layer.ndim - 1))
            return layer[i] * (1.0 - w) + layer[np.minimum(i + 1, layer.shape[0] - 1)] * w
        locs = []
        for dim, g in enumerate(self.x_grids):
            i, w, hit = _locate(g, x[:, dim])
            self.extrapolation_hits += int(hit.sum())
            locs.append((i, w))
        if time_index is not None:
            tl = [(np.full(n, time_index, dtype=np.int64), np.ones(n))]
        else:
            ti, tw, _ = _locate(self.t_grid, np.broadcast_to(np.asarray(t, dtype=float), (n,)))
            tl = [(ti, 1.0 - tw), (ti + 1, tw)] if self.t_grid.size > 1 else [(ti, np.ones(n))]
        out = np.zeros((n,) + arr.shape[self.d + 1:])
        extra = (slice(None),) * (arr.ndim - self.d - 1)
        for tidx, twt in tl:
            for corner in itertools.product((0, 1), repeat=self.d):
                wt = twt.copy() if isinstance(twt, np.ndarray) else np.full(n, twt)
                idx = [tidx]
                for (i, w), c in zip(locs, corner):
                    if c:
                        idx.append(np.minimum(i + 1, arr.shape[len(idx)] - 1))
                        wt = wt * w
                    else:
                        idx.append(i)
                        wt = wt * (1.0 - w)
                vals = arr[tuple(idx) + extra]
                out += wt.reshape((n,) + (1,) * (vals.ndim - 1)) * vals
        return out

    def __call__(self, t, x, k=None) -> np.ndarray:
        """Values at ``(t, x)``: ``(n, m)`` for all regimes, ``(n,)`` if ``k`` given."""
        out = self._interp(self.values, t, x)
        if k is None:
            return out
        k = np.broadcast_to(np.asarray(k, dtype=np.int64), (out.shape[0],))
        return out[np.arange(out.shape[0]), k]

    def at_layer(self, i: int, x) -> np.ndarray:
        """Values at time node ``i`` for all regimes, ``(n, m)``."""
        return self._interp(self.values, None, x, time_index=i)

    def node_gradient(self) -> np.ndarray:
        """Spatial gradient at nodes, shape ``(Nt + 1, n_1, ..., n_d, m, d)``."""
        grads = []
        for dim, g in enumerate(self.x_grids):
            if g.size < 3:
                grads.append(np.zeros_like(self.values))
            else:
                grads.append(np.gradient(self.values, g, axis=1 + dim, edge_order=2))
        return np.stack(grads, axis=-1)

    def gradient(self, t, x, k=None) -> np.ndarray:
        """Interpolated spatial gradient: ``(n, m, d)``, or ``(n, d)`` if ``k`` given."""
        if "_grad" not in self.meta:
            self.meta["_grad"] = self.node_gradient()
        out = self._interp(self.meta["_grad"], t, x)
        if k is None:
            return out
        k = np.broadcast_to(np.asarray(k, dtype=np.int64), (out.shape[0],))
        return out[np.arange(out.shape[0]), k]

    def hessian(self, t, x, k=None) -> np.ndarray:
        """Interpolated spatial Hessian: ``(n, m, d, d)``, or ``(n, d, d)`` if ``k`` given."""
        if "_hess" not in self.meta:
            g = self.node_gradient()
            cols = []
            for dim, axis in enumerate(self.x_grids):
                if axis.size < 3:
                    cols.append(np.zeros_like(g))
                else:
                    cols.append(np.gradient(g, axis, axis=1 + dim, edge_order=2))
            h = np.stack(cols, axis=-1)
            self.meta["_hess"] = 0.5 * (h + np.swapaxes(h, -1, -2))
        out = self._interp(self.meta["_hess"], t, x)
        if k is None:
            return out
        k = np.broadcast_to(np.asarray(k, dtype=np.int64), (out.shape[0],))
        return out[np.arange(out.shape[0]), k]

    # export ---------------------------------------------------------------
    def to_csv(self, path) -> None:
        """Rows ``t, x_1..x_d, k, v`` (plus ``se`` when present), t slowest."""
        nodes = self.nodes()
        nt, nn, m = self.t_grid.size, nodes.shape[0], self.m
        tt = np.repeat(self.t_grid, nn * m)
        xx = np.tile(np.repeat(nodes, m, axis=0), (nt, 1))
        kk = np.tile(np.arange(m), nt * nn)
        cols = [tt, *xx.T, kk, self.values.reshape(-1)]
        header = ["t"] + [f"x{i + 1}" for i in range(self.d)] + ["k", "v"]
        fmt = ["%.10g"] * (1 + self.d) + ["%d", "%.17g"]
        if self.se is not None:
            cols.append(np.asarray(self.se).reshape(-1))
            header.append("se")
            fmt.append("%.6g")
        np.savetxt(path, np.column_stack(cols), delimiter=",", header=",".join(header),
                   comments="", fmt=fmt)

    def manifest(self) -> dict:
        info = {k: v for k, v in self.meta.items() if not k.startswith("_")}
        return {
            "t_grid": {"lo": float(self.t_grid[0]), "hi": float(self.t_grid[-1]),
                       "count": int(self.t_grid.size)},
            "x_grids": [{"lo": float(g[0]), "hi": float(g[-1]), "count": int(g.size)}
                        for g in self.x_grids],
            "regimes": self.m,
            "extrapolation_hits": int(self.extrapolation_hits),
            **info,
        }

    def write_manifest(self, path) -> None:
        Path(path).write_text(json.dumps(self.manifest(), indent=2, sort_keys=True,
                                         default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(type(o))


@dataclass(frozen=True)
class GridSpec:
    """One spatial axis: ``count`` nodes between ``lo`` and ``hi``."""

    lo: float
    hi: float
    count: int
    spacing: str = "uniform"

    def __post_init__(self):
        if self.spacing not in ("uniform", "log-uniform"):
            raise UsageError(f"unknown spacing {self.spacing!r}")
        if not self.hi > self.lo or self.count < 2:
            raise UsageError("grid needs lo < hi and at least two nodes")
        if self.spacing == "log-uniform" and self.lo <= 0:
            raise UsageError("log-uniform spacing needs lo > 0")

    def nodes(self) -> np.ndarray:
        if self.spacing == "uniform":
            return np.linspace(self.lo, self.hi, self.count)
        return np.exp(np.linspace(np.log(self.lo), np.log(self.hi), self.count))

    def to_dict(self) -> dict:
        return {"lo": float(self.lo), "hi": float(self.hi), "count": int(self.count),
                "spacing": self.spacing}
