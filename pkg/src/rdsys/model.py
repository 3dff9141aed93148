"""Market and claim data types.

A market is a d-dimensional Ito process S whose drift and volatility depend
on a finite regime process eta, while the jump intensities of eta depend on
(t, S).  Coefficients are drawn from closed parametric families so that
every model can be serialized and rebuilt bit-for-bit.

Array conventions used throughout the package: a batch of states is ``x`` of
shape ``(n, d)``, regimes are integer arrays ``k`` of shape ``(n,)`` with
values in ``0..m-1``, and value vectors over regimes are ``(n, m)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .errors import ConfigurationError, ModelDefinitionError, UsageError

POSITIVE_ORTHANT = "positive-orthant"
FULL_SPACE = "full-space"

LINEAR = "linear"
EXPONENTIAL = "exponential"

SINGULARITY_COND = 1e8


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


def as_states(x, dim: int) -> np.ndarray:
    """Coerce a point or batch of points to shape ``(n, dim)``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(-1, 1) if dim == 1 else x.reshape(1, -1)
    if x.shape[-1] != dim:
        raise UsageError(f"expected states with {dim} components, got shape {x.shape}")
    return x


def as_regimes(k, n: int) -> np.ndarray:
    k = np.asarray(k, dtype=np.int64)
    if k.ndim == 0:
        k = np.full(n, int(k), dtype=np.int64)
    if k.shape != (n,):
        raise UsageError(f"regime array has shape {k.shape}, expected ({n},)")
    return k


@dataclass(frozen=True)
class Domain:
    """State space: ``(0, inf)^d`` or ``R^d``."""

    kind: str
    dim: int

    def __post_init__(self):
        if self.kind not in (POSITIVE_ORTHANT, FULL_SPACE):
            raise ConfigurationError(f"unknown domain kind {self.kind!r}")
        if int(self.dim) < 1:
            raise ConfigurationError("domain dimension must be >= 1")

    def contains(self, x) -> np.ndarray:
        x = as_states(x, self.dim)
        ok = np.all(np.isfinite(x), axis=1)
        if self.kind == POSITIVE_ORTHANT:
            ok &= np.all(x > 0.0, axis=1)
        return ok


# ---------------------------------------------------------------------------
# scalar rate functions (intensities, drift multipliers)


_RATE_FAMILIES = {
    "constant": ("value",),
    "logistic": ("lo", "hi", "center", "slope"),
    "tabulated": ("grid", "values"),
}


@dataclass(frozen=True, eq=False)
class RateFunction:
    """Bounded scalar map ``(t, x) -> rate`` acting on one state component.

    Families
    --------
    constant
        ``value``.
    logistic
        ``lo + (hi - lo) / (1 + exp(slope * (z - center)))`` with
        ``z = log(x[axis])`` when ``log_scale`` else ``z = x[axis]``.  With
        positive slope the rate is high for low index levels.
    tabulated
        Piecewise linear in ``x[axis]`` through ``(grid, values)``, flat
        outside the grid.  Only piecewise C^1, so models using it are marked
        as assumption-relaxed.

    ``scale`` multiplies every family.
    """

    family: str
    params: Mapping = field(default_factory=dict)
    scale: float = 1.0
    axis: int = 0
    log_scale: bool = True

    def __post_init__(self):
        if self.family not in _RATE_FAMILIES:
            raise ConfigurationError(f"unknown rate family {self.family!r}")
        missing = [p for p in _RATE_FAMILIES[self.family] if p not in self.params]
        if missing:
            raise ConfigurationError(f"rate family {self.family!r} missing {missing}")
        params = {}
        for key, val in self.params.items():
            params[key] = tuple(float(v) for v in val) if np.ndim(val) else float(val)
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "scale", float(self.scale))
        if self.family == "tabulated":
            g = np.asarray(params["grid"])
            if g.size < 2 or np.any(np.diff(g) <= 0) or g.size != len(params["values"]):
                raise ConfigurationError("tabulated rate needs increasing grid matching values")

    @classmethod
    def constant(cls, value: float, scale: float = 1.0) -> "RateFunction":
        return cls("constant", {"value": value}, scale=scale)

    @classmethod
    def logistic(cls, lo, hi, center, slope, *, log_scale=True, axis=0, scale=1.0):
        return cls("logistic", {"lo": lo, "hi": hi, "center": center, "slope": slope},
                   scale=scale, axis=axis, log_scale=log_scale)

    def scaled(self, factor: float) -> "RateFunction":
        return replace(self, scale=self.scale * factor)

    @property
    def is_constant(self) -> bool:
        return self.family == "constant"

    @property
    def relaxed(self) -> bool:
        return self.family == "tabulated"

    def __call__(self, t, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        n = x.shape[0]
        p = self.params
        if self.family == "constant":
            return np.full(n, self.scale * p["value"])
        z = x[:, self.axis]
        if self.family == "logistic":
            if self.log_scale:
                with np.errstate(divide="ignore", invalid="ignore"):
                    z = np.log(z)
            arg = np.clip(p["slope"] * (z - p["center"]), -700.0, 700.0)
            out = p["lo"] + (p["hi"] - p["lo"]) / (1.0 + np.exp(arg))
        else:
            out = np.interp(z, p["grid"], p["values"])
        return self.scale * out

    def sup(self) -> float:
        p = self.params
        if self.family == "constant":
            return abs(self.scale * p["value"])
        if self.family == "logistic":
            return abs(self.scale) * max(abs(p["lo"]), abs(p["hi"]))
        return abs(self.scale) * float(np.max(np.abs(p["values"])))

    def inf(self) -> float:
        p = self.params
        if self.family == "constant":
            return self.scale * p["value"]
        if self.family == "logistic":
            return min(self.scale * p["lo"], self.scale * p["hi"])
        return float(np.min(self.scale * np.asarray(p["values"])))

    def to_dict(self) -> dict:
        params = {k: list(v) if isinstance(v, tuple) else v for k, v in self.params.items()}
        out = {"family": self.family, "params": params, "scale": self.scale}
        if self.family != "constant":
            out["axis"] = self.axis
        if self.family == "logistic":
            out["log_scale"] = self.log_scale
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "RateFunction":
        return cls(d["family"], dict(d.get("params", {})), scale=d.get("scale", 1.0),
                   axis=d.get("axis", 0), log_scale=d.get("log_scale", True))


# ---------------------------------------------------------------------------
# vector/matrix coefficient fields


_FIELD_FAMILIES = ("constant", "affine", "multiplicative", "tabulated")


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Regime-indexed vector (drift) or matrix (volatility) field.

    ``shape`` is ``(d,)`` for a drift and ``(d, r)`` for a volatility.

    Families and their parameter arrays (leading axis is the regime):

    constant
        ``value``: ``(m, *shape)``.
    affine
        ``slope``: ``(m, *shape, d)``, ``offset``: ``(m, *shape)``; the value
        is ``slope @ x + offset``.
    multiplicative
        ``rate``: ``(m, *shape)``; the value is ``diag(x) @ rate`` (Black-Scholes
        style).  An optional per-regime ``multiplier`` RateFunction scales
        the regime's rate by a state-dependent factor.
    tabulated
        ``grid``: ``(G,)`` nodes in ``x[axis]``, ``values``: ``(m, G, *shape)``;
        piecewise linear and flat outside the grid.
    """

    family: str
    shape: tuple
    params: Mapping
    multiplier: tuple = ()
    axis: int = 0

    def __post_init__(self):
        if self.family not in _FIELD_FAMILIES:
            raise ConfigurationError(f"unknown coefficient family {self.family!r}")
        shape = tuple(int(s) for s in self.shape)
        object.__setattr__(self, "shape", shape)
        params = {k: _frozen(v) for k, v in self.params.items()}
        object.__setattr__(self, "params", params)
        mult = tuple(self.multiplier)
        object.__setattr__(self, "multiplier", mult)
        need = {"constant": ("value",), "affine": ("slope", "offset"),
                "multiplicative": ("rate",), "tabulated": ("grid", "values")}[self.family]
        for key in need:
            if key not in params:
                raise ConfigurationError(f"{self.family} field needs parameter {key!r}")
        d = shape[0]
        m = self.m
        expect = {
            "constant": {"value": (m, *shape)},
            "affine": {"slope": (m, *shape, d), "offset": (m, *shape)},
            "multiplicative": {"rate": (m, *shape)},
            "tabulated": {"values": (m, params["grid"].size, *shape)} if self.family == "tabulated" else {},
        }[self.family]
        for key, shp in expect.items():
            if params[key].shape != shp:
                raise ConfigurationError(
                    f"{self.family} parameter {key!r} has shape {params[key].shape}, expected {shp}")
        if mult and (self.family != "multiplicative" or len(mult) != m):
            raise ConfigurationError("multiplier needs the multiplicative family and one entry per regime")

    @property
    def m(self) -> int:
        key = {"constant": "value", "affine": "offset", "multiplicative": "rate",
               "tabulated": "values"}[self.family]
        return int(self.params[key].shape[0])

    @property
    def relaxed(self) -> bool:
        return self.family == "tabulated" or any(
            f is not None and f.relaxed for f in self.multiplier)

    @property
    def is_zero(self) -> bool:
        return self.family in ("constant", "multiplicative") and not np.any(
            self.params["value" if self.family == "constant" else "rate"])

    # constructors -------------------------------------------------------
    @classmethod
    def constant(cls, value) -> "CoefficientField":
        value = np.asarray(value, dtype=float)
        return cls("constant", value.shape[1:], {"value": value})

    @classmethod
    def zeros(cls, m: int, shape) -> "CoefficientField":
        return cls.constant(np.zeros((m, *shape)))

    @classmethod
    def multiplicative(cls, rate, multiplier=()) -> "CoefficientField":
        rate = np.asarray(rate, dtype=float)
        return cls("multiplicative", rate.shape[1:], {"rate": rate}, multiplier=tuple(multiplier))

    @classmethod
    def affine(cls, slope, offset) -> "CoefficientField":
        offset = np.asarray(offset, dtype=float)
        return cls("affine", offset.shape[1:], {"slope": slope, "offset": offset})

    @classmethod
    def tabulated(cls, grid, values, axis=0) -> "CoefficientField":
        values = np.asarray(values, dtype=float)
        return cls("tabulated", values.shape[2:], {"grid": grid, "values": values}, axis=axis)

    # evaluation ---------------------------------------------------------
    def __call__(self, t, x, k) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        n = x.shape[0]
        k = as_regimes(k, n)
        p = self.params
        if self.family == "constant":
            return p["value"][k].copy()
        if self.family == "affine":
            return np.einsum("n...j,nj->n...", p["slope"][k], x) + p["offset"][k]
        if self.family == "multiplicative":
            rate = p["rate"][k]
            if self.multiplier:
                factor = np.ones(n)
                for reg, fn in enumerate(self.multiplier):
                    if fn is None:
                        continue
                    sel = k == reg
                    if np.any(sel):
                        factor[sel] = fn(t, x[sel])
                rate = rate * factor.reshape((n,) + (1,) * len(self.shape))
            xs = x.reshape((n, self.shape[0]) + (1,) * (len(self.shape) - 1))
            return xs * rate
        grid = p["grid"]
        z = np.clip(x[:, self.axis], grid[0], grid[-1])
        hi = np.clip(np.searchsorted(grid, z, side="right"), 1, grid.size - 1)
        w = (z - grid[hi - 1]) / (grid[hi] - grid[hi - 1])
        w = w.reshape((n,) + (1,) * len(self.shape))
        vals = p["values"]
        return (1.0 - w) * vals[k, hi - 1] + w * vals[k, hi]

    def to_dict(self) -> dict:
        out = {"family": self.family,
               "params": {k: v.tolist() for k, v in self.params.items()}}
        if self.multiplier:
            out["multiplier"] = [None if f is None else f.to_dict() for f in self.multiplier]
        if self.family == "tabulated":
            out["axis"] = self.axis
        return out

    @classmethod
    def from_dict(cls, d: Mapping, shape_hint=None) -> "CoefficientField":
        fam = d["family"]
        params = {k: np.asarray(v, dtype=float) for k, v in d["params"].items()}
        mult = tuple(None if f is None else RateFunction.from_dict(f) for f in d.get("multiplier", ()))
        key = {"constant": "value", "affine": "offset", "multiplicative": "rate",
               "tabulated": "values"}[fam]
        shape = params[key].shape[2:] if fam == "tabulated" else params[key].shape[1:]
        return cls(fam, shape, params, multiplier=mult, axis=d.get("axis", 0))


# ---------------------------------------------------------------------------
# regime intensities


@dataclass(frozen=True, eq=False)
class IntensityMatrix:
    """Jump intensities ``lambda^{kj}(t, x)`` for ``k != j``.

    Unlisted channels have intensity zero; a regime with no outgoing
    channel is absorbing.  ``bound`` is the declared ceiling used by the
    thinning simulator.
    """

    m: int
    channels: tuple
    bound: float

    def __post_init__(self):
        seen = set()
        chans = []
        for src, dst, fn in self.channels:
            src, dst = int(src), int(dst)
            if src == dst:
                raise ConfigurationError("self-transitions are not allowed")
            if not (0 <= src < self.m and 0 <= dst < self.m):
                raise ConfigurationError(f"channel ({src},{dst}) outside 0..{self.m - 1}")
            if (src, dst) in seen:
                raise ConfigurationError(f"duplicate channel ({src},{dst})")
            if not isinstance(fn, RateFunction):
                fn = RateFunction.constant(float(fn))
            seen.add((src, dst))
            chans.append((src, dst, fn))
        chans.sort(key=lambda c: (c[0], c[1]))
        object.__setattr__(self, "channels", tuple(chans))
        object.__setattr__(self, "bound", float(self.bound))
        if not self.bound > 0 and chans:
            raise ConfigurationError("intensity bound must be positive")

    @classmethod
    def from_constant(cls, rates, bound=None) -> "IntensityMatrix":
        rates = np.asarray(rates, dtype=float)
        m = rates.shape[0]
        chans = [(k, j, RateFunction.constant(rates[k, j]))
                 for k in range(m) for j in range(m) if k != j and rates[k, j] != 0.0]
        if bound is None:
            bound = max([abs(c[2].sup()) for c in chans], default=1.0)
        return cls(m, tuple(chans), bound)

    @property
    def is_constant(self) -> bool:
        return all(fn.is_constant for _, _, fn in self.channels)

    @property
    def relaxed(self) -> bool:
        return any(fn.relaxed for _, _, fn in self.channels)

    def sup_matrix(self) -> np.ndarray:
        out = np.zeros((self.m, self.m))
        for src, dst, fn in self.channels:
            out[src, dst] = fn.sup()
        return out

    def constant_matrix(self) -> np.ndarray:
        if not self.is_constant:
            raise UsageError("intensities depend on the state")
        return self.sup_matrix() * np.sign(self._const_signs())

    def _const_signs(self):
        out = np.ones((self.m, self.m))
        for src, dst, fn in self.channels:
            out[src, dst] = 1.0 if fn.scale * fn.params["value"] >= 0 else -1.0
        return out

    def generator(self) -> np.ndarray:
        """Constant generator matrix Q with rows summing to zero."""
        q = self.constant_matrix()
        np.fill_diagonal(q, -q.sum(axis=1))
        return q

    def row(self, t, x, k) -> np.ndarray:
        """``(n, m)`` array of intensities out of each row's regime."""
        x = np.asarray(x, dtype=float)
        n = x.shape[0]
        k = as_regimes(k, n)
        out = np.zeros((n, self.m))
        for src, dst, fn in self.channels:
            sel = k == src
            if np.any(sel):
                out[sel, dst] = fn(t, x[sel])
        return out

    def rate(self, t, x, k, j) -> np.ndarray:
        """Intensity of channel ``(k[i], j[i])`` at ``x[i]``."""
        x = np.asarray(x, dtype=float)
        n = x.shape[0]
        k = as_regimes(k, n)
        j = as_regimes(j, n)
        out = np.zeros(n)
        for src, dst, fn in self.channels:
            sel = (k == src) & (j == dst)
            if np.any(sel):
                out[sel] = fn(t, x[sel])
        return out

    def matrix(self, t, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros((x.shape[0], self.m, self.m))
        for src, dst, fn in self.channels:
            out[:, src, dst] = fn(t, x)
        return out

    def to_dict(self) -> dict:
        return {"m": self.m, "bound": self.bound,
                "channels": [{"from": s, "to": d, "rate": fn.to_dict()} for s, d, fn in self.channels]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "IntensityMatrix":
        chans = tuple((c["from"], c["to"], RateFunction.from_dict(c["rate"])) for c in d["channels"])
        return cls(int(d["m"]), chans, d["bound"])


# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """The market: domain, coefficients, intensities and horizon."""

    domain: Domain
    m: int
    r: int
    drift: CoefficientField
    vol: CoefficientField
    intensities: IntensityMatrix
    T: float
    phi_max: float = 10.0
    labels: tuple = ()

    def __post_init__(self):
        d = self.domain.dim
        if self.m < 1 or self.r < 1:
            raise ConfigurationError("regime count and Brownian dimension must be >= 1")
        if not self.T > 0:
            raise ConfigurationError("horizon T must be positive")
        if self.drift.shape != (d,):
            raise ConfigurationError(f"drift shape {self.drift.shape} != ({d},)")
        if self.vol.shape != (d, self.r):
            raise ConfigurationError(f"volatility shape {self.vol.shape} != ({d}, {self.r})")
        for name, fld in (("drift", self.drift), ("vol", self.vol)):
            if fld.m != self.m:
                raise ConfigurationError(f"{name} has {fld.m} regimes, model has {self.m}")
            if fld.family == "multiplicative" and self.domain.kind != POSITIVE_ORTHANT:
                raise ConfigurationError(f"multiplicative {name} requires the positive-orthant domain")
        if self.intensities.m != self.m:
            raise ConfigurationError("intensity matrix size does not match regime count")
        if self.labels and len(self.labels) != self.m:
            raise ConfigurationError("one label per regime expected")
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def d(self) -> int:
        return self.domain.dim

    @property
    def assumption_relaxed(self) -> bool:
        """True when some coefficient is only piecewise smooth (tabulated)."""
        return self.drift.relaxed or self.vol.relaxed or self.intensities.relaxed

    def diffusion_matrix(self, t, x, k) -> np.ndarray:
        s = self.vol(t, x, k)
        return np.einsum("nir,njr->nij", s, s)

    def market_price_of_risk(self, t, x, k) -> np.ndarray:
        """``Sigma^T (Sigma Sigma^T)^{-1} Gamma`` as an ``(n, r)`` array."""
        s = self.vol(t, x, k)
        a = np.einsum("nir,njr->nij", s, s)
        g = self.drift(t, x, k)
        y = np.linalg.solve(a, g[..., None])[..., 0]
        return np.einsum("nir,ni->nr", s, y)

    def without_drift(self) -> "ModelSpec":
        """Same model with Gamma = 0 (dynamics under the minimal martingale measure)."""
        return replace(self, drift=CoefficientField.zeros(self.m, (self.d,)))

    def label(self, k: int) -> str:
        return self.labels[k] if self.labels else str(k)


# ---------------------------------------------------------------------------
# claims


_PAYOFF_FAMILIES = {
    "constant": ("value",),
    "capped_call": ("strike", "cap"),
    "capped_put": ("strike", "cap"),
    "digital": ("strike",),
    "tabulated": ("grid", "values"),
}


@dataclass(frozen=True, eq=False)
class Payoff:
    """Bounded terminal payoff of one regime, a function of ``x[axis]``.

    ``x_scale`` evaluates the payoff at ``x_scale * x``; it maps payoffs
    written in post-crash price units into pre-crash units.
    """

    family: str
    params: Mapping = field(default_factory=dict)
    x_scale: float = 1.0
    axis: int = 0

    def __post_init__(self):
        if self.family not in _PAYOFF_FAMILIES:
            raise ConfigurationError(f"unknown payoff family {self.family!r}")
        missing = [p for p in _PAYOFF_FAMILIES[self.family] if p not in self.params]
        if missing:
            raise ConfigurationError(f"payoff {self.family!r} missing {missing}")
        params = {k: tuple(float(v) for v in val) if np.ndim(val) else float(val)
                  for k, val in self.params.items()}
        object.__setattr__(self, "params", params)
        if self.family in ("capped_call", "capped_put") and params["cap"] < 0:
            raise ConfigurationError("cap must be non-negative")

    @classmethod
    def constant(cls, value: float) -> "Payoff":
        return cls("constant", {"value": value})

    @classmethod
    def capped_call(cls, strike, cap, x_scale=1.0) -> "Payoff":
        return cls("capped_call", {"strike": strike, "cap": cap}, x_scale=x_scale)

    @property
    def is_constant(self) -> bool:
        return self.family == "constant"

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        p = self.params
        if self.family == "constant":
            return np.full(x.shape[0], p["value"])
        z = self.x_scale * x[:, self.axis]
        if self.family == "capped_call":
            return np.minimum(np.maximum(z - p["strike"], 0.0), p["cap"])
        if self.family == "capped_put":
            return np.minimum(np.maximum(p["strike"] - z, 0.0), p["cap"])
        if self.family == "digital":
            return (z > p["strike"]).astype(float)
        return np.interp(z, p["grid"], p["values"])

    def sup_abs(self) -> float:
        p = self.params
        if self.family == "constant":
            return abs(p["value"])
        if self.family in ("capped_call", "capped_put"):
            return p["cap"]
        if self.family == "digital":
            return 1.0
        return float(np.max(np.abs(p["values"])))

    def to_dict(self) -> dict:
        out = {"family": self.family,
               "params": {k: list(v) if isinstance(v, tuple) else v for k, v in self.params.items()}}
        if self.x_scale != 1.0:
            out["x_scale"] = self.x_scale
        if self.axis:
            out["axis"] = self.axis
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "Payoff":
        return cls(d["family"], dict(d.get("params", {})), x_scale=d.get("x_scale", 1.0),
                   axis=d.get("axis", 0))


@dataclass(frozen=True, eq=False)
class ClaimSpec:
    """Payoff triple (terminal payoff, payment rate, lump sums at regime jumps).

    Payments are affine in the claim's own current value ``v^k``:

    * rate ``delta(t, x, k, v) = flow_const[k] + flow_linear[k] * v``
    * lump sum on ``k -> j``: ``f(t, x, v) = jump_const[k, j] + jump_linear[k, j] * v``
    * discount rate ``c(t, x, k) = discount[k]``

    ``family`` selects how payments enter the interaction: ``"linear"``
    (expected-value coupling) or ``"exponential"`` with risk aversion
    ``alpha``.  The growth constants ``K1, K2, K3`` and the Lipschitz bound
    may be declared; undeclared ones are derived by :func:`claim_constants`.
    """

    terminal: tuple
    flow_const: np.ndarray
    flow_linear: np.ndarray
    jump_const: np.ndarray
    jump_linear: np.ndarray
    discount: np.ndarray
    family: str = LINEAR
    alpha: float | None = None
    K1: float | None = None
    K2: float | None = None
    K3: float | None = None
    lipschitz: float | None = None
    name: str = ""

    def __post_init__(self):
        m = len(self.terminal)
        terms = tuple(p if isinstance(p, Payoff) else Payoff.constant(float(p)) for p in self.terminal)
        object.__setattr__(self, "terminal", terms)
        for attr, shape in (("flow_const", (m,)), ("flow_linear", (m,)), ("discount", (m,)),
                            ("jump_const", (m, m)), ("jump_linear", (m, m))):
            arr = _frozen(getattr(self, attr))
            if arr.shape != shape:
                raise ConfigurationError(f"claim {attr} has shape {arr.shape}, expected {shape}")
            object.__setattr__(self, attr, arr)
        if self.family not in (LINEAR, EXPONENTIAL):
            raise ConfigurationError(f"unknown interaction family {self.family!r}")
        if self.family == EXPONENTIAL and (self.alpha is None or not self.alpha > 0):
            raise ConfigurationError("exponential interaction needs risk aversion alpha > 0")

    @classmethod
    def simple(cls, terminal, *, flow=None, jump_const=None, jump_linear=None,
               flow_linear=None, discount=None, **kw) -> "ClaimSpec":
        m = len(terminal)
        z1 = np.zeros(m)
        z2 = np.zeros((m, m))
        return cls(tuple(terminal),
                   z1 if flow is None else flow,
                   z1 if flow_linear is None else flow_linear,
                   z2 if jump_const is None else jump_const,
                   z2 if jump_linear is None else jump_linear,
                   z1 if discount is None else discount, **kw)

    @property
    def m(self) -> int:
        return len(self.terminal)

    @property
    def value_dependent(self) -> bool:
        return bool(np.any(self.flow_linear) or np.any(self.jump_linear))

    def h(self, x, k) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        k = as_regimes(k, x.shape[0])
        out = np.empty(x.shape[0])
        for reg, pay in enumerate(self.terminal):
            sel = k == reg
            if np.any(sel):
                out[sel] = pay(x[sel])
        return out

    def h_all(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.stack([pay(x) for pay in self.terminal], axis=1)

    def flow(self, k, vk) -> np.ndarray:
        return self.flow_const[k] + self.flow_linear[k] * vk

    def jump(self, k, j, vk) -> np.ndarray:
        return self.jump_const[k, j] + self.jump_linear[k, j] * vk

    def c(self, k) -> np.ndarray:
        return self.discount[k]

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "terminal": [p.to_dict() for p in self.terminal],
            "flow_const": self.flow_const.tolist(),
            "flow_linear": self.flow_linear.tolist(),
            "jump_const": self.jump_const.tolist(),
            "jump_linear": self.jump_linear.tolist(),
            "discount": self.discount.tolist(),
            "family": self.family,
        }
        for key in ("alpha", "K1", "K2", "K3", "lipschitz"):
            if getattr(self, key) is not None:
                out[key] = float(getattr(self, key))
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "ClaimSpec":
        return cls(tuple(Payoff.from_dict(p) for p in d["terminal"]),
                   d["flow_const"], d["flow_linear"], d["jump_const"], d["jump_linear"],
                   d["discount"], family=d.get("family", LINEAR), alpha=d.get("alpha"),
                   K1=d.get("K1"), K2=d.get("K2"), K3=d.get("K3"),
                   lipschitz=d.get("lipschitz"), name=d.get("name", ""))


@dataclass(frozen=True)
class ClaimConstants:
    K1: float
    K2: float
    K3: float
    Kc: float
    lipschitz: float


def kappa_from_constants(K1, K2, K3, tau):
    """Truncation boundary at time-to-maturity ``tau``."""
    tau = np.asarray(tau, dtype=float)
    if K2 == 0.0:
        return K3 + K1 * tau
    # (e^{K2 tau} - 1) / K2 written to stay finite for tiny K2
    z = K2 * tau
    ratio = np.where(z == 0.0, tau, np.expm1(z) / np.where(z == 0.0, 1.0, K2))
    return K3 * np.exp(z) + K1 * ratio


def claim_constants(claim: ClaimSpec, model: ModelSpec) -> ClaimConstants:
    """Declared constants, with undeclared ones derived from the claim's families.

    ``K1, K2`` bound the interaction on the one-sided sets where ``v^k`` is
    the largest (smallest) coordinate, ``K3`` bounds the terminal payoff,
    ``Kc`` bounds the discount rate from above and ``lipschitz`` is a
    max-norm Lipschitz constant of the interaction in ``v`` (on the
    truncation box for the exponential family).
    """
    lam = model.intensities.sup_matrix()
    a0 = np.abs(claim.flow_const)
    a1 = np.abs(claim.flow_linear)
    f0 = np.abs(claim.jump_const) * (lam > 0)
    f1 = np.abs(claim.jump_linear) * (lam > 0)
    K3 = claim.K3 if claim.K3 is not None else max(p.sup_abs() for p in claim.terminal)
    Kc = max(0.0, float(np.max(claim.discount)))
    if claim.family == LINEAR:
        K1d = float(np.max(a0 + (lam * f0).sum(axis=1)))
        K2d = float(np.max(a1 + (lam * f1).sum(axis=1)))
    else:
        if np.any(f1):
            raise ConfigurationError(
                "exponential interaction with value-dependent lump sums violates linear growth")
        al = claim.alpha
        up = a0 + (lam * np.expm1(al * f0)).sum(axis=1) / al
        down = a0 + lam.sum(axis=1) / al
        K1d = float(np.max(np.maximum(up, down)))
        K2d = float(np.max(a1))
    K1 = claim.K1 if claim.K1 is not None else K1d
    K2 = claim.K2 if claim.K2 is not None else K2d
    if claim.lipschitz is not None:
        L = claim.lipschitz
    else:
        spread = np.abs(1.0 - claim.jump_linear) + 1.0
        if claim.family == LINEAR:
            L = float(np.max(a1 + (lam * spread).sum(axis=1)))
        else:
            kap = float(kappa_from_constants(K1, K2, K3, model.T))
            umax = 2.0 * kap + f0 + f1 * kap
            L = float(np.max(a1 + (lam * np.exp(claim.alpha * umax) * spread).sum(axis=1)))
    return ClaimConstants(float(K1), float(K2), float(K3), Kc, float(L))


def interaction(claim: ClaimSpec, model: ModelSpec, t, x, k, V, kappa=None) -> np.ndarray:
    """Interaction ``g^k(t, x, V)`` for a batch.

    ``V`` holds the value vector over all regimes, shape ``(n, m)``.  When
    ``kappa`` is given, every coordinate of ``V`` is first clamped to
    ``[-kappa, kappa]`` (the truncated interaction).
    """
    x = np.asarray(x, dtype=float)
    V = np.asarray(V, dtype=float)
    n = x.shape[0]
    k = as_regimes(k, n)
    if kappa is not None:
        V = np.clip(V, -kappa, kappa)
    vk = V[np.arange(n), k]
    out = claim.flow(k, vk)
    jc, jl = claim.jump_const, claim.jump_linear
    for src, dst, fn in model.intensities.channels:
        lam = fn(t, x) * (k == src)
        spread = V[:, dst] - vk + jc[src, dst] + jl[src, dst] * vk
        if claim.family == LINEAR:
            out = out + lam * spread
        else:
            with np.errstate(over="ignore", invalid="ignore"):
                term = lam * np.expm1(claim.alpha * spread) / claim.alpha
            out = out + np.where(lam != 0.0, term, 0.0)
    return out


def eval_interaction_g(claim: ClaimSpec, model: ModelSpec, t, x, k, v) -> float:
    """Scalar interaction ``g^k(t, x, v)`` at one point."""
    if claim.family == EXPONENTIAL and (claim.alpha is None or claim.alpha <= 0):
        raise ConfigurationError("exponential interaction needs alpha > 0")
    x = as_states(x, model.d)[:1]
    v = np.asarray(v, dtype=float).reshape(1, -1)
    if v.shape[1] != model.m:
        raise UsageError(f"value vector must have {model.m} entries")
    if not np.all(np.isfinite(v)):
        raise UsageError("value vector must be finite")
    if not (0.0 <= t <= model.T):
        raise UsageError("t outside [0, T]")
    if not model.domain.contains(x)[0]:
        raise UsageError("x outside the domain")
    return float(interaction(claim, model, t, x, np.array([int(k)]), v)[0])


# ---------------------------------------------------------------------------
# assumption checks


@dataclass(frozen=True)
class ProbeGrid:
    """Probe nodes: the product of ``times``, ``points`` and all regimes."""

    times: np.ndarray
    points: np.ndarray

    @classmethod
    def regular(cls, model: ModelSpec, lo, hi, n_t=5, n_x=9) -> "ProbeGrid":
        times = np.linspace(0.0, model.T, n_t)
        axes = [np.linspace(a, b, n_x) for a, b in zip(np.broadcast_to(lo, model.d),
                                                      np.broadcast_to(hi, model.d))]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([g.ravel() for g in mesh], axis=1)
        return cls(times, pts)

    @property
    def size(self) -> int:
        return len(self.times) * len(self.points)


@dataclass
class AssumptionCheck:
    name: str
    passed: bool
    worst: float
    threshold: float
    witness: tuple | None = None
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list
    probe_nodes: int
    assumption_relaxed: bool
    constants: ClaimConstants | None = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> AssumptionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]


def _finite_or_raise(arr, name):
    if not np.all(np.isfinite(arr)):
        raise ModelDefinitionError(f"coefficient {name!r} produced a non-finite value", field=name)


def validate_model(spec: ModelSpec, claim: ClaimSpec | None, probe_grid: ProbeGrid,
                   cond_max: float = SINGULARITY_COND) -> ValidationReport:
    """Check the standing assumptions on every probe node.

    Each check records the worst value and the node ``(t, x, k)`` where it
    occurs.  Non-finite coefficient values raise ``ModelDefinitionError``
    naming the offending field.
    """
    times = np.asarray(probe_grid.times, dtype=float)
    pts = np.asarray(probe_grid.points, dtype=float)
    if times.size == 0 or pts.size == 0:
        raise UsageError("probe grid is empty")
    pts = as_states(pts, spec.d)
    if np.any(times < 0) or np.any(times > spec.T):
        raise UsageError("probe times must lie in [0, T]")
    checks = []
    inside = spec.domain.contains(pts)
    checks.append(AssumptionCheck("domain", bool(inside.all()), float((~inside).sum()), 0.0,
                                  None if inside.all() else (None, tuple(pts[~inside][0]), None),
                                  "probe points inside the domain"))
    if not inside.all():
        raise UsageError("probe grid has points outside the domain")

    worst = {"cond": (0.0, None), "phi": (0.0, None), "lam": (0.0, None), "lam_neg": (0.0, None)}
    n = pts.shape[0]
    for t in times:
        for k in range(spec.m):
            kk = np.full(n, k)
            g = spec.drift(t, pts, kk)
            _finite_or_raise(g, "drift")
            s = spec.vol(t, pts, kk)
            _finite_or_raise(s, "vol")
            a = np.einsum("nir,njr->nij", s, s)
            with np.errstate(divide="ignore", invalid="ignore"):
                cond = np.linalg.cond(a)
            cond = np.where(np.isfinite(cond), cond, np.inf)
            i = int(np.argmax(cond))
            if cond[i] > worst["cond"][0] or worst["cond"][1] is None:
                worst["cond"] = (float(cond[i]), (float(t), tuple(pts[i]), k))
            ok = cond <= cond_max
            phi = np.full(n, np.inf)
            if np.any(ok):
                phi[ok] = np.linalg.norm(spec.market_price_of_risk(t, pts[ok], kk[ok]), axis=1)
            i = int(np.argmax(phi))
            if phi[i] > worst["phi"][0] or worst["phi"][1] is None:
                worst["phi"] = (float(phi[i]), (float(t), tuple(pts[i]), k))
            lam = spec.intensities.row(t, pts, kk)
            _finite_or_raise(lam, "intensities")
            if lam.size:
                i, j = np.unravel_index(int(np.argmax(lam)), lam.shape)
                if lam[i, j] > worst["lam"][0] or worst["lam"][1] is None:
                    worst["lam"] = (float(lam[i, j]), (float(t), tuple(pts[i]), k))
                i, j = np.unravel_index(int(np.argmin(lam)), lam.shape)
                if lam[i, j] < worst["lam_neg"][0]:
                    worst["lam_neg"] = (float(lam[i, j]), (float(t), tuple(pts[i]), k))

    c, w = worst["cond"]
    checks.append(AssumptionCheck("ellipticity", c <= cond_max, c, cond_max, w,
                                  "condition number of Sigma Sigma^T"))
    p, w = worst["phi"]
    checks.append(AssumptionCheck("market_price_of_risk", p <= spec.phi_max, p, spec.phi_max, w,
                                  "norm of Sigma^T (Sigma Sigma^T)^-1 Gamma"))
    lmax, w = worst["lam"]
    checks.append(AssumptionCheck("intensity_bound", lmax <= spec.intensities.bound,
                                  lmax, spec.intensities.bound, w, "lambda <= declared bound"))
    lneg, w = worst["lam_neg"]
    checks.append(AssumptionCheck("intensity_nonnegative", lneg >= 0.0, lneg, 0.0, w,
                                  "lambda >= 0"))

    consts = None
    if claim is not None:
        if claim.m != spec.m:
            raise ConfigurationError("claim and model disagree on the number of regimes")
        consts = claim_constants(claim, spec)
        hv = claim.h_all(pts)
        _finite_or_raise(hv, "terminal")
        i, k = np.unravel_index(int(np.argmax(np.abs(hv))), hv.shape)
        hmax = float(abs(hv[i, k]))
        checks.append(AssumptionCheck("terminal_bound", hmax <= consts.K3 + 1e-12, hmax, consts.K3,
                                      (spec.T, tuple(pts[i]), int(k)), "|h| <= K3"))
        # payments grow at most linearly in v: |a + b v| <= K (1 + |v|) with K = max(|a|, |b|)
        vs = np.linspace(-10.0, 10.0, 41)
        lam_sup = spec.intensities.sup_matrix()
        grow_k = float(max(np.max(np.abs(claim.flow_const)), np.max(np.abs(claim.flow_linear)),
                           np.max(np.abs(claim.jump_const) * (lam_sup > 0)),
                           np.max(np.abs(claim.jump_linear) * (lam_sup > 0))))
        ratio = 0.0
        for k in range(spec.m):
            d = np.abs(claim.flow(k, vs)) / (1.0 + np.abs(vs))
            ratio = max(ratio, float(d.max()))
            for j in range(spec.m):
                if j != k and lam_sup[k, j] > 0:
                    f = np.abs(claim.jump(k, j, vs)) / (1.0 + np.abs(vs))
                    ratio = max(ratio, float(f.max()))
        checks.append(AssumptionCheck("payment_growth", ratio <= grow_k + 1e-12, ratio, grow_k, None,
                                      "|delta|, |f| <= K (1 + |v|)"))
        cmax = float(np.max(claim.discount))
        checks.append(AssumptionCheck("discount_upper_bound", cmax <= consts.Kc, cmax, consts.Kc,
                                      None, "c <= Kc"))
    return ValidationReport(checks, probe_grid.size * spec.m, spec.assumption_relaxed, consts)
