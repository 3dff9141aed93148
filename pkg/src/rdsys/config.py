"""Config files: one YAML tree holding a model and a claim.

Canonical layout (keys are written sorted)::

    schema_version: 1
    model:
      domain: {kind: positive-orthant, dim: 1}
      regimes: 2
      brownian_dim: 1
      horizon: 1.0
      phi_max: 10.0
      labels: [n, d]
      drift: {family: ..., params: {...}}
      vol: {family: ..., params: {...}}
      intensities: {m: 2, bound: 1.0, channels: [{from: 0, to: 1, rate: {...}}]}
    claim:
      terminal: [{family: constant, params: {value: 1.0}}, ...]
      flow_const, flow_linear, discount: per-regime lists
      jump_const, jump_linear: m x m nested lists
      family: linear | exponential
      alpha, K1, K2, K3, lipschitz: optional numbers

Coefficient parameter arrays are nested lists with the regime as the leading
axis.  ``canonical_dump`` is deterministic, so hashing its bytes identifies a
configuration.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import yaml

from .errors import ConfigurationError
from .model import ClaimSpec, CoefficientField, Domain, IntensityMatrix, ModelSpec

SCHEMA_VERSION = 1


def model_to_dict(model: ModelSpec) -> dict:
    out = {
        "domain": {"kind": model.domain.kind, "dim": model.domain.dim},
        "regimes": model.m,
        "brownian_dim": model.r,
        "horizon": float(model.T),
        "phi_max": float(model.phi_max),
        "drift": model.drift.to_dict(),
        "vol": model.vol.to_dict(),
        "intensities": model.intensities.to_dict(),
    }
    if model.labels:
        out["labels"] = list(model.labels)
    return out


def model_from_dict(d: dict) -> ModelSpec:
    try:
        dom = Domain(d["domain"]["kind"], int(d["domain"]["dim"]))
        return ModelSpec(dom, int(d["regimes"]), int(d["brownian_dim"]),
                         CoefficientField.from_dict(d["drift"]),
                         CoefficientField.from_dict(d["vol"]),
                         IntensityMatrix.from_dict(d["intensities"]),
                         float(d["horizon"]), float(d.get("phi_max", 10.0)),
                         tuple(d.get("labels", ())))
    except KeyError as exc:
        raise ConfigurationError(f"model config missing key {exc}") from None


def to_dict(model: ModelSpec, claim: ClaimSpec) -> dict:
    return {"schema_version": SCHEMA_VERSION, "model": model_to_dict(model),
            "claim": claim.to_dict()}


def from_dict(d: dict) -> tuple[ModelSpec, ClaimSpec]:
    if not isinstance(d, dict):
        raise ConfigurationError("config root must be a mapping")
    if "schema_version" not in d:
        raise ConfigurationError("config lacks the mandatory schema_version field")
    if d["schema_version"] != SCHEMA_VERSION:
        raise ConfigurationError(f"unsupported schema_version {d['schema_version']!r}")
    model = model_from_dict(d["model"])
    try:
        claim = ClaimSpec.from_dict(d["claim"])
    except KeyError as exc:
        raise ConfigurationError(f"claim config missing key {exc}") from None
    if claim.m != model.m:
        raise ConfigurationError("claim and model disagree on the number of regimes")
    return model, claim


def canonical_dump(model: ModelSpec, claim: ClaimSpec) -> str:
    return yaml.safe_dump(to_dict(model, claim), sort_keys=True, default_flow_style=None)


def config_hash(model: ModelSpec, claim: ClaimSpec) -> str:
    return hashlib.sha256(canonical_dump(model, claim).encode()).hexdigest()


def save(path, model: ModelSpec, claim: ClaimSpec) -> None:
    Path(path).write_text(canonical_dump(model, claim))


def load(path) -> tuple[ModelSpec, ClaimSpec]:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    return from_dict(data)
