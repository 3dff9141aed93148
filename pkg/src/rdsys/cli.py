"""Batch runner: ``rdsys run --scenario NAME --stages a,b,c --out DIR``.

Stages (run in the given order)

    validate           probe the model and claim assumptions
    solve-pde          grid solution; writes surface.csv and surface.json
    solve-fk           Feynman-Kac fixed point; writes fk_surface.csv and trace.csv
    simulate           market paths; writes paths.csv and paths.json
    hedge              hedge decomposition (needs solve-pde); writes hedge_*.csv, hedge.json
    check-oracle       grid (and fixed-point) fields against the scenario's reference values
    check-cross        grid field, fixed point and direct simulation at sampled nodes
    check-truncation   solved fields inside the truncation bound
    check-contraction  fixed-point step ratios below one half
    check-martingale   compensated regime counters have mean zero (needs simulate)
    check-hedge        hedge residual and orthogonality statistics (needs hedge)

Every run writes summary.json: input hash, seed, version, artifacts and
each check's statistic, threshold and verdict.  Outputs depend only on the
inputs, the seed and the package version.

Exit codes

    0  all requested checks passed
    1  at least one check failed
    2  command-line usage error
    3  unknown stage
    4  stage dependency missing
    5  output directory not writable
    6  configuration error
    7  numerical, estimation or convergence failure

The output directory defaults to ``$RDSYS_OUT`` or ``./rdsys-out``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import re
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .config import canonical_dump, config_hash
from .credit import (Scenario, cross_method_agreement, get_scenario, kappa_excess,
                     scenario_from_config, scenario_names, solve_fixed_point)
from .errors import (ConfigurationError, ConvergenceError, DegeneracyError, EstimationError,
                     ModelDefinitionError, NumericalError, SimulationError, UsageError)
from .grid import GridSpec
from .hedging import MILSTEIN, build_hedge, orthogonality_check
from .model import ProbeGrid, validate_model
from .pde import HEDGING, PdeProblem, solve_system
from .simulate import compensated_counters, simulate_market

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_UNKNOWN_STAGE = 3
EXIT_DEPENDENCY = 4
EXIT_UNWRITABLE = 5
EXIT_CONFIG = 6
EXIT_NUMERICAL = 7

STAGES = ("validate", "solve-pde", "solve-fk", "simulate", "hedge", "check-oracle",
          "check-cross", "check-truncation", "check-contraction", "check-martingale",
          "check-hedge")

REQUIRES = {
    "hedge": ("solve-pde",),
    "check-oracle": ("solve-pde",),
    "check-cross": ("solve-pde", "solve-fk"),
    "check-truncation": ("solve-pde",),
    "check-contraction": ("solve-fk",),
    "check-martingale": ("simulate",),
    "check-hedge": ("hedge",),
}

# the identity each check instantiates, for traceability in summaries
IDENTITIES = {
    "validate": "ellipticity, bounded market price of risk, bounded intensities and payments",
    "oracle-pde": "grid solution of v_t + L^k v + c v + g^k(v) = 0, v(T) = h against reference",
    "oracle-fk": "fixed point v = F v against reference",
    "cross": "grid solution = fixed point of F = E[h + int delta + sum f] along paths",
    "truncation": "|v(t,x,k)| <= kappa(t)",
    "contraction": "||F v - F w||_beta <= (L e^{Kc T} / beta) ||v - w||_beta",
    "martingale": "N^{kj} - int lambda^{kj}(t,S_t) 1{eta_t = k} dt is a martingale",
    "hedge-residual": "H = H0 + int theta dS + L_T",
    "hedge-orthogonality": "<L, int theta dS> = 0 and E[L_T] = 0",
}


class StageError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def parse_grid(text: str) -> tuple[int, int]:
    m = re.fullmatch(r"\s*(\d+)\s*[xX]\s*(\d+)\s*", text or "")
    if not m or int(m.group(1)) < 3 or int(m.group(2)) < 1:
        raise argparse.ArgumentTypeError("grid must look like NXxNT, e.g. 200x200")
    return int(m.group(1)), int(m.group(2))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rdsys", description="Coupled-system solver and checks")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run stages on a scenario or config")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", help="named scenario: " + ", ".join(scenario_names()))
    src.add_argument("--config", help="YAML config file")
    run.add_argument("--stages", default="validate,solve-pde,check-truncation",
                     help="comma-separated stage list")
    run.add_argument("--out", default=None, help="output directory")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--paths", type=int, default=None, help="Monte Carlo paths (per node for solve-fk)")
    run.add_argument("--steps", type=int, default=None, help="time steps of simulated paths")
    run.add_argument("--grid", type=parse_grid, default=None, help="PDE grid NXxNT")
    run.add_argument("--beta", type=float, default=None, help="weight of the fixed-point norm")
    run.add_argument("--tol", type=float, default=None, help="fixed-point tolerance")
    sub.add_parser("list", help="list scenarios")
    return p


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, (np.bool_, bool)):
        return bool(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating, float)):
        return float(o)
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    return o


class Runner:
    """Executes a stage list against one scenario, writing into ``out``."""

    def __init__(self, scenario: Scenario, out: Path, seed=0, paths=None, steps=None, grid=None,
                 beta=None, tol=None, config_bytes: str = ""):
        self.sc = scenario
        self.out = out
        self.seed = seed
        self.paths = paths
        self.steps = steps
        self.grid = grid
        self.beta = beta
        self.tol = tol
        self.config_bytes = config_bytes
        self.done = []
        self.checks = []
        self.artifacts = []
        self.pde = None
        self.fk = None
        self.trace = None
        self.bundle = None
        self.hedge = None

    # helpers ---------------------------------------------------------------
    def _path(self, name):
        self.artifacts.append(name)
        return self.out / name

    def _check(self, name, statistic, threshold, passed, **extra):
        self.checks.append({"name": name, "identity": IDENTITIES.get(name.split(":")[0], ""),
                            "statistic": float(statistic), "threshold": float(threshold),
                            "passed": bool(passed), **extra})

    def _pde_grid(self):
        if self.grid is None:
            return self.sc.grid, self.sc.t_steps
        nx, nt = self.grid
        g = tuple(GridSpec(a.lo, a.hi, nx, a.spacing) for a in self.sc.grid)
        return g, nt

    # stages ----------------------------------------------------------------
    def stage_validate(self):
        sc = self.sc
        lo = [g.lo for g in sc.grid]
        hi = [g.hi for g in sc.grid]
        rep = validate_model(sc.model, sc.claim, ProbeGrid.regular(sc.model, lo, hi))
        for chk in rep.checks:
            self._check(f"validate:{chk.name}", chk.worst, chk.threshold, chk.passed)

    def stage_solve_pde(self):
        grid, nt = self._pde_grid()
        self.pde = solve_system(PdeProblem(self.sc.model, self.sc.claim, grid, nt,
                                           self.sc.pde_variant))
        self.pde.to_csv(self._path("surface.csv"))
        self.pde.write_manifest(self._path("surface.json"))

    def stage_solve_fk(self):
        kw = {"paths": self.paths or 1000, "seed": self.seed, "beta": self.beta,
              "tol": self.tol if self.tol is not None else 1e-4}
        self.fk, self.trace = solve_fixed_point(self.sc, **kw)
        self.fk.to_csv(self._path("fk_surface.csv"))
        self.trace.to_csv(self._path("trace.csv"))

    def stage_simulate(self):
        self.bundle = simulate_market(self.sc.model, self.sc.s0, self.sc.k0, self.steps or 50,
                                      self.seed, paths=self.paths or 1000)
        self.bundle.to_csv(self._path("paths.csv"))
        self.bundle.write_manifest(self._path("paths.json"))

    def stage_hedge(self):
        sc = self.sc
        field_ = self.pde
        model = sc.model
        if not model.drift.is_zero:
            # the decomposition lives under the drift-free market
            grid, nt = self._pde_grid()
            model = model.without_drift()
            field_ = solve_system(PdeProblem(model, sc.claim, grid, nt, HEDGING))
        bundle = self.bundle
        if bundle is None or not sc.model.drift.is_zero:
            bundle = simulate_market(model, sc.s0, sc.k0, self.steps or 50, self.seed,
                                     paths=self.paths or 1000)
        self.hedge = build_hedge(field_, sc.claim, model, bundle, MILSTEIN)
        self.hedge.to_csv(self._path("hedge_paths.csv"))
        self.hedge.steps_to_csv(self._path("hedge_steps.csv"))
        self.hedge.write_manifest(self._path("hedge.json"))

    def stage_check_oracle(self):
        sc = self.sc
        if sc.oracle is None:
            raise StageError(f"scenario {sc.name!r} has no reference values", EXIT_CONFIG)
        err = _oracle_error(self.pde, sc)
        self._check("oracle-pde", err, sc.tolerance.pde_abs, err <= sc.tolerance.pde_abs)
        if self.fk is not None:
            gap = np.abs(self.fk.values - _oracle_values(self.fk, sc))
            thr = sc.tolerance.fk_abs + 3.0 * self.fk.se
            self._check("oracle-fk", float((gap - thr).max()), 0.0, bool(np.all(gap <= thr)))

    def stage_check_cross(self):
        rep = cross_method_agreement(self.sc, pde_field=self.pde, fk_field=self.fk,
                                     seed=self.seed)
        bad = sum(not r.passed for r in rep.rows)
        self._check("cross", bad, 0, rep.passed, nodes=len(rep.rows))

    def stage_check_truncation(self):
        for label, f in (("pde", self.pde), ("fk", self.fk)):
            if f is not None:
                ex = kappa_excess(f, self.sc)
                self._check(f"truncation:{label}", ex, 0.0, ex <= 0.0)

    def stage_check_contraction(self):
        ratios = self.trace.ratios()
        rows = self.trace.rows[1:]
        worst = max((r.ratio - 3.0 * r.se / max(p.beta_dist, 1e-300)
                     for r, p in zip(rows, self.trace.rows[:-1])), default=0.0)
        self._check("contraction", worst, 0.5, worst <= 0.5, ratios=list(ratios),
                    iterations=self.trace.iterations)

    def stage_check_martingale(self):
        comp = compensated_counters(self.sc.model, self.bundle)
        for (k, j), vals in comp.items():
            mean, se = self.bundle.estimate(vals)
            thr = 3.0 * se + 1e-12
            self._check(f"martingale:{k}->{j}", abs(mean), thr, abs(mean) <= thr)

    def stage_check_hedge(self):
        st = self.hedge.residual_stats()
        thr = 3.0 * st["se"] + 1e-12
        self._check("hedge-residual", abs(st["mean"]), thr, abs(st["mean"]) <= thr, rms=st["rms"])
        for key, c in orthogonality_check(self.hedge).items():
            self._check(f"hedge-orthogonality:{key}", abs(c.statistic), c.threshold, c.passed)

    # driver ------------------------------------------------------------------
    def run(self, stages):
        for st in stages:
            missing = [d for d in REQUIRES.get(st, ()) if d not in self.done]
            if missing:
                raise StageError(f"stage {st!r} needs {', '.join(missing)} earlier in the list",
                                 EXIT_DEPENDENCY)
            getattr(self, "stage_" + st.replace("-", "_"))()
            self.done.append(st)

    def summary(self, stages) -> dict:
        return _jsonable({
            "version": __version__,
            "scenario": self.sc.name,
            "config_hash": config_hash(self.sc.model, self.sc.claim),
            "input_hash": hashlib.sha256(self.config_bytes.encode()).hexdigest(),
            "seed": self.seed,
            "overrides": {"paths": self.paths, "steps": self.steps,
                          "grid": list(self.grid) if self.grid else None,
                          "beta": self.beta, "tol": self.tol},
            "stages": list(stages),
            "artifacts": sorted(set(self.artifacts)),
            "checks": self.checks,
            "passed": all(c["passed"] for c in self.checks),
            "reference": {"kind": self.sc.oracle_kind, "formula": self.sc.formula},
            "assumption_relaxed": self.sc.model.assumption_relaxed,
            "fixed_point": None if self.trace is None else {
                "beta": self.trace.beta, "theoretical_rate": self.trace.theoretical_rate,
                "iterations": self.trace.iterations, "converged": self.trace.converged},
        })


def _oracle_values(field_, sc: Scenario) -> np.ndarray:
    nodes = field_.nodes()
    out = np.empty_like(field_.values)
    for i, t in enumerate(field_.t_grid):
        out[i] = sc.reference(t, nodes).reshape(out.shape[1:])
    return out


def _oracle_error(field_, sc: Scenario) -> float:
    return float(np.max(np.abs(field_.values - _oracle_values(field_, sc))))


def _load_scenario(args) -> tuple[Scenario, str]:
    if args.scenario:
        sc = get_scenario(args.scenario)
        return sc, canonical_dump(sc.model, sc.claim)
    try:
        text = Path(args.config).read_text()
        data = yaml.safe_load(text)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigurationError(f"cannot read config {args.config}: {exc}") from None
    return scenario_from_config(data), text


def run(args) -> int:
    stages = [s.strip() for s in args.stages.split(",") if s.strip()]
    unknown = [s for s in stages if s not in STAGES]
    if unknown:
        print(f"rdsys: unknown stage(s) {', '.join(unknown)}; known: {', '.join(STAGES)}",
              file=sys.stderr)
        return EXIT_UNKNOWN_STAGE
    try:
        sc, text = _load_scenario(args)
    except (ConfigurationError, ModelDefinitionError, UsageError) as exc:
        print(f"rdsys: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out or os.environ.get("RDSYS_OUT") or "rdsys-out")
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        print(f"rdsys: output directory {out} is not writable: {exc}", file=sys.stderr)
        return EXIT_UNWRITABLE
    runner = Runner(sc, out, args.seed, args.paths, args.steps, args.grid, args.beta, args.tol, text)
    code = EXIT_OK
    try:
        runner.run(stages)
    except StageError as exc:
        print(f"rdsys: {exc}", file=sys.stderr)
        code = exc.code
    except (ConfigurationError, ModelDefinitionError, UsageError) as exc:
        print(f"rdsys: configuration error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    except (NumericalError, ConvergenceError, EstimationError, SimulationError,
            DegeneracyError) as exc:
        print(f"rdsys: {type(exc).__name__}: {exc}", file=sys.stderr)
        code = EXIT_NUMERICAL
    summary = runner.summary(stages)
    summary["exit_code"] = code if code else (EXIT_OK if summary["passed"] else EXIT_CHECK_FAILED)
    try:
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        print(f"rdsys: cannot write summary: {exc}", file=sys.stderr)
        return EXIT_UNWRITABLE
    for c in summary["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}: {c['statistic']:.4g} "
              f"(threshold {c['threshold']:.4g})")
    return summary["exit_code"]


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "list":
        for name in scenario_names():
            print(name)
        return EXIT_OK
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
