"""Experiment runner: config parsing, suites, and report files.

A run reads one JSON config, executes the requested suites in dependency
order and writes ``summary.json`` plus plot-ready CSV/JSON data below the
output directory::

    summary.json          per-suite pass flag and measured quantities
    paths/base.csv        base trajectory
    paths/eps_<eps>.csv   T^eps outputs
    probes/<name>.json    estimate probes and B^{-1} norms
    scaling.csv           raw norms of the correction per eps

Randomness comes from one ``SeedSequence(seed)``; every suite and every eps
gets its own spawned child, so outputs do not depend on thread scheduling.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
import json
import logging
import os
from pathlib import Path
import time

import jsonschema
import numpy as np

from . import criticals, fields, flows, hypersurface, linops, newton, problems
from .errors import AdiaflowError, ConfigError, SuiteFailure

__all__ = ["ExperimentConfig", "run_experiment", "load_config", "SUITES", "SCHEMA_VERSION",
           "CONFIG_SCHEMA", "setup_from_config"]

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
SUITES = ("geometry", "criticals", "flows", "operators", "newton", "scaling", "uniqueness")

# acceptance thresholds used by the suites
E0_TOL = 1e-3
EPS_ENERGY_TOL = 1e-2
CORRELATION_MIN = 0.999
CONTRACTION_MAX = 0.6
NEWTON_MAX_ITER = 10
SLOPE_MIN = 1.8
GROWTH_FACTOR = 1.5
B_INV_TOL = 1e-12
UNIQUENESS_TOL = 1e-8

_FIELD_SCHEMA = {
    "type": "object",
    "required": ["dim", "monomials"],
    "properties": {
        "dim": {"type": "integer", "minimum": 1},
        "monomials": {"type": "array", "minItems": 1, "items": {
            "type": "object", "required": ["exps", "coef"],
            "properties": {"exps": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                           "coef": {"type": "number"}}}},
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["problem"],
    "additionalProperties": False,
    "properties": {
        "problem": {"oneOf": [
            {"type": "string"},
            {"type": "object", "required": ["F", "H"], "additionalProperties": False,
             "properties": {"F": _FIELD_SCHEMA, "H": _FIELD_SCHEMA, "name": {"type": "string"},
                            "kappa": {"type": "number", "exclusiveMinimum": 0}}},
        ]},
        "grid": {"type": "object", "additionalProperties": False,
                 "properties": {"T": {"type": "number", "exclusiveMinimum": 0},
                                "N": {"type": "integer"}}},
        "eps_list": {"type": "array", "minItems": 1, "items": {"type": "number"}},
        "alpha": {"type": "number"},
        "beta": {"type": "number"},
        "experimental": {"type": "boolean"},
        "suites": {"type": "array", "items": {"enum": list(SUITES)}, "uniqueItems": True},
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
    },
}


@dataclass
class ExperimentConfig:
    """Validated experiment parameters.

    ``eps_list`` is stored in descending order. ``problem`` is either a
    built-in name or ``{"F": field, "H": field}`` in the polynomial field
    JSON format.
    """

    problem: object
    T: float = 12.0
    N: int = 1200
    eps_list: list = field(default_factory=lambda: [0.2, 0.1, 0.05, 0.025, 0.0125])
    alpha: float = 2.0
    beta: float = 2.0
    experimental: bool = False
    suites: list = field(default_factory=lambda: list(SUITES))
    seed: int = 0
    output_dir: str = "adiaflow_out"

    def __post_init__(self):
        if isinstance(self.problem, str) and self.problem not in problems.BUILTIN_NAMES:
            problems.get_problem(self.problem)  # raises ConfigError for unknown names
        if self.N < 16:
            raise ConfigError(f"grid.N = {self.N}; at least 16 intervals are required")
        if not self.eps_list or any(not 0 < e <= 1 for e in self.eps_list):
            raise ConfigError("eps_list must be nonempty with all values in (0, 1]")
        self.eps_list = sorted((float(e) for e in self.eps_list), reverse=True)
        if self.beta != 2 and not self.experimental:
            raise ConfigError("beta != 2 needs \"experimental\": true")
        unknown = set(self.suites) - set(SUITES)
        if unknown:
            raise ConfigError(f"unknown suites {sorted(unknown)}")
        self.suites = [s for s in SUITES if s in self.suites]

    @classmethod
    def from_dict(cls, data):
        try:
            jsonschema.validate(data, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"invalid config: {exc.message}") from None
        kw = {k: v for k, v in data.items() if k != "grid"}
        kw.update(data.get("grid", {}))
        return cls(**kw)

    def to_dict(self):
        d = asdict(self)
        d["grid"] = {"T": d.pop("T"), "N": d.pop("N")}
        return d


def load_config(path):
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return ExperimentConfig.from_dict(data)


def setup_from_config(config):
    p = config.problem
    if isinstance(p, str):
        return problems.get_problem(p)
    F = fields.ScalarField.from_dict(p["F"])
    H = fields.ScalarField.from_dict(p["H"])
    try:
        return fields.ProblemSetup(F, H, name=p.get("name", "custom"), kappa=p.get("kappa", 0.5))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _threads():
    v = os.environ.get("ADIAFLOW_THREADS")
    if v is None:
        return min(8, os.cpu_count() or 1)
    try:
        n = int(v)
    except ValueError:
        raise ConfigError(f"ADIAFLOW_THREADS={v!r} is not an integer") from None
    return max(1, n)


def _pmap(fn, items):
    """Order-preserving map over eps values, capped by ADIAFLOW_THREADS."""
    n = min(_threads(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(n) as pool:
        return list(pool.map(fn, items))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    return obj


def _eps_tag(e):
    return f"{e:.6g}"


class _Run:
    """State shared between suites of one experiment."""

    def __init__(self, config, out):
        self.config = config
        self.out = out
        self.setup = setup_from_config(config)
        self.grid = flows.TimeGrid(config.T, config.N)
        ss = np.random.SeedSequence(config.seed)
        self.seeds = dict(zip(SUITES, ss.spawn(len(SUITES))))
        self._path = None
        self._crits = None

    def rng(self, suite):
        return np.random.default_rng(self.seeds[suite].spawn(1)[0])

    def eps_rngs(self, suite):
        kids = self.seeds[suite].spawn(len(self.config.eps_list))
        return [np.random.default_rng(k) for k in kids]

    @property
    def crits(self):
        if self._crits is None:
            self._crits = criticals.find_critical_points(self.setup)
        return self._crits

    @property
    def path(self):
        if self._path is None:
            if len(self.crits) < 2:
                raise SuiteFailure("fewer than two critical points; no connecting path")
            self._path = flows.integrate_base_flow(self.setup, self.crits[0], self.crits[-1],
                                                   self.grid)
        return self._path

    @property
    def index_difference(self):
        return self.crits[0].index_f - self.crits[-1].index_f

    def write_json(self, rel, data):
        p = self.out / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True))


def _suite_geometry(run):
    setup = run.setup
    rng = run.rng("geometry")
    seed = int(rng.integers(2**31))
    checks = {}
    for name, fld in (("F", setup.F), ("H", setup.H)):
        checks[name] = fields.derivative_check(fld, 50, 1e-5, seed=seed).to_dict()
    pts = hypersurface.sample_sigma(setup, 64, seed=seed)
    geo = hypersurface.point_geometry(setup, pts)
    frame_err = max(float(np.max(np.abs(E.T @ E - np.eye(E.shape[1])))) for E in geo.frames)
    tangency = float(np.max(np.abs(np.einsum("nij,ni->nj", geo.frames, geo.grad_H))))
    measured = {"derivative_checks": checks,
                "max_abs_H_on_samples": float(np.max(np.abs(setup.H.value(pts)))),
                "frame_orthonormality": frame_err, "frame_tangency": tangency,
                "m_H_estimate": hypersurface.m_H_estimate(setup),
                "mu_inf_estimate": hypersurface.mu_inf_estimate(setup)}
    passed = (all(c["passed"] for c in checks.values()) and frame_err < 1e-12
              and tangency < 1e-10 and measured["max_abs_H_on_samples"] < 1e-10)
    return passed, measured


def _suite_criticals(run):
    crits = run.crits
    report = criticals.verify_crit_correspondence(run.setup, crits)
    nondeg = all(c.nondegenerate for c in crits)
    shift_ok = nondeg and all(c.index_FH == c.index_f + 1 for c in crits)
    return report.passed and shift_ok and len(crits) >= 2, {
        "critical_points": [c.to_dict() for c in crits], "correspondence": report.to_dict()}


def _suite_flows(run):
    p = run.path
    run.out.joinpath("paths").mkdir(parents=True, exist_ok=True)
    p.to_csv(run.setup, run.out / "paths" / "base.csv")
    rep = flows.energy_identity_residual(run.setup, p)
    res = flows.base_residual(run.setup, p)
    measured = {"energy": rep.to_dict(), "discrete_residual": float(np.max(np.abs(res))),
                "x_minus": p.x_minus.x, "x_plus": p.x_plus.x}
    return rep.residual <= E0_TOL, measured


def _suite_operators(run):
    setup, p, cfg = run.setup, run.path, run.config
    k = run.index_difference
    expected = (k, 0, k)
    D0 = linops.assemble_D0(setup, p)
    idx0 = linops.fredholm_index_estimate(D0)
    measured = {"expected_index": expected, "D0": {"index": idx0}}
    ok = idx0 == expected
    if k == 1:
        c0 = linops.kernel_correlation(setup, p, D0, run.rng("operators"))
        measured["D0"]["kernel_correlation"] = c0
        ok &= c0 >= CORRELATION_MIN

    def per_eps(arg):
        e, rng = arg
        D = linops.assemble_Deps(setup, p, e)
        entry = {"eps": e, "index": linops.fredholm_index_estimate(D)}
        if k == 1:
            # gate on the linearization along T^eps, whose kernel is exactly the
            # shift generator; the base-linearized value deviates by O(eps^2)
            z = newton.T_eps(setup, p, e)
            Dz = linops.assemble_Deps(setup, z, e)
            entry["kernel_correlation"] = linops.kernel_correlation(setup, z, Dz, rng)
            entry["kernel_correlation_base"] = linops.kernel_correlation(setup, p, D, rng)
        ratios = {w: linops.estimate_probe(setup, p, e, w, rng=rng, alpha=cfg.alpha, beta=cfg.beta)
                  for w in ("ambient", "key", "difference", "components")}
        binv = linops.b_inverse_norms(setup, p.points, e, cfg.alpha, rng=rng,
                                      geometry=p.geometry(setup))
        return entry, ratios, binv

    results = _pmap(per_eps, list(zip(cfg.eps_list, run.eps_rngs("operators"))))
    reports = {w: linops.ProbeReport(w) for w in ("ambient", "key", "difference", "components")}
    binv_max = []
    measured["Deps"] = []
    for entry, ratios, binv in results:
        measured["Deps"].append(entry)
        ok &= tuple(entry["index"]) == expected
        if "kernel_correlation" in entry:
            ok &= entry["kernel_correlation"] >= CORRELATION_MIN
        for w, r in ratios.items():
            reports[w].add(entry["eps"], r)
            reports[w].fields_tested += 20
        binv_max.append(binv["max"]["B_inv"])
        run.write_json(f"probes/b_inverse_eps_{_eps_tag(entry['eps'])}.json", binv)
    growth = {}
    for w, rep in reports.items():
        run.write_json(f"probes/{w}.json", rep.to_dict())
        growth[w] = rep.no_growth(GROWTH_FACTOR)
        if len(cfg.eps_list) >= 3:
            ok &= all(growth[w].values())
    measured["probe_no_growth"] = growth
    measured["b_inverse_max"] = max(binv_max)
    ok &= max(binv_max) <= 1 + B_INV_TOL
    return bool(ok), measured


def _suite_newton(run):
    setup, p = run.setup, run.path

    def per_eps(e):
        rep = newton.newton_iterate(setup, p, e)
        z = newton.T_eps(setup, p, e, report=rep)
        z.to_csv(setup, run.out / "paths" / f"eps_{_eps_tag(e)}.csv")
        E = flows.eps_energy(setup, e, z)
        return rep, E

    (run.out / "paths").mkdir(parents=True, exist_ok=True)
    c_star = p.x_minus.f_value - p.x_plus.f_value
    ok = True
    rows = []
    for e, (rep, E) in zip(run.config.eps_list, _pmap(per_eps, run.config.eps_list)):
        factors = [it["contraction_factor"] for it in rep.iterations]
        row = {"eps": e, "iterations": len(rep.iterations), "converged": rep.converged,
               "residual_final": rep.residual_final, "contraction_factors": factors,
               "eps_energy": E, "energy_residual": abs(E - c_star), "suspect": rep.suspect}
        ok &= rep.converged and abs(E - c_star) <= EPS_ENERGY_TOL
        if e <= 0.2:
            ok &= len(rep.iterations) <= NEWTON_MAX_ITER
            ok &= all(f <= CONTRACTION_MAX for f in factors[1:])
        rows.append(row)
    return bool(ok), {"c_star": c_star, "runs": rows}


def _suite_scaling(run):
    res = newton.scaling_study(run.setup, run.path, run.config.eps_list)
    res.to_csv(run.out / "scaling.csv")
    if res.flagged:
        return True, {**res.to_dict(), "note": res.flagged}
    ok = res.slope_Z_12eps >= SLOPE_MIN
    return bool(ok), res.to_dict()


def _suite_uniqueness(run):
    eps = min(run.config.eps_list, key=lambda e: abs(np.log(e / 0.1)))
    rep = newton.uniqueness_probe(run.setup, run.path, eps, rng=run.rng("uniqueness"),
                                  tol=UNIQUENESS_TOL)
    return rep["max_distance"] <= UNIQUENESS_TOL, rep


_SUITE_FUNCS = {"geometry": _suite_geometry, "criticals": _suite_criticals,
                "flows": _suite_flows, "operators": _suite_operators, "newton": _suite_newton,
                "scaling": _suite_scaling, "uniqueness": _suite_uniqueness}


def run_experiment(config, output_dir=None):
    """Run all requested suites; returns (exit code, summary dict).

    Exit codes: 0 all suites passed, 1 a suite failed (summary still
    written), 2 invalid configuration.
    """
    if not isinstance(config, ExperimentConfig):
        try:
            config = ExperimentConfig.from_dict(config)
        except ConfigError as exc:
            log.error("%s", exc)
            return 2, {"schema_version": SCHEMA_VERSION, "error": str(exc)}
    out = Path(output_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        run = _Run(config, out)
    except ConfigError as exc:
        return 2, {"schema_version": SCHEMA_VERSION, "error": str(exc)}
    summary = {"schema_version": SCHEMA_VERSION, "config": config.to_dict(),
               "problem": {"name": run.setup.name, "dim": run.setup.dim}, "suites": {}}
    for name in config.suites:
        t0 = time.perf_counter()
        try:
            passed, measured = _SUITE_FUNCS[name](run)
            entry = {"passed": bool(passed), "measured": measured}
        except AdiaflowError as exc:
            log.warning("suite %s failed: %s", name, exc)
            entry = {"passed": False, "error": f"{type(exc).__name__}: {exc}"}
        entry["runtime_s"] = time.perf_counter() - t0
        summary["suites"][name] = entry
    summary["passed"] = all(s["passed"] for s in summary["suites"].values())
    (out / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True))
    return (0 if summary["passed"] else 1), summary
