"""Experiment configuration, orchestration, artifacts, and replay.

A run is described by one JSON document.  Its resolved form (every default
filled in) is hashed together with the package version into the run id, and
written to ``<output_dir>/<run id>/manifest.json`` before any computation.
Each experiment then writes ``<name>.csv`` and ``<name>.json`` (a verdict
``{"pass": ..., "metrics": ...}``) into the same directory.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import shutil
import tempfile
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .constants import all_constants, c_alpha_gamma_d, linear_variance
from .errors import ConfigurationError, NumericError, ReplayError
from .estimators import (
    EstimatorConfig, LocalizationConfig, clt_negative_control, fbm_variation_check, gradient_clt_test,
    increment_norms, lil_diagnostic, lil_fbm, localization_decay, weighted_variation_test,
)
from .fbm import covariance_matrix, fbm_variation_oracle, sample_fbm
from .grid import Grid, green_kernel, make_grid, periodized_stable_density
from .model import FunctionSpec, ModelParams
from .noise import discrete_covariance, sample_noise_ensemble
from .rng import Stream
from .solver import EnsembleRun, SolverConfig, holder_scaling_report, simulate_ensemble

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"


# ---------------------------------------------------------------------------
# configuration


def _default_experiment_options() -> dict[str, dict[str, Any]]:
    return {
        "constants": {"directions": [[1.0, 0.0], [0.6, 0.8], [0.0, 1.0]], "tolerance": 1e-9},
        "kernel": {"times": [0.25, 1.0, 4.0], "extent": 64.0, "n": 4096, "probe": 8.0, "tolerance": 1e-8,
                   "scaling_tolerance": 1e-5, "mass_tolerance": 1e-6},
        "noise": {"samples": 2000, "lags": 12, "slope_tolerance": 0.05, "whiteness_pairs": 10000},
        "variance": {"times": [0.5, 1.0], "tolerance": 0.05},
        "increments": {"time": 1.0, "eps": [], "band": [0.93, 1.07]},
        "holder": {"time": 1.0, "space_lags": [], "time_lags": [], "tolerance": 0.05},
        "clt": {"time": 1.0, "eps": [], "threshold": 0.05, "method": "mixture", "negative_control": False},
        "variation": {"time": 1.0, "levels": [1024], "threshold": 0.1, "phi": {"kind": "constant", "value": 1.0},
                      "fbm_samples": 0, "fbm_threshold": 0.05},
        "localize": {"max_relative_error": 0.1},
        "lil": {"time": 1.0, "eps": [0.25, 0.125, 0.0625, 0.03125, 0.015625, 0.0078125], "anchors": 256,
                "member": 0, "fbm_check": True},
        "fbm": {"sites": 16, "samples": 5000, "se_tolerance": 4.0, "paths": 500, "n": 4096,
                "qv_tolerance": 0.05, "moment_tolerance": 0.03},
    }


EXPERIMENT_NAMES = tuple(_default_experiment_options())
SIMULATING = {"variance", "increments", "holder", "clt", "variation", "localize", "lil"}
TOP_KEYS = {"model", "grid", "solver", "estimator", "localization", "ensemble", "experiments", "output_dir"}


def _resolve_experiment(entry) -> dict:
    if isinstance(entry, str):
        entry = {"name": entry}
    entry = dict(entry)
    name = entry.pop("name", None)
    defaults = _default_experiment_options()
    if name not in defaults:
        raise ConfigurationError(f"unknown experiment {name!r}; expected one of {list(defaults)}")
    unknown = set(entry) - set(defaults[name])
    if unknown:
        raise ConfigurationError(f"unknown options {sorted(unknown)} for experiment {name!r}")
    return {"name": name, **defaults[name], **entry}


@dataclass
class ExperimentConfig:
    model: ModelParams
    grid: Grid
    solver: SolverConfig | None
    estimator: EstimatorConfig
    localization: LocalizationConfig | None
    members: int
    seed: int
    experiments: list[dict]
    output_dir: str = "runs"

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        unknown = set(data) - TOP_KEYS
        if unknown:
            raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
        if "model" not in data:
            raise ConfigurationError("config.model is required")
        model = ModelParams.from_dict(data["model"])
        g = dict(data.get("grid", {"extent": 32.0, "n": 1024}))
        bad = set(g) - {"extent", "n"}
        if bad:
            raise ConfigurationError(f"unknown grid keys {sorted(bad)}")
        grid = make_grid(model.dim, g.get("extent", 32.0), g.get("n", 1024))
        solver = SolverConfig.from_dict(data["solver"]) if data.get("solver") else None
        estimator = EstimatorConfig.from_dict(data.get("estimator", {}))
        localization = LocalizationConfig.from_dict(data["localization"]) if data.get("localization") else None
        ens = dict(data.get("ensemble", {}))
        bad = set(ens) - {"members", "seed"}
        if bad:
            raise ConfigurationError(f"unknown ensemble keys {sorted(bad)}")
        members = int(ens.get("members", estimator.ensemble_size))
        seed = int(ens.get("seed", 0))
        if not 0 <= seed < 2**64:
            raise ConfigurationError("ensemble.seed must be a 64-bit unsigned integer")
        if members < 1:
            raise ConfigurationError("ensemble.members must be positive")
        experiments = [_resolve_experiment(e) for e in data.get("experiments", ["constants"])]
        names = [e["name"] for e in experiments]
        if len(set(names)) != len(names):
            raise ConfigurationError(f"experiment names must be unique, got {names}")
        if SIMULATING & set(names) and solver is None:
            raise ConfigurationError(f"experiments {sorted(SIMULATING & set(names))} need a solver section")
        if "localize" in names:
            if localization is None:
                raise ConfigurationError("the localize experiment needs a localization section")
            localization.validate(grid, model)
        estimator.validate(grid)
        return cls(model, grid, solver, estimator, localization, members, seed, experiments,
                   str(data.get("output_dir", "runs")))

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "grid": {"extent": self.grid.extent, "n": self.grid.n},
            "solver": None if self.solver is None else self.solver.to_dict(),
            "estimator": self.estimator.to_dict(),
            "localization": None if self.localization is None else self.localization.to_dict(),
            "ensemble": {"members": self.members, "seed": self.seed},
            "experiments": self.experiments,
            "output_dir": self.output_dir,
        }

    def canonical(self) -> str:
        """Canonical JSON of the resolved config, excluding where outputs go."""
        body = self.to_dict()
        body.pop("output_dir")
        return json.dumps(body, sort_keys=True, separators=(",", ":"))

    def run_id(self, version: str = __version__) -> str:
        return hashlib.sha256(f"{self.canonical()}|{version}".encode()).hexdigest()[:16]


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigurationError(f"config file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from exc
    return config_from_dict(data, overrides)


def config_from_dict(data: dict, overrides: dict | None = None) -> ExperimentConfig:
    data = json.loads(json.dumps(data))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "seed":
            data.setdefault("ensemble", {})["seed"] = int(value)
        elif key == "output_dir":
            data["output_dir"] = str(value)
        else:
            raise ConfigurationError(f"unknown override {key!r}")
    return ExperimentConfig.from_dict(data)


# ---------------------------------------------------------------------------
# artifacts


def format_value(v) -> str:
    """Shortest round-trip decimal for floats; plain text otherwise."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def csv_bytes(header: list[str], rows) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    return buf.getvalue().encode()


def _to_json(obj):
    if isinstance(obj, dict):
        return {str(k): _to_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_json(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _to_json(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    return obj


def json_bytes(obj) -> bytes:
    return (json.dumps(_to_json(obj), indent=2, sort_keys=True) + "\n").encode()


@dataclass
class ExperimentResult:
    name: str
    passed: bool
    metrics: dict
    header: list[str]
    rows: list
    qualitative: bool = False
    error: str | None = None

    def verdict(self) -> dict:
        out = {"pass": bool(self.passed), "metrics": self.metrics}
        if self.qualitative:
            out["label"] = "QUALITATIVE"
        if self.error:
            out["error"] = self.error
        return out


@dataclass
class RunRecord:
    run_id: str
    directory: Path
    started: str
    finished: str | None = None
    artifacts: list[str] = field(default_factory=list)
    verdicts: dict = field(default_factory=dict)
    numeric_failure: bool = False
    kind: str = "experiments"  # or "simulation"

    @property
    def passed(self) -> bool:
        return all(v["pass"] for v in self.verdicts.values())

    @property
    def exit_code(self) -> int:
        if self.numeric_failure:
            return 3
        return 0 if self.passed else 1


# ---------------------------------------------------------------------------
# experiments


class Context:
    """Lazily simulated ensemble shared by the experiments of one run."""

    def __init__(self, cfg: ExperimentConfig, threads: int = 1):
        self.cfg = cfg
        self.threads = threads
        self._run: EnsembleRun | None = None

    @property
    def run(self) -> EnsembleRun:
        if self._run is None:
            c = self.cfg
            t0 = time.perf_counter()
            self._run = simulate_ensemble(c.model, c.grid, c.solver, c.seed, c.members, threads=self.threads)
            log.info("simulated %d members in %.1f s", c.members, time.perf_counter() - t0)
        return self._run


def _eps_or_default(opts: dict, cfg: ExperimentConfig) -> list[float]:
    eps = list(opts.get("eps") or cfg.estimator.eps_ladder)
    if not eps:
        raise ConfigurationError(f"experiment {opts['name']!r} needs an eps ladder (options.eps or estimator.eps_ladder)")
    return eps


def exp_constants(ctx: Context, opts: dict) -> ExperimentResult:
    params = ctx.cfg.model
    reports = all_constants(params)
    rows = [[r.name, r.value, r.method, r.est_abs_error] for r in reports]
    metrics = {r.name: r.value for r in reports}
    passed = all(r.est_abs_error <= 1e-8 for r in reports)
    if params.dim == 2:
        values = [c_alpha_gamma_d(params, e).value for e in opts["directions"]]
        spread = max(values) - min(values)
        metrics["rotation_spread"] = spread
        passed = passed and spread <= opts["tolerance"]
    return ExperimentResult("constants", passed, metrics, ["name", "value", "method", "est_abs_error"], rows)


def exp_kernel(ctx: Context, opts: dict) -> ExperimentResult:
    """Closed forms at alpha = 2 and 1, scaling at the model alpha, mass one."""
    alpha = ctx.cfg.model.alpha
    grid = make_grid(1, opts["extent"], opts["n"])
    x = grid.coords
    L = grid.extent
    gauss = green_kernel(grid, 2.0, 1.0).values
    err_gauss = float(np.max(np.abs(gauss - np.exp(-x**2 / 4) / math.sqrt(4 * math.pi))))
    a = 2 * math.pi / L
    cauchy_per = (1 / L) * np.sinh(a) / (np.cosh(a) - np.cos(a * x))
    err_cauchy = float(np.max(np.abs(green_kernel(grid, 1.0, 1.0).values - cauchy_per)))
    probe = np.flatnonzero(np.abs(x) <= opts["probe"])
    rows = []
    scale_err, oracle_err, mass_err = 0.0, 0.0, 0.0
    for t in opts["times"]:
        k_t = green_kernel(grid, alpha, t)
        s = t ** (-1 / alpha)
        k_1 = green_kernel(make_grid(1, L * s, grid.n), alpha, 1.0)
        scale_err = max(scale_err, float(np.max(np.abs(k_t.values - s * k_1.values))))
        ref = periodized_stable_density(alpha, t, x[probe], L)
        oracle_err = max(oracle_err, float(np.max(np.abs(k_t.values[probe] - ref))))
        mass_err = max(mass_err, abs(k_t.mass() - 1))
        rows += [[t, xi, gi] for xi, gi in zip(x[probe], k_t.values[probe])]
    metrics = {
        "gauss_sup_error": err_gauss, "cauchy_sup_error": err_cauchy, "scaling_sup_error": scale_err,
        "quadrature_sup_error": oracle_err, "mass_error": mass_err,
    }
    passed = (err_gauss < opts["tolerance"] and err_cauchy < opts["tolerance"] and scale_err < opts["scaling_tolerance"]
              and oracle_err < opts["scaling_tolerance"] and mass_err < opts["mass_tolerance"])
    return ExperimentResult("kernel", passed, metrics, ["t", "x", "G"], rows)


def noise_slope(grid: Grid, params: ModelParams, samples: np.ndarray, lags: int) -> tuple[float, np.ndarray, np.ndarray]:
    """Log-log slope of the empirical covariance over lags log-spaced in ``[4h, L/8]``."""
    k = np.unique(np.round(np.geomspace(4, grid.n / 8, lags)).astype(int))
    w_hat = grid.forward(samples)
    emp = grid.inverse(np.mean(np.abs(w_hat) ** 2, axis=0)) / grid.size
    cov = emp[k] if grid.dim == 1 else emp[k, 0]
    r = k * grid.spacing
    return float(np.polyfit(np.log(r), np.log(cov), 1)[0]), r, cov


def exp_noise(ctx: Context, opts: dict) -> ExperimentResult:
    c = ctx.cfg
    grid, params = c.grid, c.model
    m = opts["samples"]
    w = sample_noise_ensemble(grid, params, 1.0, c.seed, m, 0, threads=ctx.threads)
    slope, r, cov = noise_slope(grid, params, w, opts["lags"])
    target = -(params.dim - params.gamma)
    # whiteness: same sites, consecutive steps, independent members
    pairs = opts["whiteness_pairs"]
    n_sites = max(1, math.ceil(pairs / m))
    flat0 = w.reshape(m, -1)
    w1 = sample_noise_ensemble(grid, params, 1.0, c.seed, m, 1, threads=ctx.threads).reshape(m, -1)
    sites = np.linspace(0, flat0.shape[1], n_sites, endpoint=False).astype(int)
    a, b = flat0[:, sites].ravel(), w1[:, sites].ravel()
    corr = float(np.corrcoef(a, b)[0, 1])
    se = 1 / math.sqrt(a.size)
    # bitwise reproducibility across thread counts
    alt = sample_noise_ensemble(grid, params, 1.0, c.seed, min(m, 500), 0, threads=max(2, ctx.threads), chunk=100)
    reproducible = alt.tobytes() == w[: alt.shape[0]].tobytes()
    exact = discrete_covariance(grid, params)
    idx = np.round(r / grid.spacing).astype(int)
    rows = [[ri, ci, float(exact[i] if grid.dim == 1 else exact[i, 0])] for ri, ci, i in zip(r, cov, idx)]
    metrics = {"slope": slope, "target_slope": target, "whiteness_corr": corr, "whiteness_se": se,
               "thread_reproducible": reproducible}
    passed = abs(slope - target) < opts["slope_tolerance"] and abs(corr) < 3 * se and reproducible
    return ExperimentResult("noise", passed, metrics, ["lag", "empirical_cov", "exact_cov"], rows)


def exp_variance(ctx: Context, opts: dict) -> ExperimentResult:
    run, params = ctx.run, ctx.cfg.model
    rows, ok, metrics = [], True, {}
    for t in opts["times"]:
        f = run.field_at(t)
        per_site = f.var(axis=0, ddof=1)
        emp = float(per_site.mean())
        ref = linear_variance(params, t)
        rel = emp / ref - 1
        rows.append([t, emp, ref, rel])
        metrics[f"rel_error_t{format_value(t)}"] = rel
        ok = ok and abs(rel) < opts["tolerance"]
    return ExperimentResult("variance", ok, metrics, ["t", "empirical_var", "closed_form_var", "rel_error"], rows)


def exp_increments(ctx: Context, opts: dict) -> ExperimentResult:
    eps = _eps_or_default(opts, ctx.cfg)
    st = increment_norms(ctx.run, opts["time"], eps, ctx.cfg.estimator.probe_dirs[0])
    ratio = st.extras["ratio"]
    lo, hi = opts["band"]
    passed = bool(np.all((ratio >= lo) & (ratio <= hi)))
    rows = [[e, v, r, s] for e, v, r, s in zip(eps, st.values, ratio, st.extras["stderr"])]
    metrics = {"c_agd": st.extras["c_agd"], "min_ratio": float(ratio.min()), "max_ratio": float(ratio.max())}
    return ExperimentResult("increments", passed, metrics, ["eps", "norm_over_eps_H", "ratio_to_c", "stderr"], rows)


def exp_holder(ctx: Context, opts: dict) -> ExperimentResult:
    params = ctx.cfg.model
    space = opts["space_lags"] or list(ctx.cfg.estimator.eps_ladder)
    rep = holder_scaling_report(ctx.run, opts["time"], space_lags=space, time_lags=opts["time_lags"] or None,
                                moment_order=ctx.cfg.estimator.moment_order)
    rows, metrics, passed = [], {}, True
    targets = {"space": params.hurst, "time": params.hurst / params.alpha}
    for kind, r in (("space", rep.space), ("time", rep.time)):
        if r is None:
            continue
        metrics[kind] = {**r.to_dict(), "target": targets[kind]}
        passed = passed and abs(r.exponent - targets[kind]) <= opts["tolerance"]
        rows += [[kind, lag, mom] for lag, mom in zip(r.lags, r.moments)]
    return ExperimentResult("holder", passed, metrics, ["kind", "lag", "moment"], rows)


def exp_clt(ctx: Context, opts: dict) -> ExperimentResult:
    c = ctx.cfg
    eps = _eps_or_default(opts, c)
    st = gradient_clt_test(ctx.run, opts["time"], eps, c.estimator.probe_dirs[0], c.estimator.anchor,
                           c.estimator.significance, opts["threshold"], opts["method"])
    ex = st.extras
    metrics = {"ks_smallest_eps": ex["ks"][-1], "critical_value": ex["critical_value"], "trend_ok": ex["trend_ok"],
               "std_ratio_smallest_eps": ex["std_ratio"][-1]}
    passed = st.passed
    if opts["negative_control"]:
        nc = clt_negative_control(ctx.run, opts["time"], min(eps), c.estimator.probe_dirs[0], c.estimator.anchor)
        metrics["control_paired_ks"] = nc.extras["paired"]
        metrics["control_shuffled_ks"] = nc.extras["shuffled"]
        passed = passed and nc.passed
    rows = [[e, k, p, s] for e, k, p, s in zip(ex["eps"], ex["ks"], ex["pvalue"], ex["std_ratio"])]
    return ExperimentResult("clt", passed, metrics, ["eps", "ks", "pvalue", "std_ratio"], rows)


def exp_variation(ctx: Context, opts: dict) -> ExperimentResult:
    c = ctx.cfg
    phi = FunctionSpec.from_dict(opts["phi"])
    st = weighted_variation_test(ctx.run, opts["time"], c.estimator.interval, opts["levels"], phi, opts["threshold"])
    ex = st.extras
    metrics = {"median_abs_rel_error": ex["median_abs_rel_error"][-1], "mean_limit": ex["mean_limit"],
               "mean_variation": ex["mean_variation"][-1]}
    passed = st.passed
    rows = [[lv, mv, me] for lv, mv, me in zip(ex["levels"], ex["mean_variation"], ex["median_abs_rel_error"])]
    if opts["fbm_samples"]:
        fb = fbm_variation_check(c.model, c.estimator.interval, max(opts["levels"]), opts["fbm_samples"],
                                 Stream(c.seed, c.members), opts["fbm_threshold"])
        metrics["fbm_mean"] = fb.mean
        metrics["fbm_target"] = fb.extras["target"]
        metrics["fbm_rel_error"] = fb.extras["rel_error"]
        passed = passed and fb.passed
    return ExperimentResult("variation", passed, metrics, ["level", "mean_variation", "median_abs_rel_error"], rows)


def exp_localize(ctx: Context, opts: dict) -> ExperimentResult:
    c = ctx.cfg
    st = localization_decay(ctx.run, c.localization, c.estimator.probe_dirs[0])
    ex = st.extras
    rel = ex["relative_error"]
    metrics = {"slope": ex["slope"], "slope_bound": ex["slope_bound"], "relative_error_largest_beta": float(rel[-1]),
               "largest_beta_within_target": bool(rel[-1] <= opts["max_relative_error"])}
    rows = [[b, d, e, r] for b, d, e, r in zip(ex["beta"], ex["delta"], ex["l2_error"], rel)]
    return ExperimentResult("localize", st.passed, metrics, ["beta", "delta", "l2_error", "relative_error"], rows)


def exp_lil(ctx: Context, opts: dict) -> ExperimentResult:
    c = ctx.cfg
    f = ctx.run.field_at(opts["time"])[opts["member"]]
    st = lil_diagnostic(f, c.model, c.grid, opts["eps"], opts["anchors"], c.estimator.probe_dirs[0])
    metrics = {"fraction_in_band": st.extras["fraction_in_band"], "band": st.extras["band"]}
    rows = [["solution", i, v] for i, v in enumerate(st.values)]
    passed = st.passed
    if opts["fbm_check"]:
        c_agd = c_alpha_gamma_d(c.model).value
        fb = lil_fbm(c.model.hurst, c_agd, c.grid.extent, c.grid.n, opts["eps"], opts["anchors"], Stream(c.seed, 1))
        metrics["fbm_fraction_in_band"] = fb.extras["fraction_in_band"]
        rows += [["fbm", i, v] for i, v in enumerate(fb.values)]
        passed = passed and fb.passed
    return ExperimentResult("lil", passed, metrics, ["source", "anchor", "normalized_max"], rows, qualitative=True)


def exp_fbm(ctx: Context, opts: dict) -> ExperimentResult:
    c = ctx.cfg
    H = c.model.hurst
    m = opts["sites"]
    x = np.arange(1, m + 1) / m
    cov = covariance_matrix(x, H)
    samples = sample_fbm(x, H, Stream(c.seed, 0), method="cholesky", size=opts["samples"]).values
    emp = samples.T @ samples / samples.shape[0]
    se = np.sqrt((cov**2 + np.outer(np.diag(cov), np.diag(cov))) / samples.shape[0])
    z_max = float(np.max(np.abs(emp - cov) / se))
    qv = fbm_variation_oracle(0.5, opts["n"], Stream(c.seed, 1), size=opts["paths"])
    v34 = fbm_variation_oracle(0.75, opts["n"], Stream(c.seed, 2), size=opts["paths"])
    moment = 2 ** (2 / 3) * math.gamma(7 / 6) / math.sqrt(math.pi)
    metrics = {"max_cov_z": z_max, "bm_qv_mean": float(qv.mean()), "h075_var_mean": float(v34.mean()),
               "h075_target": moment}
    passed = (z_max < opts["se_tolerance"] and abs(qv.mean() - 1) < opts["qv_tolerance"]
              and abs(v34.mean() / moment - 1) < opts["moment_tolerance"])
    rows = [[i, j, cov[i, j], emp[i, j]] for i in range(m) for j in range(i, m)]
    return ExperimentResult("fbm", passed, metrics, ["i", "j", "exact_cov", "empirical_cov"], rows)


EXPERIMENTS: dict[str, Callable[[Context, dict], ExperimentResult]] = {
    "constants": exp_constants, "kernel": exp_kernel, "noise": exp_noise, "variance": exp_variance,
    "increments": exp_increments, "holder": exp_holder, "clt": exp_clt, "variation": exp_variation,
    "localize": exp_localize, "lil": exp_lil, "fbm": exp_fbm,
}


# ---------------------------------------------------------------------------
# orchestration


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _write_manifest(record: RunRecord, cfg: ExperimentConfig) -> None:
    manifest = {
        "run_id": record.run_id, "kind": record.kind, "code_version": __version__, "config": cfg.to_dict(),
        "config_canonical_sha256": hashlib.sha256(cfg.canonical().encode()).hexdigest(),
        "started": record.started, "finished": record.finished, "artifacts": record.artifacts,
        "verdicts": record.verdicts,
    }
    (record.directory / MANIFEST).write_bytes(json_bytes(manifest))


def execute(cfg: ExperimentConfig, threads: int = 1, only: list[str] | None = None,
            directory: Path | None = None) -> tuple[RunRecord, list[ExperimentResult]]:
    """Run the configured experiments and write all artifacts."""
    run_id = cfg.run_id()
    directory = Path(cfg.output_dir) / run_id if directory is None else Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    record = RunRecord(run_id, directory, _now())
    _write_manifest(record, cfg)
    ctx = Context(cfg, threads)
    results = []
    for opts in cfg.experiments:
        name = opts["name"]
        if only is not None and name not in only:
            continue
        t0 = time.perf_counter()
        try:
            res = EXPERIMENTS[name](ctx, opts)
        except NumericError as exc:
            record.numeric_failure = True
            res = ExperimentResult(name, False, {}, ["error"], [[str(exc)]], error=f"{type(exc).__name__}: {exc}")
        log.info("%s: %s in %.1f s", name, "pass" if res.passed else "FAIL", time.perf_counter() - t0)
        for suffix, payload in (("csv", csv_bytes(res.header, res.rows)), ("json", json_bytes(res.verdict()))):
            fname = f"{name}.{suffix}"
            (directory / fname).write_bytes(payload)
            record.artifacts.append(fname)
        record.verdicts[name] = res.verdict()
        results.append(res)
    if only is not None and not results:
        raise ConfigurationError(f"none of {only} is configured; available: {[e['name'] for e in cfg.experiments]}")
    record.finished = _now()
    _write_manifest(record, cfg)
    return record, results


def run(config_path, overrides: dict | None = None, threads: int = 1, only: list[str] | None = None) -> RunRecord:
    cfg = load_config(config_path, overrides)
    return execute(cfg, threads, only)[0]


def replay(run_id: str, output_dir, threads: int = 1) -> RunRecord:
    """Rerun a stored run and require byte-identical artifacts."""
    directory = Path(output_dir) / run_id
    path = directory / MANIFEST
    if not path.exists():
        raise ReplayError(f"no manifest at {path}")
    manifest = json.loads(path.read_text())
    if manifest.get("code_version") != __version__:
        raise ReplayError(
            f"code version mismatch: run was produced by {manifest.get('code_version')}, this is {__version__}"
        )
    cfg = ExperimentConfig.from_dict(manifest["config"])
    prefix = "simulation|" if manifest.get("kind") == "simulation" else ""
    if cfg.run_id(prefix + __version__) != run_id or manifest.get("run_id") != run_id:
        raise ReplayError(f"stored config hashes to {cfg.run_id(prefix + __version__)}, not the run id {run_id}; the config was edited")
    with tempfile.TemporaryDirectory() as tmp:
        if manifest.get("kind") == "simulation":
            record = write_simulation(cfg, threads, directory=Path(tmp))
        else:
            only = sorted({Path(a).stem for a in manifest.get("artifacts", [])})
            record, _ = execute(cfg, threads, only or None, directory=Path(tmp))
        mismatched = [a for a in manifest.get("artifacts", [])
                      if not (directory / a).exists() or (directory / a).read_bytes() != (Path(tmp) / a).read_bytes()]
        shutil.rmtree(tmp, ignore_errors=True)
    record.directory = directory
    if mismatched:
        raise ReplayError(f"replayed artifacts differ: {mismatched}")
    return record


# ---------------------------------------------------------------------------
# field dumps for the simulate command


def write_simulation(cfg: ExperimentConfig, threads: int = 1, directory: Path | None = None) -> RunRecord:
    """Simulate the ensemble and write one CSV per record time plus the manifest."""
    if cfg.solver is None:
        raise ConfigurationError("simulate needs a solver section")
    run_id = cfg.run_id("simulation|" + __version__)
    directory = Path(cfg.output_dir) / run_id if directory is None else Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    record = RunRecord(run_id, directory, _now(), kind="simulation")
    _write_manifest(record, cfg)
    ens = simulate_ensemble(cfg.model, cfg.grid, cfg.solver, cfg.seed, cfg.members, threads=threads)
    grid = cfg.grid
    coords = grid.points().reshape(-1, grid.dim)
    header = ["site", *[f"x{i + 1}" for i in range(grid.dim)], "value", "member"]
    for t, fields in zip(ens.times, ens.fields):
        rows = ([s, *coords[s], v, m] for m in range(cfg.members) for s, v in enumerate(fields[m].ravel()))
        fname = f"field_t{format_value(t)}.csv"
        (directory / fname).write_bytes(csv_bytes(header, rows))
        record.artifacts.append(fname)
    record.finished = _now()
    _write_manifest(record, cfg)
    return record
