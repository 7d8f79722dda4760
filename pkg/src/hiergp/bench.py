"""Experiment configuration, orchestration and result files.

Every run directory receives ``config.json`` (the resolved configuration,
itself a valid ``--config`` input), ``seeds.json`` (the RNG stream of every
replication/model), deterministic result tables and a separate
``timings.csv`` holding wall-clock times, which are the only
non-reproducible numbers.
"""
from __future__ import annotations

import copy
import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from scipy import stats

from . import dynamics as dyn
from .adaptive import AdaptiveConfig
from .baselines import lasso_fit, matern_gp_fit, matern_gp_predict, ols_fit
from .basis import BasisFamily, TruncationVector, build_design_matrix
from .chainio import _jsonable, write_chain
from .errors import ConfigError, InvalidParameterError, NumericalError
from .gibbs import GibbsConfig, augment, run_chain
from .horseshoe import HorseshoeConfig, hs_run_chain
from .model import Dataset, Hyperparameters, read_dataset, write_dataset_csv
from .predict import (
    PredictionResult,
    empirical_coverage,
    mae,
    mean_interval_width,
    predict,
    rmse,
    write_predictions_csv,
)
from .stochastic import make_rng
from .testfns import simulate_from_prior, testfn_branin, testfn_cheng_sandu

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
OUT_ENV = "HIERGP_OUT"
TASKS = ("emulate", "recover", "simulate-prior", "benchmark")
# fixed ids keep each model's RNG stream stable when the model list changes
MODEL_IDS = {"hiergp": 1, "hiergp2": 2, "ols": 3, "lasso": 4, "matern": 5, "sindy": 6}
EMULATION_MODELS = ("hiergp", "hiergp2", "ols", "lasso", "matern")
DATA_SOURCES = ("prior", "branin", "cheng_sandu", "file")
METRIC_COLUMNS = ["replication", "model", "status", "rmse", "mae", "coverage", "width"]
STREAM_STRIDE = 16

DEFAULTS: dict[str, Any] = {
    "task": "benchmark",
    "models": ["hiergp", "hiergp2", "ols", "lasso", "matern"],
    "seed": 0,
    "replications": 20,
    "workers": 1,
    "out": None,
    "data": {
        "source": "prior",
        "d": 2,
        "n_train": 70,
        "n_test": 400,
        "noise_var": 0.01,
        "path": None,
        "test_path": None,
        "branin_as_printed": False,
    },
    "basis": {"K": [8, 8], "normalization": "unit"},
    "hyper": {},
    "prior": {"alpha": 6.0, "a_sigma": 1.0, "b_sigma": 1.0, "sigma_inf_sq": 0.0},
    "sampler": {
        "iterations": 3000,
        "burn_in": 1500,
        "thinning": 1,
        "level": 0.95,
        "include_noise": False,
        "flip_moves": True,
        "adaptive": None,
    },
    "lasso": {"folds": 5},
    "dynamics": {
        "system": "cubic2d",
        "K": None,
        "n": None,
        "dt": None,
        "noise_var": None,
        "x0": None,
        "forecast_steps": 500,
        "ensemble": 50,
        "normalize": True,
    },
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and key not in ("hyper",):
            if not isinstance(value, dict):
                raise ConfigError(f"{where!r} must be a table")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class ExperimentConfig:
    raw: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    # -- construction -------------------------------------------------------
    @classmethod
    def from_dict(cls, data: dict | None = None, **overrides) -> "ExperimentConfig":
        raw = _merge(DEFAULTS, data or {})
        for key, value in overrides.items():
            if value is not None:
                raw[key] = value
        cfg = cls(raw)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path, **overrides) -> "ExperimentConfig":
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            if p.suffix == ".json":
                data = json.loads(p.read_text())
            else:
                with open(p, "rb") as fh:
                    data = tomllib.load(fh)
        except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(data, **overrides)

    # -- accessors ----------------------------------------------------------
    def __getitem__(self, key):
        return self.raw[key]

    @property
    def task(self) -> str:
        return self.raw["task"]

    @property
    def models(self) -> list[str]:
        return list(self.raw["models"])

    def hyper(self) -> Hyperparameters:
        try:
            return Hyperparameters(**self.raw["hyper"])
        except TypeError as exc:
            raise ConfigError(f"hyper: {exc}") from exc

    def prior_hyper(self) -> Hyperparameters:
        try:
            return Hyperparameters(**self.raw["prior"])
        except TypeError as exc:
            raise ConfigError(f"prior: {exc}") from exc

    def truncation(self) -> TruncationVector:
        return TruncationVector(tuple(self.raw["basis"]["K"]), start=1)

    def family(self) -> BasisFamily:
        return BasisFamily("sinusoidal", self.raw["basis"]["normalization"])

    # -- validation ---------------------------------------------------------
    def validate(self) -> None:
        r = self.raw
        if r["task"] not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {r['task']!r}")
        models = r["models"]
        if isinstance(models, str):
            models = r["models"] = [models]
        if not models:
            raise ConfigError("model list is empty")
        unknown = [m for m in models if m not in MODEL_IDS]
        if unknown:
            raise ConfigError(f"unknown models {unknown}")
        if r["task"] in ("emulate", "benchmark"):
            bad = [m for m in models if m not in EMULATION_MODELS]
            if bad:
                raise ConfigError(f"models {bad} do not apply to task {r['task']!r}")
        if not isinstance(r["seed"], int) or r["seed"] < 0:
            raise ConfigError("seed must be a non-negative integer")
        if not isinstance(r["replications"], int) or r["replications"] < 1:
            raise ConfigError("replications must be a positive integer")
        if not isinstance(r["workers"], int) or r["workers"] < 1:
            raise ConfigError("workers must be a positive integer")
        data = r["data"]
        if data["source"] not in DATA_SOURCES:
            raise ConfigError(f"data.source must be one of {DATA_SOURCES}")
        if data["source"] == "file":
            if not data["path"] or not Path(data["path"]).exists():
                raise ConfigError(f"data.path {data['path']!r} does not exist")
            if data["test_path"] and not Path(data["test_path"]).exists():
                raise ConfigError(f"data.test_path {data['test_path']!r} does not exist")
        if data["source"] in ("branin", "cheng_sandu") and data["d"] != 2:
            raise ConfigError(f"{data['source']} is two-dimensional; set data.d = 2")
        try:
            K = self.truncation()
        except InvalidParameterError as exc:
            raise ConfigError(f"basis.K: {exc}") from exc
        if r["task"] != "recover" and data["source"] != "file" and K.dim != data["d"]:
            raise ConfigError(f"basis.K has {K.dim} dimensions but data.d = {data['d']}")
        for key in ("n_train", "n_test"):
            if not isinstance(data[key], int) or data[key] < 1:
                raise ConfigError(f"data.{key} must be a positive integer")
        if data["noise_var"] < 0:
            raise ConfigError("data.noise_var must be >= 0")
        s = r["sampler"]
        try:
            GibbsConfig(iterations=s["iterations"], burn_in=s["burn_in"], thinning=s["thinning"])
            if s["adaptive"] is not None:
                AdaptiveConfig(**s["adaptive"])
        except (InvalidParameterError, TypeError) as exc:
            raise ConfigError(f"sampler: {exc}") from exc
        if not 0 < s["level"] < 1:
            raise ConfigError("sampler.level must lie in (0, 1)")
        try:
            self.hyper()
            self.prior_hyper()
        except InvalidParameterError as exc:
            raise ConfigError(str(exc)) from exc
        if r["lasso"]["folds"] < 2:
            raise ConfigError("lasso.folds must be >= 2")
        if r["task"] == "recover":
            if r["dynamics"]["system"] not in dyn.SYSTEM_DEFAULTS:
                raise ConfigError(f"dynamics.system must be one of {sorted(dyn.SYSTEM_DEFAULTS)}")
            bad = [m for m in models if m not in ("hiergp", "sindy")]
            if bad:
                raise ConfigError(f"models {bad} do not apply to task 'recover'")
            sysdef = self.dynamics_settings()
            if len(sysdef["K"]) != len(sysdef["x0"]):
                raise ConfigError("dynamics.K must have one entry per state dimension")

    def dynamics_settings(self) -> dict:
        dcfg = self.raw["dynamics"]
        base = dyn.SYSTEM_DEFAULTS[dcfg["system"]]
        q = len(base["x0"])
        out = {k: (dcfg[k] if dcfg.get(k) is not None else base[k]) for k in ("n", "dt", "noise_var", "x0")}
        out["K"] = dcfg["K"] if dcfg["K"] is not None else [5] * q
        return out

    def resolved(self) -> dict:
        return copy.deepcopy(self.raw)


# ------------------------------------------------------------------ streams


def stream_id(replication: int, role: int) -> int:
    """RNG stream for (replication, role); role 0 is data generation."""
    return replication * STREAM_STRIDE + role


def resolve_out(cfg: ExperimentConfig, out: str | None = None) -> Path:
    if out:
        return Path(out)
    if cfg["out"]:
        return Path(cfg["out"])
    root = os.environ.get(OUT_ENV, "runs")
    return Path(root) / f"{cfg.task}-seed{cfg['seed']}"


# ---------------------------------------------------------------- datasets


@dataclass
class EmulationProblem:
    train: Dataset
    test_points: np.ndarray
    test_truth: np.ndarray | None
    truth: Any = None


def make_problem(cfg: ExperimentConfig, replication: int) -> EmulationProblem:
    data = cfg["data"]
    rng = make_rng(cfg["seed"], stream_id(replication, 0))
    d = data["d"]
    if data["source"] == "file":
        train = read_dataset(data["path"])
        if data["test_path"]:
            test = read_dataset(data["test_path"])
            return EmulationProblem(train, test.points, test.responses)
        return EmulationProblem(train, train.points, None)
    if data["source"] == "prior":
        truth = simulate_from_prior(d, cfg.truncation(), cfg.prior_hyper(), rng, cfg.family())
        fn = truth
    elif data["source"] == "branin":
        truth = None
        as_printed = data["branin_as_printed"]
        fn = lambda x: testfn_branin(x, as_printed=as_printed)  # noqa: E731
    else:
        truth = None
        fn = testfn_cheng_sandu
    x = rng.random((data["n_train"], d))
    xt = rng.random((data["n_test"], d))
    y = fn(x) + math.sqrt(data["noise_var"]) * rng.standard_normal(data["n_train"])
    return EmulationProblem(Dataset(x, y, noisy=data["noise_var"] > 0), xt, fn(xt), truth)


# ------------------------------------------------------------------ models


@dataclass
class ModelResult:
    mean: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    chain: Any = None
    extra: dict = field(default_factory=dict)


def fit_predict(cfg: ExperimentConfig, model: str, problem: EmulationProblem, replication: int) -> ModelResult:
    s = cfg["sampler"]
    family = cfg.family()
    K = cfg.truncation()
    seed = cfg["seed"]
    stream = stream_id(replication, MODEL_IDS[model])
    train, xt = problem.train, problem.test_points
    level = s["level"]
    if model in ("hiergp", "hiergp2"):
        common = dict(iterations=s["iterations"], burn_in=s["burn_in"], thinning=s["thinning"], K=K,
                      seed=seed, stream=stream)
        if model == "hiergp":
            adaptive = AdaptiveConfig(**s["adaptive"]) if s["adaptive"] else None
            chain = run_chain(train, family, GibbsConfig(**common, adaptive=adaptive, flip_moves=s["flip_moves"]),
                              cfg.hyper())
        else:
            chain = hs_run_chain(train, family, HorseshoeConfig(**common), cfg.hyper())
        pred_rng = make_rng(seed, stream + STREAM_STRIDE * 10_000)
        res = predict(chain, xt, level, include_noise=s["include_noise"], rng=pred_rng)
        return ModelResult(res.mean, res.lower, res.upper, chain)
    design = build_design_matrix(family, K, train.points)
    design_t = build_design_matrix(family, K, xt)
    if model == "ols":
        coef = ols_fit(augment(design), train.responses)
        return ModelResult(augment(design_t) @ coef)
    if model == "lasso":
        fit = lasso_fit(design, train.responses, folds=cfg["lasso"]["folds"], seed=seed + stream)
        return ModelResult(fit.predict(design_t), extra={"penalty": fit.penalty})
    if model == "matern":
        fit = matern_gp_fit(train.points, train.responses)
        mean, var = matern_gp_predict(fit, xt, include_nugget=s["include_noise"])
        z = stats.norm.ppf(0.5 + 0.5 * level)
        sd = np.sqrt(var)
        return ModelResult(mean, mean - z * sd, mean + z * sd,
                           extra={"lengthscale": fit.lengthscale, "amplitude": fit.amplitude, "nugget": fit.nugget})
    raise ConfigError(f"model {model!r} is not an emulator")


def score(result: ModelResult, truth) -> dict:
    out = {"rmse": math.nan, "mae": math.nan, "coverage": math.nan, "width": math.nan}
    if truth is None:
        return out
    out["rmse"] = rmse(result.mean, truth)
    out["mae"] = mae(result.mean, truth)
    if result.lower is not None:
        out["coverage"] = empirical_coverage(result.lower, result.upper, truth)
        out["width"] = mean_interval_width(result.lower, result.upper)
    return out


def run_replication(cfg_raw: dict, replication: int) -> list[dict]:
    """All models on one replication; failures are recorded, not raised."""
    cfg = ExperimentConfig(cfg_raw)
    problem = make_problem(cfg, replication)
    rows = []
    for model in cfg.models:
        t0 = time.perf_counter()
        try:
            res = fit_predict(cfg, model, problem, replication)
            row = {"status": "ok", **score(res, problem.test_truth)}
        except (NumericalError, InvalidParameterError, np.linalg.LinAlgError) as exc:
            log.warning("replication %d, model %s failed: %s", replication, model, exc)
            row = {"status": f"failed: {exc}", "rmse": math.nan, "mae": math.nan, "coverage": math.nan, "width": math.nan}
        row.update(replication=replication, model=model, seconds=time.perf_counter() - t0)
        rows.append(row)
    return rows


# ------------------------------------------------------------------ writers


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_rows(path, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in columns])


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _prepare_dir(cfg: ExperimentConfig, out: Path, seeds: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    snapshot = cfg.resolved()
    snapshot["out"] = str(out)
    write_json(out / "config.json", snapshot)
    write_json(out / "seeds.json", {"schema_version": SCHEMA_VERSION, "seed": cfg["seed"],
                                    "generator": "PCG64 via SeedSequence(seed, spawn_key=(stream,))", **seeds})


def summarize(rows: list[dict], models: list[str]) -> dict:
    out = {}
    for m in models:
        rs = [r for r in rows if r["model"] == m and r["status"] == "ok"]
        entry = {"replications_ok": len(rs), "replications_failed": sum(1 for r in rows if r["model"] == m) - len(rs)}
        for key in ("rmse", "mae", "coverage", "width"):
            vals = np.array([r[key] for r in rs], dtype=float)
            vals = vals[np.isfinite(vals)]
            entry[f"median_{key}"] = float(np.median(vals)) if vals.size else None
            entry[f"mean_{key}"] = float(np.mean(vals)) if vals.size else None
        out[m] = entry
    return out


# -------------------------------------------------------------------- tasks


def run_benchmark(cfg: ExperimentConfig, out: Path | None = None) -> dict:
    out = resolve_out(cfg, out)
    reps = range(cfg["replications"])
    seeds = {"replications": [
        {"replication": r, "data_stream": stream_id(r, 0),
         **{f"{m}_stream": stream_id(r, MODEL_IDS[m]) for m in cfg.models}} for r in reps]}
    _prepare_dir(cfg, out, seeds)
    if cfg["workers"] > 1:
        with ProcessPoolExecutor(max_workers=cfg["workers"]) as pool:
            batches = list(pool.map(run_replication, [cfg.raw] * len(reps), reps))
    else:
        batches = [run_replication(cfg.raw, r) for r in reps]
    # single collector: rows are written in (replication, model-list) order
    rows = [row for batch in batches for row in batch]
    write_rows(out / "metrics.csv", METRIC_COLUMNS, rows)
    write_rows(out / "timings.csv", ["replication", "model", "seconds"], rows)
    summary = {
        "schema_version": SCHEMA_VERSION,
        "task": cfg.task,
        "models": summarize(rows, cfg.models),
        "not_run": {"additive_gp": "N/A (external method, excluded)"},
    }
    write_json(out / "summary.json", summary)
    return {"out": out, "rows": rows, "summary": summary}


def run_emulate(cfg: ExperimentConfig, out: Path | None = None) -> dict:
    out = resolve_out(cfg, out)
    if len(cfg.models) != 1:
        raise ConfigError("emulate runs exactly one model; pass --model")
    model = cfg.models[0]
    _prepare_dir(cfg, out, {"data_stream": stream_id(0, 0), "model_stream": stream_id(0, MODEL_IDS[model])})
    problem = make_problem(cfg, 0)
    res = fit_predict(cfg, model, problem, 0)
    lo = res.lower if res.lower is not None else np.full_like(res.mean, np.nan)
    hi = res.upper if res.upper is not None else np.full_like(res.mean, np.nan)
    write_predictions_csv(out / "predictions.csv", problem.test_points,
                          PredictionResult(res.mean, lo, hi, cfg["sampler"]["level"]), problem.test_truth)
    if res.chain is not None:
        write_chain(out / "chain.jsonl", res.chain)
    row = {"replication": 0, "model": model, "status": "ok", **score(res, problem.test_truth)}
    write_rows(out / "metrics.csv", METRIC_COLUMNS, [row])
    write_json(out / "summary.json", {"schema_version": SCHEMA_VERSION, "task": "emulate", "metrics": row,
                                      "extra": res.extra})
    return {"out": out, "metrics": row}


def run_simulate_prior(cfg: ExperimentConfig, out: Path | None = None) -> dict:
    out = resolve_out(cfg, out)
    _prepare_dir(cfg, out, {"data_stream": stream_id(0, 0)})
    cfg_prior = ExperimentConfig.from_dict({**cfg.raw, "data": {**cfg["data"], "source": "prior"}})
    problem = make_problem(cfg_prior, 0)
    f = problem.truth
    write_dataset_csv(out / "train.csv", problem.train)
    write_dataset_csv(out / "test.csv", Dataset(problem.test_points, problem.test_truth, noisy=False))
    write_json(out / "truth.json", {
        "schema_version": SCHEMA_VERSION,
        "K": list(f.K.K),
        "indices": f.indices,
        "lambda": f.lam,
        "sigma_sq": f.sigma_sq,
        "active": f.active,
        "nu": f.nu,
        "w": f.w,
    })
    return {"out": out, "truth": f, "problem": problem}


def run_recover(cfg: ExperimentConfig, out: Path | None = None) -> dict:
    out = resolve_out(cfg, out)
    sd = cfg.dynamics_settings()
    dcfg = cfg["dynamics"]
    system = dyn.SYSTEMS[dcfg["system"]]()
    seeds = {"data_stream": stream_id(0, 0), "chain_streams": [stream_id(0, MODEL_IDS["hiergp"]) + j for j in range(system.q)],
             "ensemble": "evenly thinned draws (no randomness)"}
    _prepare_dir(cfg, out, seeds)
    rng = make_rng(cfg["seed"], stream_id(0, 0))
    data = dyn.make_training_data(system, sd["x0"], sd["dt"], sd["n"], sd["noise_var"], rng)
    steps = dcfg["forecast_steps"]
    truth = dyn.integrate(system, sd["x0"], sd["dt"], steps)
    dyn.write_trajectories_csv(out / "truth_trajectory.csv", [truth])
    K = sd["K"]
    names = ["x", "y", "z"][: system.q] if system.q <= 3 else None
    true_xi = dyn.true_coefficients(system, K)
    rows = []
    result: dict[str, Any] = {"out": out, "data": data, "truth": truth}
    if "hiergp" in cfg.models:
        s = cfg["sampler"]
        gcfg = GibbsConfig(iterations=s["iterations"], burn_in=s["burn_in"], thinning=s["thinning"],
                           seed=cfg["seed"], stream=stream_id(0, MODEL_IDS["hiergp"]), flip_moves=s["flip_moves"])
        post = dyn.fit_dynamics(data, K, cfg.hyper(), gcfg, normalize=dcfg["normalize"])
        med = post.median()
        pred = dyn.forward_simulate(med, sd["x0"], sd["dt"], steps)
        ens = dyn.ensemble_forward(post, dcfg["ensemble"], sd["x0"], sd["dt"], steps)
        dyn.write_trajectories_csv(out / "hiergp_trajectory.csv", [pred])
        dyn.write_trajectories_csv(out / "hiergp_ensemble.csv", ens)
        write_json(out / "hiergp_coefficients.json", post.summary(names))
        spread = dyn.ensemble_spread(ens, steps)
        write_rows(out / "hiergp_spread.csv", ["t", "spread"],
                   [{"t": float(i * sd["dt"]), "spread": float(v)} for i, v in enumerate(spread)])
        rows.append(_recovery_row("hiergp", med, true_xi, post.support(), pred, truth))
        result.update(posterior=post, hiergp_prediction=pred, ensemble=ens, spread=spread)
    if "sindy" in cfg.models:
        xi = dyn.sindy_baseline(data, K, seed=cfg["seed"], normalize=dcfg["normalize"])
        pred = dyn.forward_simulate(xi, sd["x0"], sd["dt"], steps)
        dyn.write_trajectories_csv(out / "sindy_trajectory.csv", [pred])
        write_json(out / "sindy_coefficients.json",
                   {f"coordinate_{j + 1}": dict(zip(xi.labels(names), xi.xi[:, j].tolist())) for j in range(xi.q)})
        rows.append(_recovery_row("sindy", xi, true_xi, xi.xi != 0, pred, truth))
        result.update(sindy=xi, sindy_prediction=pred)
    cols = ["model", "support_exact", "max_rel_error", "trajectory_rmse", "blowup"]
    write_rows(out / "metrics.csv", cols, rows)
    write_json(out / "summary.json", {"schema_version": SCHEMA_VERSION, "task": "recover",
                                      "system": dcfg["system"], "metrics": rows})
    result["rows"] = rows
    return result


def _recovery_row(model, xi: "dyn.CoefMatrix", true_xi: "dyn.CoefMatrix", support, pred, truth) -> dict:
    true_support = true_xi.xi != 0
    rel = np.abs(xi.xi[true_support] - true_xi.xi[true_support]) / np.abs(true_xi.xi[true_support])
    return {
        "model": model,
        "support_exact": bool(np.array_equal(np.asarray(support), true_support)),
        "max_rel_error": float(rel.max()),
        "trajectory_rmse": dyn.trajectory_rmse(pred, truth),
        "blowup": pred.diagnostic or "",
    }


RUNNERS = {"benchmark": run_benchmark, "emulate": run_emulate, "simulate-prior": run_simulate_prior,
           "recover": run_recover}


def run(cfg: ExperimentConfig, out: Path | None = None) -> dict:
    return RUNNERS[cfg.task](cfg, out)
