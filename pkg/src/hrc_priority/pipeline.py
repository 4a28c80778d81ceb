"""Pipeline commands: sample, fit, optimize, evaluate, benchmark, appendix, export.

Each command reads its inputs, derives all randomness from one root seed and
writes versioned JSON or CSV outputs. A ``*.manifest.json`` file next to each
output records the command, input hashes, seeds, times and output paths. Only
the manifests carry timestamps, so the data files themselves are byte-stable
for a fixed seed.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigurationError
from .ga import GAConfig, OptimizationResult, config_dict, gp_predictors, optimize_sweep
from .gp import GPModel, fit_gp
from .scene import load_scene, resolve_scene_path
from .simulator import (MANUFACTURING_FIRST, NON_CONTINUOUS, RECOVERY_FIRST, benchmark_modes,
                        collect_dataset, read_dataset, run_batch, run_trial)

RESULT_FORMAT = "hrc-result/1"
ASSESSMENT_FORMAT = "hrc-assessment/1"
BENCHMARK_FORMAT = "hrc-benchmark/1"
MANIFEST_FORMAT = "hrc-manifest/1"
FIT_FORMAT = "hrc-fit/1"
PLOT_FORMAT = "hrc-plot/1"


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _scene_sha256(path) -> str:
    return file_sha256(resolve_scene_path(path))


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


@dataclass
class RunManifest:
    command: str
    inputs: dict
    seeds: dict
    outputs: list
    started: float = field(default_factory=time.time)
    finished: float | None = None

    def write(self, primary_output):
        self.finished = time.time()
        path = Path(str(primary_output) + ".manifest.json")
        _write_json(path, {"format": MANIFEST_FORMAT, "version": __version__,
                           "command": self.command, "inputs": self.inputs, "seeds": self.seeds,
                           "outputs": [str(p) for p in self.outputs],
                           "started": self.started, "finished": self.finished})
        return path


# ----------------------------------------------------------------------------
# continuous vs non-continuous recovery
# ----------------------------------------------------------------------------

@dataclass
class ProcessTimes:
    T_r: float
    T_m: float
    dT_r: float
    dT_m: float
    n_r: float = 1.0

    def __post_init__(self):
        if self.T_r <= 0 or self.T_m <= 0:
            raise ConfigurationError("T_r and T_m must be positive")
        if self.dT_r < 0 or self.dT_m < 0:
            raise ConfigurationError("dT_r and dT_m must be non-negative")
        if self.n_r < 1:
            raise ConfigurationError("n_r must be >= 1")


@dataclass
class AppendixResult:
    continuous_better: bool
    margin: float
    n_m: float
    n_m_prime: float


def appendix_condition(t: ProcessTimes) -> AppendixResult:
    """Compare lost manufacturing tasks between stopping the cell and continuing.

    Stopping the cell for ``n_r`` recoveries costs ``n_m`` manufacturing tasks,
    the extra production time needed to catch up. Running recovery alongside
    manufacturing slows both; ``n_m_prime`` is how many manufacturing tasks
    fit into the slower recovery window. The continuous process wins when
    ``T_r*T_m - dT_r*dT_m > 0``.
    """
    margin = t.T_r * t.T_m - t.dT_r * t.dT_m
    n_m = (t.n_r * (t.T_r + t.dT_r) - t.n_r * t.T_r) / t.T_m
    n_m_prime = t.n_r * (t.T_r + t.dT_r) / (t.T_m + t.dT_m)
    return AppendixResult(margin > 0.0, margin, n_m, n_m_prime)


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------

def cmd_sample(scene_path, n_samples: int, n_trials: int, seed: int, out_path, jobs: int = 1):
    scene = load_scene(scene_path)
    man = RunManifest("sample", {"scene": str(scene_path), "scene_sha256": _scene_sha256(scene_path),
                                 "n_samples": n_samples, "n_trials": n_trials},
                      {"root": seed}, [out_path])
    records = collect_dataset(scene, n_samples, n_trials, seed, out_path=out_path, jobs=jobs)
    man.write(out_path)
    return records


def dataset_arrays(path):
    recs = read_dataset(path)
    if len(recs) < 2:
        raise ConfigurationError(f"{path}: need at least two rows to fit")
    X = np.array([r.thresholds for r in recs])
    return X, np.array([r.x_product for r in recs]), np.array([r.x_risk for r in recs])


def cmd_fit(dataset_path, out_dir, seed: int = 0, restarts: int = 8):
    """Fit productivity and risk surrogates; returns the two model paths."""
    X, y_prod, y_risk = dataset_arrays(dataset_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(int(seed)).generate_state(2)
    models = {"product": fit_gp(X, y_prod, restarts=restarts, seed=int(seeds[0])),
              "risk": fit_gp(X, y_risk, restarts=restarts, seed=int(seeds[1]))}
    paths = {}
    diag = {"format": FIT_FORMAT, "dataset_sha256": file_sha256(dataset_path), "n": int(X.shape[0])}
    for name, m in models.items():
        paths[name] = out_dir / f"gp_{name}.json"
        m.save(paths[name])
        diag[name] = {"log_marginal_likelihood": m.log_marginal_likelihood,
                      "lengthscales": m.lengthscales.tolist(),
                      "signal_var": m.signal_var, "noise_var": m.noise_var}
    _write_json(out_dir / "fit_diagnostics.json", diag)
    RunManifest("fit", {"dataset": str(dataset_path), "dataset_sha256": diag["dataset_sha256"]},
                {"root": seed, "restarts": [int(s) for s in seeds]},
                [paths["product"], paths["risk"], out_dir / "fit_diagnostics.json"]).write(out_dir / "fit")
    return paths["product"], paths["risk"]


def cmd_optimize(product_path, risk_path, t_lims, zeta: float, l_max: float,
                 ga: GAConfig, out_path):
    """Optimize thresholds for each ``t_lim`` (ascending, warm-started)."""
    prod = GPModel.load(product_path)
    risk = GPModel.load(risk_path)
    if prod.dim != risk.dim:
        raise ConfigurationError("product and risk models have different input dimensions")
    t_lims = np.atleast_1d(np.asarray(t_lims, dtype=float))
    f_p, f_r = gp_predictors(prod, risk, zeta)
    results = optimize_sweep(f_p, f_r, t_lims, l_max, prod.dim, ga)
    doc = {"format": RESULT_FORMAT, "zeta": float(zeta), "l_max": float(l_max),
           "ga": config_dict(ga), "seed": ga.seed,
           "models": {"product_sha256": file_sha256(product_path),
                      "risk_sha256": file_sha256(risk_path)},
           "results": [r.to_dict() for r in results]}
    _write_json(out_path, doc)
    RunManifest("optimize", {"product": str(product_path), "risk": str(risk_path),
                             "t_lim": t_lims.tolist(), "zeta": zeta, "l_max": l_max},
                {"ga": ga.seed}, [out_path]).write(out_path)
    return results


def load_results(path) -> list[OptimizationResult]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != RESULT_FORMAT:
        raise ConfigurationError(f"{path}: expected format {RESULT_FORMAT!r}")
    return [OptimizationResult.from_dict(r) for r in doc["results"]]


def _record_dict(rec) -> dict:
    return {"thresholds": [float(v) for v in rec.thresholds],
            "x_product": rec.x_product, "sd_product": rec.sd_product,
            "x_risk": rec.x_risk, "sd_risk": rec.sd_risk,
            "n_trials": rec.n_trials, "discarded": rec.discarded_trials,
            "min_pair_distance": finite_or_none(rec.min_pair_distance),
            "hard_failures": rec.hard_failures}


def cmd_evaluate(scene_path, result_path, n_trials: int, seed: int, out_path,
                 jobs: int = 1, baseline: bool = True):
    """Simulate every optimized threshold vector (and ``l = 0``) on shared trial seeds."""
    scene = load_scene(scene_path)
    results = load_results(result_path)
    rows = []
    for r in results:
        rec = run_batch(scene, r.thresholds_star, n_trials, seed, jobs=jobs)
        rows.append({"t_lim": r.t_lim, "feasible": r.feasible,
                     "predicted_product": r.predicted_product,
                     "predicted_risk_bound": r.predicted_risk_bound, **_record_dict(rec)})
    doc = {"format": ASSESSMENT_FORMAT, "seed": seed, "n_trials": n_trials,
           "scene_sha256": _scene_sha256(scene_path), "result_sha256": file_sha256(result_path),
           "assessments": rows}
    if baseline:
        base = run_batch(scene, np.zeros(scene.n_manufacturing), n_trials, seed, jobs=jobs)
        doc["baseline_recovery_first"] = _record_dict(base)
    _write_json(out_path, doc)
    RunManifest("evaluate", {"scene": str(scene_path), "result": str(result_path),
                             "n_trials": n_trials}, {"root": seed}, [out_path]).write(out_path)
    return doc


def cmd_benchmark(scene_path, n_trials: int, seed: int, out_path, jobs: int = 1):
    scene = load_scene(scene_path)
    recs = benchmark_modes(scene, n_trials, seed, jobs=jobs)
    rows = []
    for mode in (NON_CONTINUOUS, RECOVERY_FIRST, MANUFACTURING_FIRST):
        d = _record_dict(recs[mode])
        if mode == NON_CONTINUOUS:
            # the cell is halted: no manufacturing output to report
            d["x_product"] = None
            d["sd_product"] = None
        rows.append({"mode": mode, **d})
    doc = {"format": BENCHMARK_FORMAT, "seed": seed, "n_trials": n_trials,
           "scene_sha256": _scene_sha256(scene_path), "rows": rows}
    _write_json(out_path, doc)
    RunManifest("benchmark", {"scene": str(scene_path), "n_trials": n_trials},
                {"root": seed}, [out_path]).write(out_path)
    return doc


def format_benchmark(doc: dict) -> str:
    lines = [f"{'mode':<22}{'productivity':>20}{'risk time [s]':>20}"]
    for r in doc["rows"]:
        prod = "-" if r["x_product"] is None else f"{r['x_product']:.3f} ± {r['sd_product']:.3f}"
        risk = f"{r['x_risk']:.3f} ± {r['sd_risk']:.3f}"
        lines.append(f"{r['mode']:<22}{prod:>20}{risk:>20}")
    return "\n".join(lines)


# ----------------------------------------------------------------------------
# plot data
# ----------------------------------------------------------------------------

def _write_csv(path, kind: str, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# {PLOT_FORMAT} {kind}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def read_plot_csv(path):
    """Header and float rows of an exported plot-data file."""
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith(f"# {PLOT_FORMAT}"):
            raise ConfigurationError(f"{path}: not a plot-data file")
        reader = csv.reader(fh)
        header = next(reader)
        return header, np.array([[float(v) for v in row] for row in reader])


def band_grid(model: GPModel, lower: np.ndarray, upper: np.ndarray, points: int = 200):
    """Per-axis slices through the median training input.

    Yields ``(axis, grid_inputs, mu, sigma)``. For 1-D models this is the plain band.
    """
    med = np.median(model.X, axis=0)
    for k in range(model.dim):
        X = np.tile(med, (points, 1))
        X[:, k] = np.linspace(lower[k], upper[k], points)
        mu, sd = model.predict(X)
        yield k, X, mu, sd


def cmd_export_plots(out_dir, dataset_path=None, model_paths=(), result_paths=(),
                     scene_path=None, trace_seed: int = 0, l_max: float = 0.5, points: int = 200):
    out_dir = Path(out_dir)
    written = []
    if dataset_path is not None:
        recs = read_dataset(dataset_path)
        n_m = recs[0].thresholds.size
        header = [f"l{k + 1}" for k in range(n_m)] + ["x_product", "x_risk"]
        rows = [list(r.thresholds) + [r.x_product, r.x_risk] for r in recs]
        written.append(_write_csv(out_dir / "scatter.csv", "scatter", header, rows))
    for mp in model_paths:
        m = GPModel.load(mp)
        lo = np.zeros(m.dim)
        hi = np.full(m.dim, l_max)
        for k, X, mu, sd in band_grid(m, lo, hi, points):
            header = [f"l{j + 1}" for j in range(m.dim)] + ["mu", "sigma"]
            rows = [list(x) + [a, b] for x, a, b in zip(X, mu, sd)]
            written.append(_write_csv(out_dir / f"{Path(mp).stem}_band_l{k + 1}.csv",
                                      f"gp-band axis={k + 1}", header, rows))
    for rp in result_paths:
        res = load_results(rp)
        dim = res[0].thresholds_star.size
        header = ["t_lim"] + [f"l{j + 1}" for j in range(dim)] + ["predicted_product",
                                                                 "predicted_risk_bound", "feasible"]
        rows = [[r.t_lim] + list(r.thresholds_star) + [r.predicted_product,
                                                        r.predicted_risk_bound, int(r.feasible)]
                for r in res]
        written.append(_write_csv(out_dir / f"{Path(rp).stem}_curve.csv", "tlim-curve", header, rows))
    if scene_path is not None:
        scene = load_scene(scene_path)
        th = np.full(scene.n_manufacturing, 0.5 * scene.l_max)
        tr = run_trial(scene, th, trace_seed, log_trajectory=True).trajectory_log
        n_rob = tr["positions"].shape[1]
        header = ["t"] + [f"{r.name}_{a}" for r in scene.robots for a in "xyz"] + \
                 [f"p{k + 1}" for k in range(scene.n_manufacturing)]
        rows = [[t] + list(P.reshape(-1)) + [int(v) for v in pr]
                for t, P, pr in zip(tr["t"], tr["positions"], tr["priorities"])]
        assert n_rob == len(scene.robots)
        written.append(_write_csv(out_dir / "trace.csv", "trajectory", header, rows))
    return written


def appendix_from_benchmark(doc: dict, T_m: float, dT_m: float = 0.0) -> AppendixResult:
    """Appendix check using benchmark risk times as recovery durations."""
    rows = {r["mode"]: r for r in doc["rows"]}
    T_r = rows[NON_CONTINUOUS]["x_risk"]
    dT_r = max(0.0, rows[RECOVERY_FIRST]["x_risk"] - T_r)
    return appendix_condition(ProcessTimes(T_r, T_m, dT_r, dT_m))


def finite_or_none(v):
    return None if v is None or not math.isfinite(v) else v
