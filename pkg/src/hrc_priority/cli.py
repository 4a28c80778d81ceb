"""``hrc-priority`` command-line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .errors import ConfigurationError, FitError, SceneError
from .ga import GAConfig
from .scene import default_scene_path, load_scene


def _t_lims(args):
    if args.t_lim:
        return args.t_lim
    if args.t_lim_range:
        lo, hi, step = args.t_lim_range
        n = int(round((hi - lo) / step)) + 1
        return list(np.round(lo + step * np.arange(n), 10))
    raise ConfigurationError("give --t-lim or --t-lim-range")


def _ga_config(args) -> GAConfig:
    return GAConfig(population_size=args.ga_population, generations=args.ga_generations,
                    crossover_rate=args.ga_crossover, mutation_rate=args.ga_mutation,
                    mutation_std=args.ga_mutation_std, tournament_size=args.ga_tournament,
                    seed=args.seed)


def _common(p, out_required=True):
    p.add_argument("--seed", type=int, default=0, help="root seed for this command")
    p.add_argument("--out", type=Path, required=out_required, help="output path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hrc-priority",
                                     description="Priority-threshold design for a shared robot workcell.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="simulate trials at random thresholds and write a dataset")
    p.add_argument("--scene", type=Path, default=default_scene_path())
    p.add_argument("--n-samples", type=int, default=50)
    p.add_argument("--n-trials", type=int, default=100)
    p.add_argument("--jobs", type=int, default=1)
    _common(p)

    p = sub.add_parser("fit", help="fit productivity and risk surrogates to a dataset")
    p.add_argument("dataset", type=Path)
    p.add_argument("--restarts", type=int, default=8)
    _common(p)

    p = sub.add_parser("optimize", help="optimize thresholds under a risk-time limit")
    p.add_argument("--product-model", type=Path, required=True)
    p.add_argument("--risk-model", type=Path, required=True)
    p.add_argument("--t-lim", type=float, nargs="+")
    p.add_argument("--t-lim-range", type=float, nargs=3, metavar=("LO", "HI", "STEP"))
    p.add_argument("--zeta", type=float, default=0.0)
    p.add_argument("--l-max", type=float, default=None,
                   help="threshold upper bound (default: from --scene)")
    p.add_argument("--scene", type=Path, default=default_scene_path())
    p.add_argument("--ga-population", type=int, default=GAConfig.population_size)
    p.add_argument("--ga-generations", type=int, default=GAConfig.generations)
    p.add_argument("--ga-crossover", type=float, default=GAConfig.crossover_rate)
    p.add_argument("--ga-mutation", type=float, default=GAConfig.mutation_rate)
    p.add_argument("--ga-mutation-std", type=float, default=GAConfig.mutation_std)
    p.add_argument("--ga-tournament", type=int, default=GAConfig.tournament_size)
    _common(p)

    p = sub.add_parser("evaluate", help="simulate optimized thresholds")
    p.add_argument("result", type=Path)
    p.add_argument("--scene", type=Path, default=default_scene_path())
    p.add_argument("--n-trials", type=int, default=100)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--no-baseline", action="store_true")
    _common(p)

    p = sub.add_parser("benchmark", help="compare non-continuous, recovery-first and manufacturing-first")
    p.add_argument("--scene", type=Path, default=default_scene_path())
    p.add_argument("--n-trials", type=int, default=100)
    p.add_argument("--jobs", type=int, default=1)
    _common(p)

    p = sub.add_parser("appendix", help="continuous vs non-continuous recovery condition")
    p.add_argument("--T-r", type=float, required=True)
    p.add_argument("--T-m", type=float, required=True)
    p.add_argument("--dT-r", type=float, required=True)
    p.add_argument("--dT-m", type=float, required=True)
    p.add_argument("--n-r", type=float, default=1.0)

    p = sub.add_parser("export-plots", help="write plot-ready CSV files")
    p.add_argument("--dataset", type=Path)
    p.add_argument("--model", type=Path, action="append", default=[])
    p.add_argument("--result", type=Path, action="append", default=[])
    p.add_argument("--scene", type=Path, help="also export one logged trial trace")
    p.add_argument("--l-max", type=float, default=0.5)
    p.add_argument("--points", type=int, default=200)
    _common(p)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except (ConfigurationError, FitError, SceneError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    if args.command == "sample":
        recs = pipeline.cmd_sample(args.scene, args.n_samples, args.n_trials, args.seed,
                                   args.out, jobs=args.jobs)
        print(f"wrote {len(recs)} rows to {args.out}")
    elif args.command == "fit":
        paths = pipeline.cmd_fit(args.dataset, args.out, seed=args.seed, restarts=args.restarts)
        print("wrote " + ", ".join(str(p) for p in paths))
    elif args.command == "optimize":
        l_max = args.l_max if args.l_max is not None else load_scene(args.scene).l_max
        results = pipeline.cmd_optimize(args.product_model, args.risk_model, _t_lims(args),
                                        args.zeta, l_max, _ga_config(args), args.out)
        for r in results:
            flag = "" if r.feasible else "  INFEASIBLE"
            th = ", ".join(f"{v:.4f}" for v in r.thresholds_star)
            print(f"t_lim={r.t_lim:.3f}  l*=[{th}]  product={r.predicted_product:.4f}  "
                  f"risk={r.predicted_risk_bound:.4f}{flag}")
        if not all(r.feasible for r in results):
            return 1
    elif args.command == "evaluate":
        doc = pipeline.cmd_evaluate(args.scene, args.result, args.n_trials, args.seed, args.out,
                                    jobs=args.jobs, baseline=not args.no_baseline)
        for a in doc["assessments"]:
            print(f"t_lim={a['t_lim']:.3f}  product={a['x_product']:.3f} ± {a['sd_product']:.3f}  "
                  f"risk={a['x_risk']:.3f} ± {a['sd_risk']:.3f}")
        if "baseline_recovery_first" in doc:
            b = doc["baseline_recovery_first"]
            print(f"baseline l=0  product={b['x_product']:.3f}  risk={b['x_risk']:.3f}")
    elif args.command == "benchmark":
        doc = pipeline.cmd_benchmark(args.scene, args.n_trials, args.seed, args.out, jobs=args.jobs)
        print(pipeline.format_benchmark(doc))
    elif args.command == "appendix":
        res = pipeline.appendix_condition(pipeline.ProcessTimes(args.T_r, args.T_m, args.dT_r,
                                                                args.dT_m, args.n_r))
        print(json.dumps({"continuous_better": res.continuous_better, "margin": res.margin,
                          "n_m": res.n_m, "n_m_prime": res.n_m_prime}))
    elif args.command == "export-plots":
        files = pipeline.cmd_export_plots(args.out, args.dataset, args.model, args.result,
                                          args.scene, trace_seed=args.seed, l_max=args.l_max,
                                          points=args.points)
        for f in files:
            print(f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
