"""Batch command-line front end.

Subcommands: fit, stress, synth, ppc, loo, sweep-alpha, sarprep,
fuse-posthoc. Every run writes a manifest recording the full configuration,
the seed and the produced files; all randomness flows from --seed. Exit
codes: 0 success, 2 usage/schema errors, 3 sampler diagnostic failure
(outputs are still written).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import replace

import numpy as np

from . import __version__, synth, validation
from .data import (Dataset, DatasetError, beirut_summary_dataset, load_dataset,
                   save_dataset)
from .nuts import NutsConfig, fit, hdi, summarize, write_draws_csv
from .posterior import (BMA, COVARIANCE_INTERSECTION, FusionMethod,
                        JointDensity, UnsupportedMethodError)
from .priors import DEFAULT_PRIORS, PriorConfig
from .sarprep import SpikeAdConfig, composite, read_raster, spikead, zonal_aggregate

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DIAGNOSTIC = 3

PRESET_NAMES = [p.value for p in synth.ScenarioPreset]


class CliError(Exception):
    """Usage or input error; maps to exit code 2."""


def _fail(msg: str) -> "CliError":
    return CliError(msg)


def _out_dir(args) -> "pathlib.Path":
    import pathlib

    path = pathlib.Path(args.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _manifest(out_dir, command: str, args, outputs: list[str], t0: float) -> None:
    snapshot = {k: v for k, v in vars(args).items() if k != "func"}
    payload = {
        "command": command,
        "config": snapshot,
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "wall_time_s": round(time.time() - t0, 3),
        "outputs": outputs,
    }
    path = out_dir / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, default=str)
        fh.write("\n")


def _load_data(args) -> Dataset:
    if getattr(args, "beirut_summary", False):
        return beirut_summary_dataset()
    if not args.data:
        raise _fail("either --data or --beirut-summary is required")
    return load_dataset(args.data)


def _priors(args) -> PriorConfig:
    if getattr(args, "config", None):
        try:
            return PriorConfig.from_json(args.config)
        except (OSError, ValueError, KeyError) as exc:
            raise _fail(f"bad prior config: {exc}")
    return DEFAULT_PRIORS


def _nuts_config(args) -> NutsConfig:
    return NutsConfig(n_chains=args.chains, n_iter=args.iter,
                      n_warmup=args.warmup, target_accept=args.target_accept,
                      max_tree_depth=args.max_depth, seed=args.seed)


def _add_fit_args(p, iter_default=8000, warmup_default=2000, chains_default=4):
    p.add_argument("--data", help="dataset JSON path")
    p.add_argument("--beirut-summary", action="store_true",
                   help="use the bundled two-modality summary dataset")
    p.add_argument("--chains", type=int, default=chains_default)
    p.add_argument("--iter", type=int, default=iter_default)
    p.add_argument("--warmup", type=int, default=warmup_default)
    p.add_argument("--target-accept", type=float, default=0.95)
    p.add_argument("--max-depth", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--config", help="JSON file overriding prior constants")
    p.add_argument("--out-dir", default=".", help="directory for outputs")


def _trust_summary(result, dataset) -> dict:
    out = {}
    for mod in dataset.modalities:
        name = f"gamma_{mod}"
        if name in result.param_names:
            draws = result.pooled(name)
            out[mod] = {
                "mean": float(draws.mean()),
                "median": float(np.median(draws)),
                "q05": float(np.quantile(draws, 0.05)),
                "q95": float(np.quantile(draws, 0.95)),
            }
    return out


def cmd_fit(args) -> int:
    t0 = time.time()
    method = FusionMethod.from_name(args.method, weights=args.fixed_weights)
    if method.kind in (BMA, COVARIANCE_INTERSECTION):
        raise _fail(f"{args.method} is not a joint density; use 'fuse-posthoc'")
    dataset = _load_data(args)
    priors = _priors(args)
    try:
        density = JointDensity(dataset, method, priors)
    except (UnsupportedMethodError, ValueError) as exc:
        raise _fail(str(exc))
    result = fit(density, _nuts_config(args), workers=args.threads)
    out_dir = _out_dir(args)

    draws_path = out_dir / "draws.csv"
    write_draws_csv(result, str(draws_path))
    summary = summarize(result)
    summary_path = out_dir / "summary.json"
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary.to_dict(), fh, indent=2)
        fh.write("\n")
    outputs = [str(draws_path), str(summary_path)]

    trust = _trust_summary(result, dataset)
    if trust or "beta_temp" in result.param_names:
        trust_path = out_dir / "trust_weights.json"
        payload = {"gamma": trust}
        if "beta_temp" in result.param_names:
            payload["beta_temp"] = {
                "mean": float(result.pooled("beta_temp").mean())}
        with open(trust_path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
        outputs.append(str(trust_path))

    _manifest(out_dir, "fit", args, outputs, t0)
    if summary.diagnostic_failure:
        print("error: diagnostic failure: divergence rate "
              f"{result.divergence_rate:.3f} exceeds 0.25", file=sys.stderr)
        return EXIT_DIAGNOSTIC
    return EXIT_OK


def cmd_stress(args) -> int:
    t0 = time.time()
    scenarios = PRESET_NAMES if args.scenario == "all" else [args.scenario]
    for s in scenarios:
        if s not in PRESET_NAMES:
            raise _fail(f"unknown preset {s!r}; valid: {', '.join(PRESET_NAMES)}")
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    cfg = _nuts_config(args)
    priors = _priors(args)
    out_dir = _out_dir(args)

    rows = []
    for s in scenarios:
        if args.matched_links:
            scen_rows = validation.run_ablation(
                synth.matched_links(synth.preset(s)), methods, args.replicates,
                cfg, priors, workers=args.threads, scenario_name=s)
        else:
            scen_rows = validation.run_ablation(s, methods, args.replicates,
                                                cfg, priors, workers=args.threads)
        rows.extend(scen_rows)

    ablation_path = out_dir / "ablation.csv"
    with open(ablation_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "method", "coverage", "median_width_kt",
                    "median_rmse_kt", "n_replicates", "n_failed"])
        for r in rows:
            w.writerow([r.scenario, r.method, repr(r.coverage),
                        repr(r.median_width_kt), repr(r.median_rmse_kt),
                        r.n_replicates, r.n_failed])

    mech_path = out_dir / "mechanism.csv"
    with open(mech_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "median_gamma_corrupted"])
        for r in rows:
            if r.method == "dirichlet":
                w.writerow([r.scenario,
                            "" if r.median_gamma_corrupted is None
                            else repr(r.median_gamma_corrupted)])

    _manifest(out_dir, "stress", args, [str(ablation_path), str(mech_path)], t0)
    return EXIT_OK


def cmd_synth(args) -> int:
    t0 = time.time()
    if args.preset not in PRESET_NAMES:
        raise _fail(f"unknown preset {args.preset!r}; valid: {', '.join(PRESET_NAMES)}")
    cfg = synth.preset(args.preset, seed=args.seed)
    if args.matched_links:
        cfg = synth.matched_links(cfg)
    if args.y_true is not None:
        cfg = replace(cfg, y_true_kt=args.y_true)
    ds = synth.generate(cfg)
    save_dataset(ds, args.output)
    import pathlib

    out_dir = pathlib.Path(args.output).resolve().parent
    _manifest(out_dir, "synth", args, [args.output], t0)
    return EXIT_OK


def cmd_ppc(args) -> int:
    t0 = time.time()
    dataset = _load_data(args)
    if not dataset.has(args.modality):
        raise _fail(f"modality {args.modality!r} absent from dataset")
    priors = _priors(args)
    density = JointDensity(dataset, FusionMethod.from_name(args.method), priors)
    result = fit(density, _nuts_config(args), workers=args.threads)
    res = validation.ppc(result, dataset, args.modality, s=args.draws,
                         seed=args.seed + 99)
    out_dir = _out_dir(args)
    path = out_dir / f"ppc_{args.modality}.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(res.to_dict(include_replicates=args.dump_replicates), fh,
                  indent=2)
        fh.write("\n")
    _manifest(out_dir, "ppc", args, [str(path)], t0)
    return EXIT_DIAGNOSTIC if result.diagnostic_failure else EXIT_OK


def cmd_loo(args) -> int:
    t0 = time.time()
    dataset = _load_data(args)
    if len(dataset.modalities) < 2:
        raise _fail("loo requires at least two modalities")
    res = validation.loo_kl(dataset, _nuts_config(args), _priors(args),
                            workers=args.threads)
    out_dir = _out_dir(args)
    path = out_dir / "loo_kl.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(res.to_dict(), fh, indent=2)
        fh.write("\n")
    _manifest(out_dir, "loo", args, [str(path)], t0)
    return EXIT_OK


def cmd_sweep_alpha(args) -> int:
    t0 = time.time()
    dataset = _load_data(args)
    try:
        alphas = [float(a) for a in args.alphas.split(",") if a.strip()]
    except ValueError as exc:
        raise _fail(f"bad --alphas: {exc}")
    rows = validation.alpha_sweep(dataset, alphas, _nuts_config(args),
                                  _priors(args), workers=args.threads)
    out_dir = _out_dir(args)
    path = out_dir / "alpha_sweep.csv"
    mods = dataset.modalities
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "median_kt", "hdi_lo", "hdi_hi"]
                   + [f"gamma_{m}" for m in mods] + ["kl_vs_alpha1"])
        for r in rows:
            w.writerow([repr(r.alpha), repr(r.median_kt), repr(r.hdi_lo),
                        repr(r.hdi_hi)]
                       + [repr(r.gamma_bar[m]) for m in mods]
                       + [repr(r.kl_vs_alpha1)])
    _manifest(out_dir, "sweep-alpha", args, [str(path)], t0)
    return EXIT_OK


def cmd_sarprep(args) -> int:
    t0 = time.time()
    try:
        rasters = [read_raster(p) for p in args.raster]
    except (OSError, ValueError) as exc:
        raise _fail(f"bad raster: {exc}")
    if args.despeckle:
        cfg = SpikeAdConfig(window=args.window, mad_threshold=args.mad_threshold,
                            iterations=args.iterations, mode=args.mode)
        rasters = spikead(rasters, cfg)
    damage = composite(rasters) if args.composite or len(rasters) > 1 else rasters[0]
    boxes = zonal_aggregate(damage, (args.epicenter[0], args.epicenter[1]),
                            box=args.box, n_annuli=args.annuli,
                            r_inner_m=args.r_inner, r_outer_m=args.r_outer,
                            percentile=args.percentile)
    if not boxes:
        raise _fail("no boxes retained; check the epicenter and annulus radii")
    ds = Dataset(sar=tuple(boxes), meta={"source": args.raster,
                                         "epicenter": list(args.epicenter)})
    save_dataset(ds, args.output)
    import pathlib

    out_dir = pathlib.Path(args.output).resolve().parent
    _manifest(out_dir, "sarprep", args, [args.output], t0)
    return EXIT_OK


def cmd_fuse_posthoc(args) -> int:
    t0 = time.time()
    if args.method not in ("bma", "ci"):
        raise _fail("fuse-posthoc method must be 'bma' or 'ci'")
    dataset = _load_data(args)
    if len(dataset.modalities) < 2:
        raise _fail("fuse-posthoc requires at least two modalities")
    cfg = _nuts_config(args)
    priors = _priors(args)
    singles = validation.single_modality_fits(dataset, cfg, priors,
                                              workers=args.threads)
    out_dir = _out_dir(args)
    path = out_dir / f"fused_{args.method}.json"
    if args.method == "bma":
        draws = validation.bma_fuse(singles, dataset, n_total=args.n_total,
                                    seed=args.seed + 17)
        lo, hi = hdi(draws, 0.95)
        payload = {"method": "bma", "median_kt": float(np.median(draws)),
                   "mean_kt": float(draws.mean()),
                   "hdi95": [lo, hi], "n_draws": int(draws.size)}
    else:
        mu, var = validation.ci_fuse(
            [f.pooled("yield_kt") for f in singles.values()])
        sd = var ** 0.5
        payload = {"method": "ci", "mean_kt": mu, "variance": var,
                   "interval95": [mu - 1.959963984540054 * sd,
                                  mu + 1.959963984540054 * sd]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    _manifest(out_dir, "fuse-posthoc", args, [str(path)], t0)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="yieldfuse",
        description="Multimodal explosive-yield estimation with tempered "
                    "Bayesian fusion")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="sample a joint posterior")
    _add_fit_args(p)
    p.add_argument("--method", default="dirichlet",
                   choices=["plain", "single", "fixed", "dirichlet", "bma", "ci"])
    p.add_argument("--fixed-weights", type=lambda s: [float(v) for v in s.split(",")],
                   default=None, help="comma-separated weights for --method fixed")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("stress", help="fusion-method ablation over synthetic scenarios")
    _add_fit_args(p, iter_default=2000, warmup_default=500, chains_default=2)
    p.add_argument("--scenario", required=True,
                   help=f"one of {', '.join(PRESET_NAMES)} or 'all'")
    p.add_argument("--methods", default="single,fixed,bma,dirichlet")
    p.add_argument("--replicates", type=int, default=20)
    p.add_argument("--matched-links", action="store_true",
                   help="generate with the inference model's seismic/crater links")
    p.set_defaults(func=cmd_stress)

    p = sub.add_parser("synth", help="write a synthetic dataset JSON")
    p.add_argument("--preset", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--y-true", type=float, default=None)
    p.add_argument("--matched-links", action="store_true")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ppc", help="posterior predictive check for one modality")
    _add_fit_args(p, iter_default=2000, warmup_default=500)
    p.add_argument("--modality", required=True,
                   choices=["seismic", "crater", "sar", "vlm"])
    p.add_argument("--method", default="dirichlet")
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--dump-replicates", action="store_true")
    p.set_defaults(func=cmd_ppc)

    p = sub.add_parser("loo", help="leave-one-modality-out KL against the full fit")
    _add_fit_args(p, iter_default=2000, warmup_default=500)
    p.set_defaults(func=cmd_loo)

    p = sub.add_parser("sweep-alpha", help="Dirichlet concentration sensitivity")
    _add_fit_args(p, iter_default=2000, warmup_default=500)
    p.add_argument("--alphas", default="0.1,0.5,1,2,5,10")
    p.set_defaults(func=cmd_sweep_alpha)

    p = sub.add_parser("sarprep", help="despeckle and aggregate a damage raster")
    p.add_argument("--raster", action="append", required=True,
                   help="raster file (repeat for a stack)")
    p.add_argument("--epicenter", type=float, nargs=2, required=True,
                   metavar=("X", "Y"))
    p.add_argument("--despeckle", action="store_true")
    p.add_argument("--mode", default="spatial", choices=["spatial", "temporal"])
    p.add_argument("--window", type=int, default=11)
    p.add_argument("--mad-threshold", type=float, default=3.0)
    p.add_argument("--iterations", type=int, default=4)
    p.add_argument("--composite", action="store_true")
    p.add_argument("--box", type=int, default=10)
    p.add_argument("--annuli", type=int, default=15)
    p.add_argument("--r-inner", type=float, default=200.0)
    p.add_argument("--r-outer", type=float, default=8000.0)
    p.add_argument("--percentile", type=float, default=95.0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_sarprep)

    p = sub.add_parser("fuse-posthoc", help="BMA or covariance-intersection fusion")
    _add_fit_args(p, iter_default=2000, warmup_default=500)
    p.add_argument("--method", required=True, choices=["bma", "ci"])
    p.add_argument("--n-total", type=int, default=4000)
    p.set_defaults(func=cmd_fuse_posthoc)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (CliError, DatasetError, UnsupportedMethodError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
