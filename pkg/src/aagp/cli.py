"""
Command-line interface.

    aagp <command> --config run.yaml [--threads N] [-v] [--resume]

Commands: simulate, detrend, fit, predict, cv, variogram.  Exit status is 0
on success, 2 for configuration or usage errors and 3 when the numerics
abort (chain abort, singular matrix).
"""

from __future__ import annotations

import argparse
import logging
import pickle
import sys
from pathlib import Path

import numpy as np
import pandas as pd
from threadpoolctl import threadpool_limits

from . import io
from .config import THREADS_ENV, RunConfig
from .diagnostics import summarize_store
from .exceptions import ChainAbort, ConfigError
from .ingest import SeasonalStandardizer, read_panel, to_dataset
from .mpp import select_knots
from .predict import PredictionMonitor, PredictionResult, alci, coverage, mspe, predictive_draws
from .sampler import ChainConfig, Sampler, run_chain, run_chains
from .simulate import ScenarioSpec, default_truth, empirical_variogram, generate_scenario, holdout_split

logger = logging.getLogger("aagp")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
CHECKPOINT_NAME = "checkpoint.pkl"


# -- helpers -------------------------------------------------------------------

def _dataset(cfg: RunConfig):
    return io.read_dataset(cfg.path("data", "dataset"))


def _knots(cfg: RunConfig, data):
    ks = cfg.section("knots")
    if ks["file"] is not None:
        return io.read_knots(cfg.path("knots", "file"))
    locs = data.locations
    lower = ks["lower"] if ks["lower"] is not None else locs.min(axis=0)
    upper = ks["upper"] if ks["upper"] is not None else locs.max(axis=0)
    return select_knots((lower, upper), int(ks["m"]), ks["design"], int(ks["seed"]))


def _chain_config(cfg: RunConfig, checkpoint=None) -> tuple[ChainConfig, int, dict]:
    c = cfg.section("chain")
    m = cfg.section("model", required=False)
    scales = {k: float(c["proposal_scale"]) for k in ("a", "c", "beta", "phi_s", "phi_u")}
    try:
        config = ChainConfig(n_iter=int(c["n_iter"]), burn_in=int(c["burn_in"]), thin=int(c["thin"]),
                             seed=int(c["seed"]), proposal_scales=scales, adapt=bool(c["adapt"]),
                             adapt_window=int(c["adapt_window"]), fixed=dict(m["fixed"] or {}),
                             checkpoint_every=c["checkpoint_every"],
                             checkpoint_path=str(checkpoint) if checkpoint else None)
    except ValueError as exc:
        raise ConfigError(f"invalid chain section: {exc}") from exc
    return config, int(c["n_chains"]), m


def _fit(cfg: RunConfig, data, threads=1, monitor=None, resume=False, knots=None):
    priors = cfg.priors(data.p)
    knots = knots if knots is not None else _knots(cfg, data)
    outdir = cfg.output_dir
    config, n_chains, m = _chain_config(cfg, outdir / CHECKPOINT_NAME)
    sampler = Sampler(data, priors, knots, config)
    init = sampler.default_init(float(m["alpha"]), m["space_family"], m["time_family"])
    if n_chains > 1:
        if monitor is not None or resume:
            raise ConfigError("monitoring and resuming need chain.n_chains = 1")
        stores = run_chains(data, priors, knots, config, n_chains, threads, init)
    else:
        resume_from = outdir / CHECKPOINT_NAME if resume else None
        if resume and not resume_from.exists():
            raise ConfigError(f"no checkpoint to resume from at {resume_from}")
        stores = [run_chain(data, priors, knots, config, init=init, monitor=monitor,
                            resume_from=resume_from, sampler=sampler)]
    return stores, knots


def _scenario_spec(cfg: RunConfig) -> ScenarioSpec:
    s = cfg.section("simulate")
    try:
        truth = cfg.truth(default_truth(s["scenario"]))
        return ScenarioSpec(s["scenario"], int(s["n_sites"]), int(s["n_times"]), truth,
                            (tuple(s["lower"]), tuple(s["upper"])), int(s["seed"]))
    except ValueError as exc:
        raise ConfigError(f"invalid simulate section: {exc}") from exc


# -- commands ------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, args):
    spec = _scenario_spec(cfg)
    sim = generate_scenario(spec)
    out = cfg.output_dir
    io.write_dataset(sim.data, out / "dataset.csv")
    io.write_truth(sim.y_true, sim.data, out / "truth.csv")
    io.write_manifest(out, "simulate", cfg.raw, seed=spec.seed,
                      spec={"scenario": spec.scenario, "n_sites": spec.n1, "n_times": spec.n2,
                            "truth": spec.params.as_dict(), "domain": [list(b) for b in spec.domain]})
    logger.info("wrote %d grid cells to %s", sim.data.n, out)


def cmd_detrend(cfg: RunConfig, args):
    s = cfg.section("detrend")
    panel = read_panel(cfg.path("detrend", "panel"), int(s["season_length"]))
    st = SeasonalStandardizer(int(s["n_harmonics"]), int(s["season_length"])).fit(panel)
    std = st.transform(panel)
    data = to_dataset(std, metric=s["metric"], days=s["days"])
    out = cfg.output_dir
    io.write_dataset(data, out / "dataset.csv")
    io._write_csv(std, out / "standardized_panel.csv")
    io.write_json({"trend": st.trend_.to_dict(),
                   "scales": {str(k): float(v) for k, v in st.scales_.items()}}, out / "trend.json")
    io.write_manifest(out, "detrend", cfg.raw, n_sites=data.n1, n_times=data.n2, n_obs=data.n_obs)


def cmd_fit(cfg: RunConfig, args):
    data = _dataset(cfg)
    stores, knots = _fit(cfg, data, args.threads, resume=args.resume)
    out = cfg.output_dir
    io.write_knots(knots, out / "knots.csv")
    report = []
    for k, store in enumerate(stores):
        name = "draws.csv" if len(stores) == 1 else f"draws_chain{k + 1}.csv"
        io.write_draws(store, out / name)
        report.append(summarize_store(store))
    io.write_json(report[0] if len(report) == 1 else report, out / "diagnostics.json")
    io.write_manifest(out, "fit", cfg.raw, n_kept=[len(s) for s in stores])


def _targets(cfg: RunConfig, data):
    """Target coordinates and covariates from ``predict.targets`` (or every missing cell)."""
    p = cfg.section("predict")
    if p["targets"] is None:
        idx = data.missing_index
        if idx.size == 0:
            raise ConfigError("no predict.targets given and the dataset has no missing cells")
        return data.locations[idx], data.H[idx]
    df = pd.read_csv(cfg.path("predict", "targets"))
    coords = io._coord_names(data.d, data.distance_metric)
    missing = [c for c in coords + ["time"] if c not in df.columns]
    if missing:
        raise ConfigError(f"targets file lacks columns {missing}")
    hcols = [f"h{j + 1}" for j in range(data.p)]
    H0 = df[hcols].to_numpy(float) if all(c in df.columns for c in hcols) else None
    return df[coords + ["time"]].to_numpy(float), H0


def cmd_predict(cfg: RunConfig, args):
    data = _dataset(cfg)
    p = cfg.section("predict")
    out = cfg.output_dir
    draws_path = p["draws"] if p["draws"] is not None else out / "draws.csv"
    knots_path = p["knots"] if p["knots"] is not None else out / "knots.csv"
    for path in (draws_path, knots_path):
        if not Path(path).exists():
            raise ConfigError(f"missing fit output {path}; run 'fit' first or set predict.draws/knots")
    store = io.read_draws(draws_path)
    knots = io.read_knots(knots_path)
    X0, H0 = _targets(cfg, data)
    draws = predictive_draws(X0, store, data, knots, H0, seed=int(p["seed"]),
                             include_noise=bool(p["include_noise"]), n_warmup=int(p["n_warmup"]),
                             n_inner=int(p["n_inner"]))
    result = PredictionResult.from_draws(X0, draws)
    io.write_predictions(result, out / "predictions.csv", io._coord_names(data.d, data.distance_metric))
    io.write_manifest(out, "predict", cfg.raw, n_targets=len(result), n_draws=result.n_draws)


def cmd_cv(cfg: RunConfig, args):
    data = _dataset(cfg)
    h = cfg.section("holdout")
    fraction = float(h["fraction"])
    try:
        train, test = holdout_split(data, fraction, int(h["seed"]))
    except ValueError as exc:
        raise ConfigError(f"invalid holdout: {exc}") from exc
    truth_path = cfg.section("data")["truth"]
    if truth_path is not None:
        truth = io.read_truth(cfg.path("data", "truth"))[test]
        truth_kind = "noise-free truth"
    else:
        truth = data.z_full()[test]
        truth_kind = "held-out observations"
    include_noise = truth_path is None
    knots = _knots(cfg, train)
    monitor = PredictionMonitor(data.locations[test], train, knots, data.H[test], include_noise)
    stores, _ = _fit(cfg, train, args.threads, monitor=monitor, knots=knots)
    result = monitor.result()
    out = cfg.output_dir
    coords = io._coord_names(data.d, data.distance_metric)
    df = result.to_frame(coords)
    df.insert(len(coords) + 1, "true", truth)
    io._write_csv(df, out / "cv_predictions.csv")
    metrics = {"mspe": mspe(result.mean, truth), "alci": alci(result),
               "coverage": coverage(result, truth), "n_test": int(test.size),
               "n_train": int(train.n_obs), "compared_against": truth_kind,
               "acceptance": stores[0].acceptance_rates()}
    io.write_json(metrics, out / "cv_metrics.json")
    io.write_manifest(out, "cv", cfg.raw)
    logger.info("MSPE %.4f  ALCI %.4f  coverage %.3f", metrics["mspe"], metrics["alci"], metrics["coverage"])


def cmd_variogram(cfg: RunConfig, args):
    data = _dataset(cfg)
    v = cfg.section("variogram")
    days = [float(d) for d in np.atleast_1d(v["days"])]
    if v["bin_edges"] is not None:
        edges = np.asarray(v["bin_edges"], dtype=float)
    else:
        hmax = v["max_distance"] if v["max_distance"] is not None else float(data.site_dist.max()) / 2
        edges = np.linspace(0.0, float(hmax), int(v["n_bins"]) + 1)
    z = data.z_full().reshape(data.n1, data.n2)
    out = cfg.output_dir
    for day in days:
        j = np.flatnonzero(data.times == day)
        if j.size == 0:
            raise ConfigError(f"day {day:g} is not a time point of the dataset")
        centers, gamma, counts = empirical_variogram(data.sites, z[:, j[0]], edges, data.distance_metric)
        io._write_csv(pd.DataFrame({"bin_center_km": centers, "gamma": gamma, "pairs": counts}),
                      out / f"variogram_day{day:g}.csv")
    io.write_manifest(out, "variogram", cfg.raw, days=days, bin_edges=edges.tolist())


COMMANDS = {"simulate": cmd_simulate, "detrend": cmd_detrend, "fit": cmd_fit,
            "predict": cmd_predict, "cv": cmd_cv, "variogram": cmd_variogram}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aagp", description="Additive approximate GP toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", "-c", required=True, help="YAML run configuration")
        sp.add_argument("--threads", type=int, default=None,
                        help=f"worker and BLAS threads (default: config, then ${THREADS_ENV}, then 1)")
        sp.add_argument("--verbose", "-v", action="store_true")
        if name == "fit":
            sp.add_argument("--resume", action="store_true", help="continue from the last checkpoint")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = None
    try:
        cfg = RunConfig.load(args.config)
        args.threads = cfg.threads(args.threads)
        with threadpool_limits(args.threads):
            COMMANDS[args.command](cfg, args)
    except ChainAbort as exc:
        print(f"aagp: numerical abort: {exc}", file=sys.stderr)
        if cfg is not None and exc.state is not None:
            path = cfg.output_dir / "abort_state.pkl"
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "wb") as fh:
                pickle.dump(exc.state, fh)
            print(f"aagp: last valid state written to {path}", file=sys.stderr)
        return EXIT_NUMERIC
    except np.linalg.LinAlgError as exc:
        print(f"aagp: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"aagp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
