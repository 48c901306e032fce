"""Command-line interface.

Subcommands: loglik, bench, fit, simulate, forecast.  Exit codes: 0 on
success, 1 for bad input (usage, files, configuration), 2 for runtime
failures such as a non-converging chain initialization.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from typing import List, Optional

import numpy as np
import yaml

from . import bench as bench_mod
from .bayes import (
    McmcConfig,
    Trace,
    effective_sample_size,
    params_from_vector,
    params_to_vector,
    run_chain,
    sample_prior_params,
)
from .config import RunConfig, config_from_mapping, load_config
from .core import HmmParams, forward_loglik
from .dataio import (
    Dataset,
    load_dataset,
    read_trace,
    save_dataset,
    write_forecast_summary,
    write_trace,
)
from .engine import parallel_loglik
from .simforecast import ForecastConfig, forecast, forecast_summary, simulate_path


class _UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage errors; our contract reserves 2
    # for runtime failures, so route them through the validation path instead
    def error(self, message):
        raise _UsageError(message)


def _load_run_config(args) -> RunConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = config_from_mapping({})
    return cfg


def _save_params(params: HmmParams, path) -> None:
    doc = {
        "k": params.K,
        "gamma": params.gamma.tolist(),
        "delta": params.delta.tolist(),
        "p": [st.p for st in params.states],
        "mu": [st.mu.tolist() for st in params.states],
        "sigma": [st.sigma.tolist() for st in params.states],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _load_params(path) -> HmmParams:
    with open(path) as fh:
        doc = json.load(fh)
    from .core import StateEmission

    states = tuple(
        StateEmission(p, np.asarray(mu), np.asarray(sig))
        for p, mu, sig in zip(doc["p"], doc["mu"], doc["sigma"]))
    return HmmParams(gamma=np.asarray(doc["gamma"]),
                     delta=np.asarray(doc["delta"]), states=states)


def _loglik_backend(cfg: RunConfig):
    if cfg.backend == "serial":
        return lambda params, obs: forward_loglik(params, obs)
    return lambda params, obs: parallel_loglik(params, obs, cfg.engine)


def cmd_loglik(args) -> int:
    cfg = _load_run_config(args)
    data = load_dataset(args.dataset)
    if args.params:
        params = _load_params(args.params)
    else:
        # no parameter file: evaluate a prior draw, reproducible via the seed
        rng = np.random.default_rng(cfg.mcmc.seed)
        params = sample_prior_params(cfg.k, cfg.prior, rng, delta_mode=cfg.delta_mode)
    fn = _loglik_backend(cfg)
    fn(params, data.observations[: min(16, len(data))])  # warm the JIT
    t0 = time.perf_counter()
    value = fn(params, data.observations)
    millis = (time.perf_counter() - t0) * 1e3
    print("loglik,millis")
    print(f"{value:.15g},{millis:.3f}")
    return 0


def cmd_bench(args) -> int:
    cfg = _load_run_config(args)
    rows = bench_mod.run_benchmark(cfg.engine, seed=cfg.mcmc.seed,
                                   progress=lambda msg: print(msg, file=sys.stderr))
    if args.out:
        with open(args.out, "w") as fh:
            bench_mod.write_rows(rows, fh)
    else:
        bench_mod.write_rows(rows, sys.stdout)
    for backend, k, n, med in bench_mod.median_summary(rows):
        print(f"median {backend} K={k} N={n}: {med:.3f} ms", file=sys.stderr)
    return 0


def cmd_fit(args) -> int:
    cfg = _load_run_config(args)
    data = load_dataset(args.dataset)
    loglik_fn = None
    if cfg.backend == "serial":
        from .core import _forward_loglik_arrays, observation_arrays

        present, lon, lat = observation_arrays(data.observations)
        loglik_fn = lambda p: _forward_loglik_arrays(p, present, lon, lat, 1)
    trace = run_chain(cfg.k, data.observations, cfg.prior, cfg.mcmc, cfg.engine,
                      delta_mode=cfg.delta_mode, loglik_fn=loglik_fn)
    write_trace(trace, args.trace_out)
    rate = trace.stats.get("acceptance_rate", float("nan"))
    print(f"kept {len(trace)} samples, acceptance rate {rate:.3f}", file=sys.stderr)
    if args.summary_out:
        _write_fit_summary(trace, args.summary_out)
    return 0


def _write_fit_summary(trace: Trace, path) -> None:
    with open(path, "w") as fh:
        fh.write("parameter,mean,sd,ess\n")
        series = [("log_posterior", trace.log_posterior),
                  ("log_likelihood", trace.log_likelihood),
                  ("log_prior", trace.log_prior)]
        series += [(name, trace.params[:, i])
                   for i, name in enumerate(trace.param_names)]
        for name, col in series:
            ess = effective_sample_size(col) if len(col) >= 10 else float("nan")
            fh.write(f"{name},{col.mean():.10g},{col.std(ddof=1):.10g},{ess:.2f}\n")


def cmd_simulate(args) -> int:
    cfg = _load_run_config(args)
    rng = np.random.default_rng(args.seed if args.seed is not None else cfg.mcmc.seed)
    if args.params:
        params = _load_params(args.params)
    else:
        params = sample_prior_params(cfg.k, cfg.prior, rng, delta_mode=cfg.delta_mode)
    _, obs = simulate_path(params, args.n, rng)
    start = np.datetime64("2020-01-01T00:00:00")
    stamps = tuple(str(start + np.timedelta64(i, "h")) for i in range(args.n))
    save_dataset(Dataset(stamps, tuple(obs)), args.out)
    if args.params_out:
        _save_params(params, args.params_out)
    return 0


def cmd_forecast(args) -> int:
    cfg = _load_run_config(args)
    trace = read_trace(args.trace)
    fcfg = cfg.forecast
    rng = np.random.default_rng(args.seed if args.seed is not None else fcfg.seed)
    history = None
    if args.data:
        history = load_dataset(args.data).observations
    draws = forecast(trace, fcfg, rng, history=history, delta_mode=cfg.delta_mode)
    rows = forecast_summary(draws, args.bins, cfg.prior.mu_bounds)
    write_forecast_summary(rows, args.out)
    print(f"{len(draws)} draws x {fcfg.horizon} steps", file=sys.stderr)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="tremorhmm",
                     description="Zero-inflated planar-Gaussian HMM toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("loglik", help="log-likelihood of a dataset")
    p.add_argument("dataset")
    p.add_argument("--config")
    p.add_argument("--params", help="JSON parameter file (defaults to a seeded prior draw)")
    p.set_defaults(func=cmd_loglik)

    p = sub.add_parser("bench", help="serial vs parallel timing sweep")
    p.add_argument("--config")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("fit", help="MCMC posterior sampling")
    p.add_argument("dataset")
    p.add_argument("--config")
    p.add_argument("--trace-out", default="trace.tsv")
    p.add_argument("--summary-out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="draw a synthetic dataset")
    p.add_argument("--config")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int)
    p.add_argument("--params", help="simulate from this JSON parameter file")
    p.add_argument("--out", default="dataset.csv")
    p.add_argument("--params-out", help="write the generating parameters as JSON")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("forecast", help="posterior-predictive forecast from a trace")
    p.add_argument("trace")
    p.add_argument("--config")
    p.add_argument("--data", help="observed history; start paths from its filtered state")
    p.add_argument("--seed", type=int)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--out", default="forecast.csv")
    p.set_defaults(func=cmd_forecast)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ValueError, OSError, KeyError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RuntimeError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
