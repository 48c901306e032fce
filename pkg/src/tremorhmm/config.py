"""Run configuration: one YAML file covering model, engine, MCMC and forecast.

Every key has a default, so an empty file (or no file) is a valid
configuration; unknown keys are rejected rather than silently ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import yaml

from .bayes import McmcConfig, PriorSpec, StepSizes, moment_match_gamma
from .engine import EngineConfig
from .simforecast import ForecastConfig

_DELTA_MODES = ("stationary", "uniform")
_BACKENDS = ("serial", "parallel")


@dataclass
class RunConfig:
    k: int = 2
    backend: str = "parallel"
    delta_mode: str = "stationary"
    prior: PriorSpec = field(default_factory=lambda: PriorSpec.default_for(2))
    engine: EngineConfig = field(default_factory=EngineConfig)
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    forecast: ForecastConfig = field(default_factory=ForecastConfig)

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValueError("k must be a positive integer")
        if self.backend not in _BACKENDS:
            raise ValueError(f"backend must be one of {_BACKENDS}")
        if self.delta_mode not in _DELTA_MODES:
            raise ValueError(f"delta mode must be one of {_DELTA_MODES}")


def _take(section: dict, key, default):
    return section.pop(key, default)


def _require_empty(section: dict, where: str):
    if section:
        raise ValueError(f"unknown keys in {where}: {sorted(section)}")


def _parse_prior(section: dict, k: int) -> PriorSpec:
    base = PriorSpec.default_for(k)
    alpha = float(_take(section, "dirichlet_alpha", base.dirichlet_alpha))
    p_low = base.p_low
    p_high = base.p_high
    if "p_low" in section:
        sub = dict(section.pop("p_low"))
        p_low = moment_match_gamma(float(sub.pop("mean")), float(sub.pop("variance")))
        _require_empty(sub, "prior.p_low")
    if "p_high" in section:
        sub = dict(section.pop("p_high"))
        p_high = moment_match_gamma(float(sub.pop("mean")), float(sub.pop("variance")))
        _require_empty(sub, "prior.p_high")
    mu_bounds = tuple(float(v) for v in _take(section, "mu_bounds", base.mu_bounds))
    if len(mu_bounds) != 4:
        raise ValueError("prior.mu_bounds must have 4 entries")
    iw_df = _take(section, "iw_df", None)
    iw_df = base.iw_df if iw_df is None else float(iw_df)
    iw_scale = np.asarray(_take(section, "iw_scale", base.iw_scale), dtype=np.float64)
    _require_empty(section, "prior")
    return PriorSpec(dirichlet_alpha=alpha, p_low=p_low, p_high=p_high,
                     mu_bounds=mu_bounds, iw_df=iw_df, iw_scale=iw_scale)


def _parse_engine(section: dict) -> EngineConfig:
    cfg = EngineConfig(
        workers=int(_take(section, "workers", 1)),
        segments=(lambda s: None if s is None else int(s))(_take(section, "segments", None)),
        renorm_period=int(_take(section, "renorm_period", 8)),
        precision=str(_take(section, "precision", "float64")),
    )
    _require_empty(section, "engine")
    return cfg


def _parse_mcmc(section: dict) -> McmcConfig:
    steps = StepSizes()
    if "steps" in section:
        sub = dict(section.pop("steps"))
        steps = StepSizes(
            gamma=float(_take(sub, "gamma", steps.gamma)),
            p=float(_take(sub, "p", steps.p)),
            mu=float(_take(sub, "mu", steps.mu)),
            sigma=float(_take(sub, "sigma", steps.sigma)),
        )
        _require_empty(sub, "mcmc.steps")
    cfg = McmcConfig(
        iterations=int(_take(section, "iterations", 50_000)),
        thin=int(_take(section, "thin", 10)),
        seed=int(_take(section, "seed", 0)),
        steps=steps,
    )
    _require_empty(section, "mcmc")
    return cfg


def _parse_forecast(section: dict) -> ForecastConfig:
    cfg = ForecastConfig(
        horizon=int(_take(section, "horizon", 120)),
        sample_stride=int(_take(section, "sample_stride", 1000)),
        max_draws=int(_take(section, "max_draws", 500)),
        seed=int(_take(section, "seed", 0)),
    )
    _require_empty(section, "forecast")
    return cfg


def config_from_mapping(doc: Optional[dict]) -> RunConfig:
    doc = dict(doc or {})
    k = int(_take(doc, "k", 2))
    backend = str(_take(doc, "backend", "parallel"))
    delta_mode = str(_take(doc, "delta", "stationary"))
    prior = _parse_prior(dict(_take(doc, "prior", {}) or {}), k)
    engine = _parse_engine(dict(_take(doc, "engine", {}) or {}))
    mcmc = _parse_mcmc(dict(_take(doc, "mcmc", {}) or {}))
    forecast = _parse_forecast(dict(_take(doc, "forecast", {}) or {}))
    _require_empty(doc, "config")
    return RunConfig(k=k, backend=backend, delta_mode=delta_mode, prior=prior,
                     engine=engine, mcmc=mcmc, forecast=forecast)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ValueError("config file must contain a mapping")
    return config_from_mapping(doc)
