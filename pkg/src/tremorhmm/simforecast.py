"""Path simulation and posterior forecasting.

simulate_path draws a hidden state walk and the corresponding zero-inflated
emissions.  forecast replays that simulator over parameter vectors thinned
from an MCMC trace, giving a posterior-predictive ensemble; forecast_summary
bins the ensemble into per-step histograms over a fixed rectangle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .bayes import Trace, params_from_vector
from .core import HmmParams, Observation, observation_arrays


def simulate_path(params: HmmParams, n: int, rng: np.random.Generator,
                  initial: Optional[np.ndarray] = None
                  ) -> Tuple[np.ndarray, List[Observation]]:
    """Simulate n steps of the model: the hidden walk, then the emissions.

    The first state is drawn from `initial` (params.delta when omitted) and
    each later state from the transition row of its predecessor; step t emits
    a located event with probability p of its state, at mu + L z with z
    standard normal.  Randomness is consumed in a fixed order (state uniforms,
    event uniforms, location noise) so a seeded generator reproduces the path
    exactly.
    """
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    n = int(n)
    k = params.K
    start = params.delta if initial is None else np.asarray(initial, dtype=np.float64)
    if start.shape != (k,) or np.any(start < 0.0) or abs(start.sum() - 1.0) > 1e-9:
        raise ValueError("initial distribution must be a probability vector of length K")
    cum_start = np.cumsum(start)
    cum_rows = np.cumsum(params.gamma, axis=1)

    u_state = rng.random(n)
    u_event = rng.random(n)
    z = rng.standard_normal((n, 2))

    states = np.empty(n, dtype=np.int64)
    s = min(int(np.searchsorted(cum_start, u_state[0], side="right")), k - 1)
    states[0] = s
    for t in range(1, n):
        s = min(int(np.searchsorted(cum_rows[s], u_state[t], side="right")), k - 1)
        states[t] = s

    present = u_event < params._p[states]
    xy = np.zeros((n, 2))
    for j, st in enumerate(params.states):
        idx = present & (states == j)
        if idx.any():
            xy[idx] = st.mu + z[idx] @ st.chol.T
    obs = [Observation((xy[t, 0], xy[t, 1])) if present[t] else Observation(None)
           for t in range(n)]
    return states, obs


@dataclass(frozen=True)
class ForecastConfig:
    """Posterior-predictive forecast settings.

    horizon: steps simulated per draw; sample_stride: keep every stride-th
    trace sample; max_draws: cap on the ensemble size; seed feeds the
    simulator when the caller does not pass a generator.
    """

    horizon: int = 120
    sample_stride: int = 1000
    max_draws: int = 500
    seed: int = 0

    def __post_init__(self):
        for name in ("horizon", "sample_stride", "max_draws"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer")


@dataclass(frozen=True)
class ForecastDraw:
    """One ensemble member: the trace row it came from and its simulated path."""

    source_index: int
    observations: Tuple[Observation, ...]

    def __post_init__(self):
        object.__setattr__(self, "observations", tuple(self.observations))


def _filtered_next_state_dist(params: HmmParams, history: Sequence[Observation]
                              ) -> np.ndarray:
    """Distribution of the state one step past the end of `history`.

    Runs the normalized forward recursion to the filtered distribution of the
    final state, then applies one transition.
    """
    from .core import _emission_columns

    present, lon, lat = observation_arrays(history)
    if present.size == 0:
        raise ValueError("history is empty")
    ediag = _emission_columns(params, present, lon, lat)
    v = params.delta.copy()
    for t in range(present.size):
        v = (v @ params.gamma) * ediag[t]
        s = v.sum()
        if s <= 0.0:
            raise RuntimeError("history has zero likelihood under these parameters")
        v /= s
    v = v @ params.gamma
    return v / v.sum()


def forecast(trace: Trace, cfg: ForecastConfig, rng: np.random.Generator, *,
             history: Optional[Sequence[Observation]] = None,
             delta_mode: str = "stationary") -> List[ForecastDraw]:
    """Posterior-predictive ensemble: simulate cfg.horizon steps from every
    sample_stride-th trace row, at most max_draws of them.

    Draw i uses trace row (i + 1) * sample_stride - 1, so the ensemble size is
    exactly min(len(trace) // sample_stride, max_draws); a stride longer than
    the trace is an error.  When `history` is given each path starts from the
    filtered state distribution continued one step past the history; otherwise
    it starts from the reconstructed delta.
    """
    count = min(len(trace) // cfg.sample_stride, cfg.max_draws)
    if count == 0:
        raise ValueError(
            f"sample_stride {cfg.sample_stride} exceeds the trace length {len(trace)}")
    draws = []
    for i in range(count):
        idx = (i + 1) * cfg.sample_stride - 1
        params = params_from_vector(trace.k, trace.params[idx], delta_mode=delta_mode)
        initial = None
        if history is not None:
            initial = _filtered_next_state_dist(params, history)
        _, obs = simulate_path(params, cfg.horizon, rng, initial=initial)
        draws.append(ForecastDraw(source_index=idx, observations=obs))
    return draws


def forecast_summary(draws: Sequence[ForecastDraw], bins: int,
                     rect: Tuple[float, float, float, float]
                     ) -> List[Tuple[int, str, float, float, int]]:
    """Per-step marginal histograms of the ensemble, one row per (step, axis, bin).

    Counts located events only, clamping coordinates into the rectangle
    (lon_min, lon_max, lat_min, lat_max) so every event lands in some bin; a
    row is (step, axis, bin_lo, bin_hi, count) and the counts of one step and
    axis sum to the number of ensemble members with an event at that step.
    """
    if int(bins) != bins or bins < 1:
        raise ValueError("bins must be a positive integer")
    lon_min, lon_max, lat_min, lat_max = (float(v) for v in rect)
    if not (lon_min < lon_max and lat_min < lat_max):
        raise ValueError("rectangle must have positive area")
    if not draws:
        return []
    horizon = len(draws[0].observations)
    if any(len(d.observations) != horizon for d in draws):
        raise ValueError("all draws must share one horizon")
    lon_edges = np.linspace(lon_min, lon_max, bins + 1)
    lat_edges = np.linspace(lat_min, lat_max, bins + 1)
    rows: List[Tuple[int, str, float, float, int]] = []
    for t in range(horizon):
        pts = [d.observations[t].value for d in draws if d.observations[t].present]
        if pts:
            arr = np.asarray(pts, dtype=np.float64)
            lon_counts, _ = np.histogram(np.clip(arr[:, 0], lon_min, lon_max), lon_edges)
            lat_counts, _ = np.histogram(np.clip(arr[:, 1], lat_min, lat_max), lat_edges)
        else:
            lon_counts = np.zeros(bins, dtype=np.int64)
            lat_counts = np.zeros(bins, dtype=np.int64)
        for b in range(bins):
            rows.append((t, "lon", float(lon_edges[b]), float(lon_edges[b + 1]),
                         int(lon_counts[b])))
        for b in range(bins):
            rows.append((t, "lat", float(lat_edges[b]), float(lat_edges[b + 1]),
                         int(lat_counts[b])))
    return rows
