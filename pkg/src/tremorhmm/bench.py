"""Timing harness comparing the serial and parallel likelihood backends.

Two sweeps on synthetic data drawn from the prior: sequence length
N in {100, 1000, 10000, 100000} at K = 25, then state count
K in {5, 10, ..., 50} at N = 100000.  Each cell is timed for 5 repetitions
per backend around the likelihood call only (simulation, emission caching by
the caller, and JIT warmup are excluded), yielding
(4 + 10) cells x 2 backends x 5 reps = 140 rows of (backend, K, N, rep, millis).
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .bayes import PriorSpec, sample_prior_params
from .core import forward_loglik
from .engine import EngineConfig, parallel_loglik
from .simforecast import simulate_path

N_SWEEP = (100, 1_000, 10_000, 100_000)
N_SWEEP_K = 25
K_SWEEP = tuple(range(5, 55, 5))
K_SWEEP_N = 100_000
REPS = 5


@dataclass(frozen=True)
class BenchRow:
    backend: str
    k: int
    n: int
    rep: int
    millis: float


def _cells(n_sweep, k_sweep) -> List[tuple]:
    cells = [(N_SWEEP_K, n) for n in n_sweep]
    cells += [(k, K_SWEEP_N) for k in k_sweep]
    return cells


def run_benchmark(engine: EngineConfig, seed: int = 0, *,
                  n_sweep: Sequence[int] = N_SWEEP,
                  k_sweep: Sequence[int] = K_SWEEP,
                  reps: int = REPS,
                  progress=None) -> List[BenchRow]:
    """Run both sweeps and return one row per (cell, backend, repetition).

    Data for each cell are simulated from a prior draw with that K; delta is
    held uniform because sparse-Dirichlet transition draws are routinely too
    close to reducible for the stationary solver.  Kernels are warmed on a
    short chain before any timer starts.
    """
    rows: List[BenchRow] = []
    rng = np.random.default_rng(seed)
    for k, n in _cells(n_sweep, k_sweep):
        prior = PriorSpec.default_for(k)
        params = sample_prior_params(k, prior, rng, delta_mode="uniform")
        _, obs = simulate_path(params, n, rng)
        # warm the JIT specializations for this K branch before timing
        warm = obs[: min(64, n)]
        parallel_loglik(params, warm, engine)
        forward_loglik(params, warm)
        if progress is not None:
            progress(f"K={k} N={n}")
        for backend in ("serial", "parallel"):
            for rep in range(1, reps + 1):
                t0 = time.perf_counter()
                if backend == "serial":
                    forward_loglik(params, obs)
                else:
                    parallel_loglik(params, obs, engine)
                dt = (time.perf_counter() - t0) * 1e3
                rows.append(BenchRow(backend, k, n, rep, dt))
    return rows


def write_rows(rows: Sequence[BenchRow], fh) -> None:
    fh.write("backend,K,N,rep,millis\n")
    for r in rows:
        fh.write(f"{r.backend},{r.k},{r.n},{r.rep},{r.millis:.3f}\n")


def median_summary(rows: Sequence[BenchRow]) -> List[tuple]:
    """(backend, K, N, median_millis) per cell, in first-seen order."""
    seen = {}
    for r in rows:
        seen.setdefault((r.backend, r.k, r.n), []).append(r.millis)
    return [(b, k, n, statistics.median(v)) for (b, k, n), v in seen.items()]
