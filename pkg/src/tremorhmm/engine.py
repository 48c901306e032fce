"""Data-parallel likelihood backend built on segmented scaled matrix-chain products.

The likelihood delta' (Gamma P(x_0)) ... (Gamma P(x_N)) 1 is a chain of N+1
small matrix factors.  The engine evaluates it in three stages:

  1. batch emission evaluation: one (N+1, K) table of emission diagonals;
  2. per-record column rescaling of Gamma by that diagonal (fused into the
     kernels, so the N x K x K factor tensor is never materialized);
  3. the factor chain is cut into contiguous near-equal segments, each reduced
     independently to a scale-carrying product, and the per-segment results
     are combined in order on the host against delta.

Every partial product is renormalized by its largest entry on a fixed period
with the log magnitude kept in a scalar accumulator, so chains of any length
stay inside floating-point range.  All kernels are deterministic: the same
configuration and input give bitwise-identical output run to run.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from numba import njit

from .core import (
    HmmParams,
    Observation,
    ScaledMatrix,
    _emission_columns,
    observation_arrays,
)

# Shared-memory capacity bound for the accelerator-style kernels: two K x K
# float64 panels must fit in a 48 KiB tile, which caps K at 80(ish).
MAX_PARALLEL_STATES = 80

# Below this many flops a thread pool costs more than it saves.
_INLINE_FLOP_CUTOFF = 5e7

# np.dot dispatches to the BLAS gemm, which wins once K is big enough to
# amortize the call; hand-rolled loops win for tiny K.
_SMALL_K_CUTOFF = 16


@dataclass(frozen=True)
class EngineConfig:
    """Knobs of the parallel backend.

    workers: thread count for segment reduction (>= 1).
    segments: number of chain segments; None means one per worker.
    renorm_period: steps between max-entry renormalizations of a running
        product.  8 keeps entries far from the underflow cliff while skipping
        7 of every 8 max-scans.
    precision: "float64" or "float32" storage for the factor products.
    """

    workers: int = 1
    segments: Optional[int] = None
    renorm_period: int = 8
    precision: str = "float64"

    def __post_init__(self):
        if int(self.workers) != self.workers or self.workers < 1:
            raise ValueError("workers must be a positive integer")
        if self.segments is not None and (int(self.segments) != self.segments or self.segments < 1):
            raise ValueError("segments must be a positive integer when given")
        if int(self.renorm_period) != self.renorm_period or self.renorm_period < 1:
            raise ValueError("renorm_period must be a positive integer")
        if self.precision not in ("float64", "float32"):
            raise ValueError("precision must be 'float64' or 'float32'")

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float64 if self.precision == "float64" else np.float32)

    def resolved_segments(self) -> int:
        return self.workers if self.segments is None else self.segments


@dataclass(frozen=True)
class SegmentProduct:
    """Scale-carrying product of the factor sub-chain with indices [lo, hi)."""

    product: ScaledMatrix
    lo: int
    hi: int

    def __post_init__(self):
        if not (0 <= self.lo < self.hi):
            raise ValueError("segment range must be non-empty with 0 <= lo < hi")


def segment_bounds(n: int, segments: int) -> List[tuple]:
    """Cut range(n) into `segments` contiguous blocks with sizes differing by
    at most one, earlier blocks taking the remainder."""
    if n < 1:
        raise ValueError("n must be positive")
    if not 1 <= segments <= n:
        raise ValueError("segments must lie in [1, n]")
    base, rem = divmod(n, segments)
    bounds = []
    lo = 0
    for i in range(segments):
        hi = lo + base + (1 if i < rem else 0)
        bounds.append((lo, hi))
        lo = hi
    return bounds


# ---------------------------------------------------------------------------
# Kernels.  Fused variants build each factor as Gamma * diag(e_t) on the fly
# from the emission table; factor variants reduce an explicit stack of
# matrices.  *_small uses hand loops, *_blas routes the matmul through
# np.dot.  All renormalize by the running max every `period` steps and once
# more at the end, so the returned matrix has max entry exactly 1 (or is all
# zero after a total underflow, in which case the caller reports collapse).
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _finish(m, log_scale):
    mx = m.max()
    if mx > 0.0 and mx != 1.0:
        log_scale += math.log(np.float64(mx))
        m /= mx
    return m, log_scale


@njit(cache=True, nogil=True)
def _chain_fused_blas(gamma, ediag, lo, hi, period):
    k = gamma.shape[0]
    m = gamma * ediag[lo]
    log_scale = 0.0
    since = 0
    for t in range(lo + 1, hi):
        m = np.dot(m, gamma)
        for r in range(k):
            for c in range(k):
                m[r, c] *= ediag[t, c]
        since += 1
        if since == period:
            since = 0
            mx = m.max()
            if mx > 0.0:
                log_scale += math.log(np.float64(mx))
                m /= mx
    return _finish(m, log_scale)


@njit(cache=True, nogil=True)
def _chain_fused_small(gamma, ediag, lo, hi, period):
    k = gamma.shape[0]
    m = gamma * ediag[lo]
    tmp = np.empty_like(m)
    log_scale = 0.0
    since = 0
    for t in range(lo + 1, hi):
        for r in range(k):
            for c in range(k):
                tmp[r, c] = 0.0
            for i in range(k):
                a = m[r, i]
                for c in range(k):
                    tmp[r, c] += a * gamma[i, c]
        for r in range(k):
            for c in range(k):
                m[r, c] = tmp[r, c] * ediag[t, c]
        since += 1
        if since == period:
            since = 0
            mx = m.max()
            if mx > 0.0:
                log_scale += math.log(np.float64(mx))
                m /= mx
    return _finish(m, log_scale)


@njit(cache=True, nogil=True)
def _chain_factors_blas(factors, lo, hi, period):
    m = factors[lo].copy()
    log_scale = 0.0
    since = 0
    for t in range(lo + 1, hi):
        m = np.dot(m, factors[t])
        since += 1
        if since == period:
            since = 0
            mx = m.max()
            if mx > 0.0:
                log_scale += math.log(np.float64(mx))
                m /= mx
    return _finish(m, log_scale)


@njit(cache=True, nogil=True)
def _chain_factors_small(factors, lo, hi, period):
    k = factors.shape[1]
    m = factors[lo].copy()
    tmp = np.empty_like(m)
    log_scale = 0.0
    since = 0
    for t in range(lo + 1, hi):
        for r in range(k):
            for c in range(k):
                tmp[r, c] = 0.0
            for i in range(k):
                a = m[r, i]
                for c in range(k):
                    tmp[r, c] += a * factors[t, i, c]
        m, tmp = tmp, m
        since += 1
        if since == period:
            since = 0
            mx = m.max()
            if mx > 0.0:
                log_scale += math.log(np.float64(mx))
                m /= mx
    return _finish(m, log_scale)


def _run_segments(task, bounds, workers, total_flops) -> list:
    """Reduce all segments, inline when the job is too small to share."""
    if workers > 1 and len(bounds) > 1 and total_flops > _INLINE_FLOP_CUTOFF:
        # kernels are nogil, so plain threads scale
        with ThreadPoolExecutor(max_workers=min(workers, len(bounds))) as pool:
            return list(pool.map(lambda b: task(b[0], b[1]), bounds))
    return [task(lo, hi) for lo, hi in bounds]


def batch_emissions(params: HmmParams, obs: Sequence[Observation]) -> np.ndarray:
    """Stage 1: the (N, K) table of emission diagonals for a whole sequence.

    Row t equals emission_diagonal(params, obs[t]) bit for bit; the batch
    shape merely exposes the elementwise work to vectorized hardware.
    """
    if len(obs) == 0:
        raise ValueError("observation sequence is empty")
    present, lon, lat = observation_arrays(obs)
    return _emission_columns(params, present, lon, lat)


def scale_by_emission(gamma: np.ndarray, diag: np.ndarray) -> np.ndarray:
    """Stage 2 on one record: Gamma diag(e), i.e. column j of Gamma scaled by e_j."""
    gamma = np.asarray(gamma, dtype=np.float64)
    diag = np.asarray(diag, dtype=np.float64)
    if gamma.ndim != 2 or gamma.shape[0] != gamma.shape[1]:
        raise ValueError("gamma must be square")
    if diag.shape != (gamma.shape[0],):
        raise ValueError("diagonal length must match gamma")
    if not np.all(np.isfinite(diag)) or np.any(diag < 0.0):
        raise ValueError("emission diagonal must be finite and nonnegative")
    return gamma * diag


def segment_chain_product(factors, cfg: EngineConfig) -> List[SegmentProduct]:
    """Stage 3 on an explicit factor stack: reduce each contiguous segment of
    the chain to a normalized scale-carrying product.

    factors is an (n, K, K) stack (or sequence of K x K matrices) of
    nonnegative matrices; the products returned cover [0, n) in order.
    """
    arr = np.ascontiguousarray(factors, dtype=cfg.dtype)
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
        raise ValueError("factors must be a stack of square matrices")
    n, k = arr.shape[0], arr.shape[1]
    if n < 1:
        raise ValueError("factor chain is empty")
    if k > MAX_PARALLEL_STATES:
        raise ValueError(f"parallel engine supports at most {MAX_PARALLEL_STATES} states, got {k}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0):
        raise ValueError("factors must be finite and nonnegative")
    segments = cfg.resolved_segments()
    if segments > n:
        raise ValueError(f"cannot cut a chain of {n} factors into {segments} segments")
    bounds = segment_bounds(n, segments)
    kernel = _chain_factors_small if k < _SMALL_K_CUTOFF else _chain_factors_blas
    period = cfg.renorm_period

    def task(lo, hi):
        m, ls = kernel(arr, lo, hi, period)
        return ScaledMatrix(m, ls)

    flops = 2.0 * max(n - segments, 1) * k ** 3
    mats = _run_segments(task, bounds, cfg.workers, flops)
    return [SegmentProduct(m, lo, hi) for m, (lo, hi) in zip(mats, bounds)]


def combine_segments(delta: np.ndarray, parts: Sequence[SegmentProduct]) -> float:
    """Host finish: fold the ordered segment products into delta and return the
    log of the final vector sum.

    Shifts each partial result back onto a common scale through the log
    accumulators, renormalizing the running vector between folds.  Raises
    RuntimeError if the vector collapses to exactly zero (the data are
    impossible under the parameters at working precision).
    """
    if len(parts) == 0:
        raise ValueError("no segment products to combine")
    order = sorted(parts, key=lambda s: s.lo)
    for a, b in zip(order, order[1:]):
        if a.hi != b.lo:
            raise ValueError("segment products must tile the chain contiguously")
    v = np.asarray(delta, dtype=np.float64).copy()
    acc = 0.0
    for part in order:
        v = v @ part.product.m
        acc += part.product.log_scale
        mx = v.max()
        if mx <= 0.0:
            raise RuntimeError(
                "running state vector collapsed to zero while combining segments")
        acc += math.log(float(mx))
        v /= mx
    return math.log(float(v.sum())) + acc


def _parallel_loglik_arrays(params: HmmParams, present: np.ndarray, lon: np.ndarray,
                            lat: np.ndarray, cfg: EngineConfig) -> float:
    n = present.size
    if n == 0:
        raise ValueError("observation sequence is empty")
    k = params.K
    if k > MAX_PARALLEL_STATES:
        raise ValueError(f"parallel engine supports at most {MAX_PARALLEL_STATES} states, got {k}")
    ediag = _emission_columns(params, present, lon, lat)
    gamma = params.gamma
    if cfg.dtype == np.float32:
        ediag = ediag.astype(np.float32)
        gamma = gamma.astype(np.float32)
    else:
        gamma = np.ascontiguousarray(gamma)
    segments = min(cfg.resolved_segments(), n)
    bounds = segment_bounds(n, segments)
    kernel = _chain_fused_small if k < _SMALL_K_CUTOFF else _chain_fused_blas
    period = cfg.renorm_period
    task = lambda lo, hi: kernel(gamma, ediag, lo, hi, period)
    flops = 2.0 * max(n - segments, 1) * k ** 3
    results = _run_segments(task, bounds, cfg.workers, flops)
    parts = [SegmentProduct(ScaledMatrix(m, ls), lo, hi)
             for (m, ls), (lo, hi) in zip(results, bounds)]
    return combine_segments(params.delta, parts)


def parallel_loglik(params: HmmParams, obs: Sequence[Observation],
                    cfg: EngineConfig) -> float:
    """Log-likelihood through the three-stage segmented engine.

    Matches forward_loglik to floating-point accuracy for any segment count;
    with one segment and one worker the arithmetic path is nearly identical to
    the serial recursion.  Rejects K above MAX_PARALLEL_STATES.  When the
    requested segment count exceeds the sequence length it is clamped to one
    segment per record.
    """
    present, lon, lat = observation_arrays(obs)
    return _parallel_loglik_arrays(params, present, lon, lat, cfg)
