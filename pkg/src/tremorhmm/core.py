"""Core types and the serial likelihood path for a zero-inflated planar-Gaussian HMM.

Each hidden state either stays quiet for the hour or emits a point in the
plane drawn from a state-specific bivariate normal.  The likelihood of an
observation sequence is

    delta' (Gamma P(x_0)) (Gamma P(x_1)) ... (Gamma P(x_N)) 1

where Gamma is the transition matrix, delta the initial distribution over the
state preceding the first record, and P(x) the diagonal emission matrix with
entries p_k phi(x | mu_k, sigma_k) for a located event and 1 - p_k for a
quiet hour.  This module provides the sequential scaled recursion used as the
reference backend, a path-enumeration oracle for tiny instances, and the
stationary-distribution solver used to tie delta to Gamma.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from numba import njit

LOG_2PI = math.log(2.0 * math.pi)

# Convergence policy for the stationary-distribution power iteration.
STATIONARY_TOL = 1e-12
STATIONARY_MAX_ITER = 100_000


def _chol2(sigma: np.ndarray) -> Tuple[float, float, float]:
    """Lower Cholesky factor of a 2x2 SPD matrix as (l00, l10, l11).

    Raises ValueError when the matrix is not symmetric positive definite.
    """
    s00 = float(sigma[0, 0])
    s10 = float(sigma[1, 0])
    s01 = float(sigma[0, 1])
    if not (math.isfinite(s00) and math.isfinite(s10) and math.isfinite(s01)
            and math.isfinite(float(sigma[1, 1]))):
        raise ValueError("covariance entries must be finite")
    if abs(s01 - s10) > 1e-12 * max(1.0, abs(s01), abs(s10)):
        raise ValueError("covariance matrix must be symmetric")
    if s00 <= 0.0:
        raise ValueError("covariance matrix is not positive definite")
    l00 = math.sqrt(s00)
    l10 = s10 / l00
    rem = float(sigma[1, 1]) - l10 * l10
    if rem <= 0.0:
        raise ValueError("covariance matrix is not positive definite")
    return l00, l10, math.sqrt(rem)


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Observation:
    """One hourly record: a located event at (lon, lat), or None for a quiet hour.

    Coordinates are present or absent together; a half-specified point cannot
    be constructed.
    """

    value: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        if self.value is not None:
            lon, lat = self.value
            lon = float(lon)
            lat = float(lat)
            if not (math.isfinite(lon) and math.isfinite(lat)):
                raise ValueError("observation coordinates must be finite")
            object.__setattr__(self, "value", (lon, lat))

    @property
    def present(self) -> bool:
        return self.value is not None


@dataclass(frozen=True)
class StateEmission:
    """Emission law of one hidden state.

    p is the per-hour probability of an event (strictly inside (0, 1): the
    likelihood needs both branches of the emission matrix to stay positive),
    mu the mean location and sigma the 2x2 covariance of the located event.
    The lower Cholesky factor and log-determinant of sigma are computed once
    here and reused by every density evaluation.
    """

    p: float
    mu: np.ndarray
    sigma: np.ndarray
    chol: np.ndarray = field(init=False, repr=False, compare=False)
    log_det: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        p = float(self.p)
        if not (math.isfinite(p) and 0.0 < p < 1.0):
            raise ValueError("event probability must lie strictly in (0, 1)")
        mu = np.asarray(self.mu, dtype=np.float64)
        if mu.shape != (2,) or not np.all(np.isfinite(mu)):
            raise ValueError("mu must be a finite length-2 vector")
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if sigma.shape != (2, 2):
            raise ValueError("sigma must be a 2x2 matrix")
        l00, l10, l11 = _chol2(sigma)
        chol = np.array([[l00, 0.0], [l10, l11]])
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "mu", _frozen(mu))
        object.__setattr__(self, "sigma", _frozen(sigma))
        object.__setattr__(self, "chol", _frozen(chol))
        object.__setattr__(self, "log_det", 2.0 * (math.log(l00) + math.log(l11)))


@dataclass(frozen=True)
class HmmParams:
    """Full parameter set: transition matrix, initial distribution, emissions.

    gamma must be row-stochastic to within 1e-12 and delta a probability
    vector of matching length; both are validated and frozen at construction
    so downstream numerics never re-check them.
    """

    gamma: np.ndarray
    delta: np.ndarray
    states: Tuple[StateEmission, ...]

    def __post_init__(self):
        states = tuple(self.states)
        if not states:
            raise ValueError("at least one state is required")
        if not all(isinstance(s, StateEmission) for s in states):
            raise ValueError("states must be StateEmission instances")
        k = len(states)
        gamma = np.asarray(self.gamma, dtype=np.float64)
        if gamma.shape != (k, k):
            raise ValueError(f"gamma must have shape ({k}, {k})")
        if not np.all(np.isfinite(gamma)) or np.any(gamma < 0.0):
            raise ValueError("gamma entries must be finite and nonnegative")
        row_err = np.max(np.abs(gamma.sum(axis=1) - 1.0))
        if row_err > 1e-12:
            raise ValueError(f"gamma rows must sum to 1 (max deviation {row_err:.3e})")
        delta = np.asarray(self.delta, dtype=np.float64)
        if delta.shape != (k,):
            raise ValueError(f"delta must have length {k}")
        if not np.all(np.isfinite(delta)) or np.any(delta < 0.0):
            raise ValueError("delta entries must be finite and nonnegative")
        if abs(delta.sum() - 1.0) > 1e-12:
            raise ValueError("delta must sum to 1")
        object.__setattr__(self, "gamma", _frozen(gamma))
        object.__setattr__(self, "delta", _frozen(delta))
        object.__setattr__(self, "states", states)
        # Stacked per-state scalars, shared by the serial and batched emission
        # paths so both evaluate the exact same elementwise expressions.
        object.__setattr__(self, "_p", _frozen([s.p for s in states]))
        object.__setattr__(self, "_q", _frozen([1.0 - s.p for s in states]))
        object.__setattr__(self, "_mu0", _frozen([s.mu[0] for s in states]))
        object.__setattr__(self, "_mu1", _frozen([s.mu[1] for s in states]))
        object.__setattr__(self, "_l00", _frozen([s.chol[0, 0] for s in states]))
        object.__setattr__(self, "_l10", _frozen([s.chol[1, 0] for s in states]))
        object.__setattr__(self, "_l11", _frozen([s.chol[1, 1] for s in states]))
        object.__setattr__(self, "_log_det", _frozen([s.log_det for s in states]))

    @property
    def K(self) -> int:
        return len(self.states)


@dataclass(frozen=True)
class ScaledMatrix:
    """A nonnegative matrix carried as exp(log_scale) * m.

    Long products of sub-stochastic factors underflow double precision, so the
    magnitude lives in the log accumulator and m holds the shape.  normalized()
    divides by the largest entry, which makes that entry exactly 1 and keeps m
    inside the representable range regardless of chain length.
    """

    m: np.ndarray
    log_scale: float = 0.0

    def __post_init__(self):
        m = np.asarray(self.m)
        if m.ndim != 2:
            raise ValueError("m must be a 2-d matrix")
        if not np.all(np.isfinite(m)) or np.any(m < 0.0):
            raise ValueError("matrix entries must be finite and nonnegative")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "log_scale", float(self.log_scale))

    def normalized(self) -> "ScaledMatrix":
        """Rescale so the maximum entry is exactly 1; a zero matrix is returned as is."""
        mx = float(self.m.max())
        if mx <= 0.0 or mx == 1.0:
            return self
        return ScaledMatrix(self.m / mx, self.log_scale + math.log(mx))

    def to_dense(self) -> np.ndarray:
        return np.exp(self.log_scale) * np.asarray(self.m, dtype=np.float64)


def observation_arrays(obs: Sequence[Observation]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split a sequence of observations into (present, lon, lat) arrays.

    Absent records get a 0.0 placeholder coordinate that no numeric path reads.
    """
    n = len(obs)
    present = np.zeros(n, dtype=bool)
    lon = np.zeros(n, dtype=np.float64)
    lat = np.zeros(n, dtype=np.float64)
    for i, ob in enumerate(obs):
        if ob.present:
            present[i] = True
            lon[i], lat[i] = ob.value
    return present, lon, lat


def bvn_logpdf(x, em: StateEmission) -> float:
    """Log-density of the bivariate normal of one state at point x = (lon, lat)."""
    l00 = em.chol[0, 0]
    l10 = em.chol[1, 0]
    l11 = em.chol[1, 1]
    z0 = (float(x[0]) - em.mu[0]) / l00
    z1 = ((float(x[1]) - em.mu[1]) - l10 * z0) / l11
    return -LOG_2PI - 0.5 * em.log_det - 0.5 * (z0 * z0 + z1 * z1)


def _emission_columns(params: HmmParams, present: np.ndarray, lon: np.ndarray,
                      lat: np.ndarray) -> np.ndarray:
    """(n, K) table of emission-matrix diagonals for a batch of observations.

    Elementwise arithmetic only (no reductions), so evaluating a batch is
    bit-identical to evaluating the same records one at a time.  Entries are
    mathematically positive but can underflow to 0.0 for points hundreds of
    standard deviations from a state mean.
    """
    n = present.size
    k = params.K
    out = np.empty((n, k), dtype=np.float64)
    absent = ~present
    if absent.any():
        out[absent, :] = params._q
    if present.any():
        plon = lon[present]
        plat = lat[present]
        cols = np.empty((plon.size, k), dtype=np.float64)
        for j in range(k):
            z0 = (plon - params._mu0[j]) / params._l00[j]
            z1 = ((plat - params._mu1[j]) - params._l10[j] * z0) / params._l11[j]
            cols[:, j] = params._p[j] * np.exp(
                -LOG_2PI - 0.5 * params._log_det[j] - 0.5 * (z0 * z0 + z1 * z1))
        out[present, :] = cols
    return out


def emission_diagonal(params: HmmParams, ob: Observation) -> np.ndarray:
    """Diagonal of the emission matrix P(x) for one record: p_k phi_k(x) when an
    event is located, 1 - p_k for a quiet hour."""
    present, lon, lat = observation_arrays([ob])
    return _emission_columns(params, present, lon, lat)[0]


def _forward_loglik_arrays(params: HmmParams, present: np.ndarray, lon: np.ndarray,
                           lat: np.ndarray, renorm_period: int) -> float:
    if present.size == 0:
        raise ValueError("observation sequence is empty")
    if renorm_period < 1:
        raise ValueError("renorm_period must be a positive integer")
    gamma = params.gamma
    v = params.delta.copy()
    acc = 0.0
    since = 0
    n = present.size
    for t in range(n):
        v = v @ gamma
        if present[t]:
            z0 = (lon[t] - params._mu0) / params._l00
            z1 = ((lat[t] - params._mu1) - params._l10 * z0) / params._l11
            v = v * (params._p * np.exp(
                -LOG_2PI - 0.5 * params._log_det - 0.5 * (z0 * z0 + z1 * z1)))
        else:
            v = v * params._q
        since += 1
        if since == renorm_period:
            since = 0
            mx = v.max()
            if mx <= 0.0:
                # every state assigns zero mass: the sequence is impossible
                return -math.inf
            acc += math.log(mx)
            v /= mx
    s = v.sum()
    if s <= 0.0:
        return -math.inf
    return math.log(s) + acc


def forward_loglik(params: HmmParams, obs: Sequence[Observation], *,
                   renorm_period: int = 1) -> float:
    """Log-likelihood by the sequential scaled forward recursion.

    Maintains the running row vector v = delta' Gamma P(x_0) ... Gamma P(x_t),
    dividing by the max entry every renorm_period steps and accumulating the
    logs so arbitrarily long sequences never underflow.  The result is
    invariant to the renormalization schedule up to roundoff.
    """
    present, lon, lat = observation_arrays(obs)
    return _forward_loglik_arrays(params, present, lon, lat, renorm_period)


BRUTE_FORCE_PATH_LIMIT = 1_000_000


def brute_force_loglik(params: HmmParams, obs: Sequence[Observation]) -> float:
    """Log-likelihood by summing over every hidden path in log space.

    Exponential in the sequence length; refuses instances with more than
    BRUTE_FORCE_PATH_LIMIT paths. Exists purely as an oracle for the scaled
    recursions on tiny problems.
    """
    from scipy.special import logsumexp

    n = len(obs)
    k = params.K
    if n == 0:
        raise ValueError("observation sequence is empty")
    if float(k) ** (n + 1) > BRUTE_FORCE_PATH_LIMIT:
        raise ValueError(
            f"{k}^{n + 1} hidden paths exceed the enumeration limit of {BRUTE_FORCE_PATH_LIMIT}")
    present, lon, lat = observation_arrays(obs)
    ediag = _emission_columns(params, present, lon, lat)
    with np.errstate(divide="ignore"):
        log_gamma = np.log(params.gamma)
        log_diag = np.log(ediag)
        # lp[path, j] = log joint of a state path ending in state j
        lp = np.log(params.delta)[None, :]
    for t in range(n):
        lp = (lp[:, :, None] + log_gamma[None, :, :] + log_diag[t][None, None, :])
        lp = lp.reshape(-1, k)
    return float(logsumexp(lp))


@njit(cache=True, nogil=True)
def _stationary_kernel(gamma, tol, max_iter):
    k = gamma.shape[0]
    pi = np.full(k, 1.0 / k)
    for _ in range(max_iter):
        nxt = np.dot(pi, gamma)
        nxt /= nxt.sum()
        diff = 0.0
        for i in range(k):
            d = abs(nxt[i] - pi[i])
            if d > diff:
                diff = d
        if diff < tol:
            return nxt, True
        pi = nxt
    return pi, False


def stationary_distribution(gamma: np.ndarray) -> np.ndarray:
    """Stationary distribution of a row-stochastic matrix by power iteration.

    Starts from the uniform vector and iterates pi <- pi Gamma until the
    max-norm change falls below 1e-12, giving up after 100000 sweeps (nearly
    reducible or periodic chains mix too slowly to resolve; that is reported
    rather than papered over).
    """
    gamma = np.ascontiguousarray(gamma, dtype=np.float64)
    if gamma.ndim != 2 or gamma.shape[0] != gamma.shape[1]:
        raise ValueError("gamma must be a square matrix")
    if not np.all(np.isfinite(gamma)) or np.any(gamma < 0.0):
        raise ValueError("gamma entries must be finite and nonnegative")
    if np.max(np.abs(gamma.sum(axis=1) - 1.0)) > 1e-9:
        raise ValueError("gamma rows must sum to 1")
    pi, ok = _stationary_kernel(gamma, STATIONARY_TOL, STATIONARY_MAX_ITER)
    if not ok:
        raise RuntimeError(
            "power iteration did not reach the stationary distribution within "
            f"{STATIONARY_MAX_ITER} sweeps; the chain is too close to reducible or periodic")
    return pi
