"""Bayesian fitting of the zero-inflated planar-Gaussian HMM.

Priors (all independent across states / rows):

  * each transition row ~ symmetric Dirichlet(alpha) with small alpha, which
    favors sparse rows;
  * event probabilities ~ Gamma(shape, rate) truncated to (0, 1), with a
    low-mean group for the first ceil(K/2) states and a high-mean group for
    the rest (breaks label symmetry between quiet and active regimes);
  * means ~ uniform over a fixed geographic rectangle;
  * covariances ~ inverse-Wishart(df, scale).

Sampling is blockwise random-walk Metropolis-Hastings in unconstrained
coordinates: centered log-ratio for transition rows, logit for event
probabilities, raw coordinates for means, log-Cholesky for covariances.  Each
proposal carries the log-Jacobian correction of its reparameterization so the
chain targets the posterior over the natural parameters.  delta is never
sampled; it is tied to Gamma (stationary distribution) or held uniform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import gammainc, gammaln, multigammaln
from scipy.stats import invwishart as _scipy_invwishart

from .core import (
    LOG_2PI,
    HmmParams,
    Observation,
    StateEmission,
    observation_arrays,
    stationary_distribution,
)
from .engine import EngineConfig, _parallel_loglik_arrays, parallel_loglik

LOG2 = math.log(2.0)

# Prior-predraw budget for chain initialization.
INIT_MAX_REDRAWS = 1000

# Every REJUVENATE_PERIOD-th iteration the chain adds a joint independence
# proposal for one state (cycling through them): fresh transition rows, mean,
# covariance and event probability at once.  The sparse Dirichlet prior piles
# density onto simplex corners, so a chain whose transition matrix starts (or
# gets stuck) there effectively turns states off, and no single-block random
# walk can turn one back on; the joint move can.  All its component proposals
# are mixtures with a flat component, so reverse densities stay bounded away
# from zero and the Metropolis-Hastings ratio is well behaved.
REJUVENATE_PERIOD = 4


def moment_match_gamma(mean: float, variance: float) -> Tuple[float, float]:
    """(shape, rate) of the Gamma distribution with the given mean and variance.

    rate = mean / variance, shape = rate * mean.  Computed in that order so the
    reference operating points land on exact integers: (0.1, 0.001) -> (10, 100)
    and (0.9, 0.001) -> (810, 900).
    """
    mean = float(mean)
    variance = float(variance)
    if not (math.isfinite(mean) and mean > 0.0):
        raise ValueError("mean must be positive")
    if not (math.isfinite(variance) and variance > 0.0):
        raise ValueError("variance must be positive")
    rate = mean / variance
    return rate * mean, rate


def dirichlet_symmetric_logpdf(row: np.ndarray, alpha: float) -> float:
    """Log-density of a symmetric Dirichlet(alpha, ..., alpha) at a simplex point.

    The normalizer is Gamma(alpha * M) / Gamma(alpha)^M for a row of length M.
    Rejects rows off the simplex or touching its boundary (with alpha < 1 the
    density is unbounded there).  A length-1 row is the forced point (1,), a
    point mass contributing log-density 0.
    """
    row = np.asarray(row, dtype=np.float64)
    alpha = float(alpha)
    if not (math.isfinite(alpha) and alpha > 0.0):
        raise ValueError("alpha must be positive")
    if row.ndim != 1 or row.size < 1:
        raise ValueError("row must be a nonempty vector")
    if not np.all(np.isfinite(row)) or np.any(row <= 0.0):
        raise ValueError("row entries must be strictly positive")
    if abs(row.sum() - 1.0) > 1e-9:
        raise ValueError("row must sum to 1")
    m = row.size
    if m == 1:
        return 0.0
    return float(gammaln(alpha * m) - m * gammaln(alpha)
                 + (alpha - 1.0) * np.log(row).sum())


def gamma_logpdf(x: float, shape: float, rate: float) -> float:
    """Log-density of Gamma(shape, rate) at x > 0 (rate parameterization)."""
    x = float(x)
    shape = float(shape)
    rate = float(rate)
    if not (math.isfinite(shape) and shape > 0.0 and math.isfinite(rate) and rate > 0.0):
        raise ValueError("shape and rate must be positive")
    if not (math.isfinite(x) and x > 0.0):
        raise ValueError("x must be positive")
    return shape * math.log(rate) + (shape - 1.0) * math.log(x) - rate * x \
        - float(gammaln(shape))


def invwishart_logpdf(sigma: np.ndarray, df: float, scale: np.ndarray) -> float:
    """Log-density of the 2x2 inverse-Wishart(df, scale) at SPD matrix sigma.

    log f = (df/2) log|scale| - df log 2 - log Gamma_2(df/2)
            - (df + 3)/2 log|sigma| - tr(scale sigma^-1) / 2.
    """
    from .core import _chol2

    p = 2
    df = float(df)
    if not (math.isfinite(df) and df > p - 1):
        raise ValueError("df must exceed 1")
    sigma = np.asarray(sigma, dtype=np.float64)
    scale = np.asarray(scale, dtype=np.float64)
    if sigma.shape != (p, p) or scale.shape != (p, p):
        raise ValueError("sigma and scale must be 2x2")
    l00, l10, l11 = _chol2(sigma)  # raises if not SPD
    logdet_sigma = 2.0 * (math.log(l00) + math.log(l11))
    s00, s10, s11 = _chol2(scale)
    logdet_scale = 2.0 * (math.log(s00) + math.log(s11))
    det_sigma = math.exp(logdet_sigma)
    # tr(scale sigma^-1) via the 2x2 adjugate
    tr = (scale[0, 0] * sigma[1, 1] - scale[0, 1] * sigma[1, 0]
          - scale[1, 0] * sigma[0, 1] + scale[1, 1] * sigma[0, 0]) / det_sigma
    return (0.5 * df * logdet_scale - 0.5 * df * p * LOG2
            - float(multigammaln(0.5 * df, p))
            - 0.5 * (df + p + 1.0) * logdet_sigma - 0.5 * tr)


@dataclass(frozen=True)
class PriorSpec:
    """Hyperparameters of the joint prior.

    p_low / p_high are (shape, rate) pairs of the truncated-Gamma priors for
    the quiet and active state groups; mu_bounds is the uniform rectangle as
    (lon_min, lon_max, lat_min, lat_max); iw_df / iw_scale parameterize the
    inverse-Wishart on each covariance.
    """

    dirichlet_alpha: float = 0.01
    p_low: Tuple[float, float] = (10.0, 100.0)
    p_high: Tuple[float, float] = (810.0, 900.0)
    mu_bounds: Tuple[float, float, float, float] = (132.0, 135.0, 32.0, 35.0)
    iw_df: float = 2.0
    iw_scale: np.ndarray = field(default_factory=lambda: np.eye(2))

    def __post_init__(self):
        if not (math.isfinite(self.dirichlet_alpha) and self.dirichlet_alpha > 0.0):
            raise ValueError("dirichlet_alpha must be positive")
        for pair in (self.p_low, self.p_high):
            a, b = pair
            if not (a > 0.0 and b > 0.0 and math.isfinite(a) and math.isfinite(b)):
                raise ValueError("Gamma prior shape and rate must be positive")
        lon_min, lon_max, lat_min, lat_max = self.mu_bounds
        if not (lon_min < lon_max and lat_min < lat_max):
            raise ValueError("mu_bounds rectangle must have positive area")
        if not (math.isfinite(self.iw_df) and self.iw_df > 1.0):
            raise ValueError("iw_df must exceed 1")
        scale = np.asarray(self.iw_scale, dtype=np.float64)
        from .core import _chol2
        _chol2(scale)  # must be SPD
        object.__setattr__(self, "iw_scale", scale)

    @classmethod
    def default_for(cls, k: int, mu_bounds: Optional[Tuple[float, float, float, float]] = None
                    ) -> "PriorSpec":
        """Reference prior for a K-state model: Dirichlet(0.01) rows, event
        probabilities moment-matched to mean 0.1 / 0.9 with variance 0.001,
        inverse-Wishart df = max(K, 2) with identity scale."""
        kwargs = dict(
            dirichlet_alpha=0.01,
            p_low=moment_match_gamma(0.1, 0.001),
            p_high=moment_match_gamma(0.9, 0.001),
            iw_df=float(max(k, 2)),
            iw_scale=np.eye(2),
        )
        if mu_bounds is not None:
            kwargs["mu_bounds"] = tuple(float(b) for b in mu_bounds)
        return cls(**kwargs)


def n_low_states(k: int) -> int:
    """Size of the low-activity state group: the first ceil(K/2) states."""
    return (k + 1) // 2


def _log_trunc_norm(shape: float, rate: float) -> float:
    """log P(X < 1) for X ~ Gamma(shape, rate): the (0,1) truncation normalizer."""
    z = float(gammainc(shape, rate))
    if z <= 0.0:
        raise ValueError("truncated Gamma prior has no mass on (0, 1)")
    return math.log(z)


def log_prior(params: HmmParams, spec: PriorSpec) -> float:
    """Joint log prior density at params; -inf outside the support.

    Support violations that HmmParams can represent (a mean outside the
    rectangle, a transition entry at exactly zero) return -inf; violations the
    types already exclude (p outside (0,1), a non-SPD covariance) cannot reach
    this function.
    """
    k = params.K
    lp = 0.0
    for row in params.gamma:
        if np.any(row <= 0.0):
            return -math.inf
        lp += dirichlet_symmetric_logpdf(row, spec.dirichlet_alpha)
    nlow = n_low_states(k)
    log_z_low = _log_trunc_norm(*spec.p_low)
    log_z_high = _log_trunc_norm(*spec.p_high)
    lon_min, lon_max, lat_min, lat_max = spec.mu_bounds
    log_area = math.log(lon_max - lon_min) + math.log(lat_max - lat_min)
    for j, st in enumerate(params.states):
        shape, rate = spec.p_low if j < nlow else spec.p_high
        lp += gamma_logpdf(st.p, shape, rate)
        lp -= log_z_low if j < nlow else log_z_high
        if not (lon_min <= st.mu[0] <= lon_max and lat_min <= st.mu[1] <= lat_max):
            return -math.inf
        lp -= log_area
        lp += invwishart_logpdf(st.sigma, spec.iw_df, spec.iw_scale)
    return lp


def log_posterior(params: HmmParams, spec: PriorSpec, obs: Sequence[Observation],
                  engine_cfg: EngineConfig) -> float:
    """Unnormalized log posterior: log_prior + parallel_loglik.

    Short-circuits when the prior is -inf, so the likelihood is never
    evaluated outside the support.
    """
    lp = log_prior(params, spec)
    if lp == -math.inf:
        return -math.inf
    return lp + parallel_loglik(params, obs, engine_cfg)


# ---------------------------------------------------------------------------
# Parameter vector layout and the trace container.
# ---------------------------------------------------------------------------


def param_names(k: int) -> List[str]:
    """Column order of the flattened parameter vector for a K-state model."""
    names = [f"gamma.{i + 1}.{j + 1}" for i in range(k) for j in range(k)]
    names += [f"p.{j + 1}" for j in range(k)]
    for j in range(k):
        names += [f"mu.{j + 1}.lon", f"mu.{j + 1}.lat"]
    for j in range(k):
        names += [f"sigma.{j + 1}.11", f"sigma.{j + 1}.12", f"sigma.{j + 1}.22"]
    return names


def params_to_vector(params: HmmParams) -> np.ndarray:
    k = params.K
    out = np.empty(k * k + 6 * k, dtype=np.float64)
    out[:k * k] = params.gamma.ravel()
    pos = k * k
    for st in params.states:
        out[pos] = st.p
        pos += 1
    for st in params.states:
        out[pos] = st.mu[0]
        out[pos + 1] = st.mu[1]
        pos += 2
    for st in params.states:
        out[pos] = st.sigma[0, 0]
        out[pos + 1] = st.sigma[0, 1]
        out[pos + 2] = st.sigma[1, 1]
        pos += 3
    return out


def params_from_vector(k: int, vec: np.ndarray, delta_mode: str = "stationary") -> HmmParams:
    """Rebuild HmmParams from a flattened vector, deriving delta per delta_mode."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (k * k + 6 * k,):
        raise ValueError(f"expected a vector of length {k * k + 6 * k}")
    gamma = vec[:k * k].reshape(k, k)
    pos = k * k
    ps = vec[pos:pos + k]
    pos += k
    mus = vec[pos:pos + 2 * k].reshape(k, 2)
    pos += 2 * k
    sigs = vec[pos:pos + 3 * k].reshape(k, 3)
    states = tuple(
        StateEmission(ps[j], mus[j],
                      np.array([[sigs[j, 0], sigs[j, 1]], [sigs[j, 1], sigs[j, 2]]]))
        for j in range(k))
    delta = _derive_delta(gamma, delta_mode)
    return HmmParams(gamma=gamma, delta=delta, states=states)


def _derive_delta(gamma: np.ndarray, delta_mode: str) -> np.ndarray:
    if delta_mode == "stationary":
        return stationary_distribution(gamma)
    if delta_mode == "uniform":
        k = gamma.shape[0]
        return np.full(k, 1.0 / k)
    raise ValueError("delta_mode must be 'stationary' or 'uniform'")


@dataclass
class Trace:
    """Columnar record of an MCMC run: one row per kept sample.

    Every row satisfies log_posterior = log_likelihood + log_prior to 1e-10;
    this is validated at construction.
    """

    k: int
    param_names: List[str]
    iterations: np.ndarray
    log_posterior: np.ndarray
    log_likelihood: np.ndarray
    log_prior: np.ndarray
    params: np.ndarray
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.iterations)
        self.iterations = np.asarray(self.iterations, dtype=np.int64)
        for name in ("log_posterior", "log_likelihood", "log_prior"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (n,):
                raise ValueError(f"{name} must have one entry per sample")
            setattr(self, name, arr)
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (n, len(self.param_names)):
            raise ValueError("params must be (samples, parameters)")
        if n > 1 and np.any(np.diff(self.iterations) <= 0):
            raise ValueError("iteration indices must be strictly increasing")
        gap = np.max(np.abs(self.log_posterior - (self.log_likelihood + self.log_prior)),
                     initial=0.0)
        if gap > 1e-10:
            raise ValueError(
                f"log_posterior and log_likelihood + log_prior disagree by {gap:.3e}")

    def __len__(self) -> int:
        return len(self.iterations)

    def column(self, name: str) -> np.ndarray:
        return self.params[:, self.param_names.index(name)]


# ---------------------------------------------------------------------------
# Proposals.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepSizes:
    """Random-walk step widths per parameter block (0 disables a block).

    Defaults are sized for a few hundred observations; longer series
    concentrate the posterior roughly like 1/sqrt(N), so scale them down
    accordingly.
    """

    gamma: float = 0.25
    p: float = 0.25
    mu: float = 0.01
    sigma: float = 0.05

    def __post_init__(self):
        for name in ("gamma", "p", "mu", "sigma"):
            v = float(getattr(self, name))
            if not (math.isfinite(v) and v >= 0.0):
                raise ValueError(f"step size {name} must be finite and >= 0")


@dataclass(frozen=True)
class McmcConfig:
    iterations: int = 50_000
    thin: int = 10
    seed: int = 0
    steps: StepSizes = field(default_factory=StepSizes)

    def __post_init__(self):
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ValueError("iterations must be a positive integer")
        if int(self.thin) != self.thin or self.thin < 1:
            raise ValueError("thin must be a positive integer")


def _propose_gamma(gamma: np.ndarray, step: float, rng: np.random.Generator
                   ) -> Tuple[np.ndarray, float]:
    """Perturb every transition row in centered-log-ratio coordinates.

    The softmax pullback of the Dirichlet-support density contributes
    sum(log row) per row, so the proposal log-Jacobian correction is
    sum(log new) - sum(log old) over all entries.
    """
    k = gamma.shape[0]
    logg = np.log(gamma)
    z = logg - logg.mean(axis=1, keepdims=True)
    z = z + step * rng.standard_normal((k, k))
    z -= z.max(axis=1, keepdims=True)
    new = np.exp(z)
    new /= new.sum(axis=1, keepdims=True)
    if np.any(new <= 0.0):
        raise ValueError("proposed transition row underflowed to the simplex boundary")
    jac = float(np.log(new).sum() - logg.sum())
    return new, jac


def _propose_p(ps: np.ndarray, step: float, rng: np.random.Generator
               ) -> Tuple[np.ndarray, float]:
    """Perturb event probabilities on the logit scale; Jacobian log p(1-p)."""
    u = np.log(ps) - np.log1p(-ps) + step * rng.standard_normal(ps.size)
    new = 1.0 / (1.0 + np.exp(-u))
    if np.any(new <= 0.0) or np.any(new >= 1.0):
        raise ValueError("proposed event probability left (0, 1) at working precision")
    jac = float(np.sum(np.log(new) + np.log1p(-new))
                - np.sum(np.log(ps) + np.log1p(-ps)))
    return new, jac


def _propose_mu(mus: np.ndarray, step: float, rng: np.random.Generator
                ) -> Tuple[np.ndarray, float]:
    return mus + step * rng.standard_normal(mus.shape), 0.0


def _propose_sigma(states: Sequence[StateEmission], step: float, rng: np.random.Generator
                   ) -> Tuple[List[np.ndarray], float]:
    """Perturb covariances in log-Cholesky coordinates (log l00, l10, log l11).

    dSigma = 2^2 l00^3 l11^2 dl in Cholesky coordinates and the log transform
    of the diagonal adds one power each, so the log-Jacobian difference is
    3 dlog(l00) + 2 dlog(l11) per state.
    """
    out = []
    jac = 0.0
    noise = step * rng.standard_normal((len(states), 3))
    for st, eps in zip(states, noise):
        a = math.log(st.chol[0, 0]) + eps[0]
        b = st.chol[1, 0] + eps[1]
        c = math.log(st.chol[1, 1]) + eps[2]
        l00 = math.exp(a)
        l11 = math.exp(c)
        sigma = np.array([[l00 * l00, l00 * b],
                          [l00 * b, b * b + l11 * l11]])
        jac += 3.0 * (a - math.log(st.chol[0, 0])) + 2.0 * (c - math.log(st.chol[1, 1]))
        out.append(sigma)
    return out, jac


def _dirichlet_logpdf(x: np.ndarray, alpha: np.ndarray) -> float:
    """General Dirichlet log-density, defined on the closed simplex.

    Entries of x that underflowed to exact 0 give -inf when their alpha
    exceeds 1 (zero density) and contribute nothing when alpha is exactly 1
    (the density is constant there); 0 * log(0) must not surface as NaN, or a
    corner-trapped transition row would poison the rejuvenation q-ratio.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(alpha == 1.0, 0.0, (alpha - 1.0) * np.log(x))
    return float(gammaln(alpha.sum()) - gammaln(alpha).sum() + terms.sum())


class _RejuvenationKernel:
    """Joint independence proposal for one state's parameters plus the
    transition matrix.

    Proposal distributions (densities evaluable in both directions):
      * each transition row: a mixture of uniform on the simplex, Dirichlet
        boosted along its diagonal entry (persistent-state shapes), and
        Dirichlet concentrated on the current row with a +1 floor (keeps the
        learned structure while lifting zeroed entries);
      * the state's mean: 0.7 from a kernel-density mixture on observed event
        locations, 0.3 uniform on the prior rectangle;
      * the state's covariance: 1/2 inverse-Wishart at cluster scale, 1/2 the
        broad prior-like inverse-Wishart;
      * the state's event probability: its truncated group prior.
    """

    GAMMA_CONC = 20.0
    GAMMA_DIAG_BOOST = 6.0
    GAMMA_WEIGHTS = (0.4, 0.3, 0.3)  # uniform, diagonal-boosted, concentrated
    MU_KDE_WEIGHT = 0.7
    MU_KDE_BW = 0.15
    MU_POINTS = 512
    SIGMA_SHARP_DF = 6.0
    SIGMA_BROAD_DF = 2.1

    def __init__(self, spec: PriorSpec, obs: Optional[Sequence[Observation]]):
        self.spec = spec
        lon_min, lon_max, lat_min, lat_max = spec.mu_bounds
        self.log_area = math.log(lon_max - lon_min) + math.log(lat_max - lat_min)
        pts = np.zeros((0, 2))
        if obs is not None:
            pts = np.array([ob.value for ob in obs if ob.present], dtype=np.float64)
            if len(pts) > self.MU_POINTS:
                stride = len(pts) / self.MU_POINTS
                pts = pts[(np.arange(self.MU_POINTS) * stride).astype(int)]
        self.points = pts
        # sharp sigma component sized to a fraction of the rectangle
        scale = 0.05 * min(lon_max - lon_min, lat_max - lat_min)
        self.sigma_sharp_scale = (self.SIGMA_SHARP_DF - 3.0) * scale * scale * np.eye(2)
        self.sigma_broad_scale = np.eye(2)

    # -- component densities -------------------------------------------------

    def _row_alphas(self, i: int, k: int, old_row: np.ndarray) -> list:
        boosted = np.ones(k)
        boosted[i] += self.GAMMA_DIAG_BOOST
        return [np.ones(k), boosted, self.GAMMA_CONC * old_row + 1.0]

    def _log_q_gamma(self, new: np.ndarray, old: np.ndarray) -> float:
        from scipy.special import logsumexp

        k = new.shape[0]
        total = 0.0
        for i in range(k):
            comps = [math.log(w) + _dirichlet_logpdf(new[i], a)
                     for w, a in zip(self.GAMMA_WEIGHTS, self._row_alphas(i, k, old[i]))]
            total += float(logsumexp(comps))
        return total

    def _log_q_mu(self, mu: np.ndarray) -> float:
        from scipy.special import logsumexp

        log_uniform = -self.log_area
        if len(self.points) == 0:
            return log_uniform
        d = (self.points - mu) / self.MU_KDE_BW
        comps = -LOG_2PI - 2.0 * math.log(self.MU_KDE_BW) - 0.5 * (d * d).sum(axis=1)
        log_kde = float(logsumexp(comps)) - math.log(len(self.points))
        return float(np.logaddexp(math.log(self.MU_KDE_WEIGHT) + log_kde,
                                  math.log1p(-self.MU_KDE_WEIGHT) + log_uniform))

    def _log_q_sigma(self, sigma: np.ndarray) -> float:
        sharp = invwishart_logpdf(sigma, self.SIGMA_SHARP_DF, self.sigma_sharp_scale)
        broad = invwishart_logpdf(sigma, self.SIGMA_BROAD_DF, self.sigma_broad_scale)
        return float(np.logaddexp(sharp, broad)) - LOG2

    def _log_q_p(self, p: float, j: int, k: int) -> float:
        shape, rate = self.spec.p_low if j < n_low_states(k) else self.spec.p_high
        return gamma_logpdf(p, shape, rate) - _log_trunc_norm(shape, rate)

    # -- sampling ------------------------------------------------------------

    def _draw_gamma(self, old: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        k = old.shape[0]
        rows = []
        for i in range(k):
            alphas = self._row_alphas(i, k, old[i])
            which = int(np.searchsorted(np.cumsum(self.GAMMA_WEIGHTS), rng.random(),
                                        side="right"))
            rows.append(rng.dirichlet(alphas[min(which, 2)]))
        return np.vstack(rows)

    def _draw_mu(self, rng: np.random.Generator) -> np.ndarray:
        lon_min, lon_max, lat_min, lat_max = self.spec.mu_bounds
        if len(self.points) > 0 and rng.random() < self.MU_KDE_WEIGHT:
            center = self.points[rng.integers(len(self.points))]
            return center + self.MU_KDE_BW * rng.standard_normal(2)
        return np.array([rng.uniform(lon_min, lon_max), rng.uniform(lat_min, lat_max)])

    def _draw_sigma(self, rng: np.random.Generator) -> np.ndarray:
        if rng.random() < 0.5:
            return np.asarray(_scipy_invwishart.rvs(
                df=self.SIGMA_SHARP_DF, scale=self.sigma_sharp_scale, random_state=rng))
        return np.asarray(_scipy_invwishart.rvs(
            df=self.SIGMA_BROAD_DF, scale=self.sigma_broad_scale, random_state=rng))

    def _draw_p(self, j: int, k: int, rng: np.random.Generator) -> float:
        shape, rate = self.spec.p_low if j < n_low_states(k) else self.spec.p_high
        while True:
            p = rng.gamma(shape, 1.0 / rate)
            if 0.0 < p < 1.0:
                return p

    def propose(self, params: HmmParams, j: int, rng: np.random.Generator,
                delta_mode: str) -> Tuple[HmmParams, float]:
        """Propose the joint move for state j; returns (candidate, log q-ratio
        correction log q(old|new) - log q(new|old))."""
        k = params.K
        old = params.states[j]
        gamma = self._draw_gamma(params.gamma, rng)
        mu = self._draw_mu(rng)
        sigma = self._draw_sigma(rng)
        p = self._draw_p(j, k, rng)
        st = StateEmission(p, mu, sigma)
        states = params.states[:j] + (st,) + params.states[j + 1:]
        cand = HmmParams(gamma=gamma, delta=_derive_delta(gamma, delta_mode),
                         states=states)
        log_fwd = (self._log_q_gamma(gamma, params.gamma) + self._log_q_mu(mu)
                   + self._log_q_sigma(sigma) + self._log_q_p(p, j, k))
        log_rev = (self._log_q_gamma(params.gamma, gamma) + self._log_q_mu(old.mu)
                   + self._log_q_sigma(old.sigma) + self._log_q_p(old.p, j, k))
        return cand, log_rev - log_fwd


_BLOCKS = ("gamma", "p", "mu", "sigma")


def _propose_block(params: HmmParams, block: str, step: float,
                   rng: np.random.Generator, delta_mode: str
                   ) -> Tuple[HmmParams, float]:
    if block == "gamma":
        gamma, jac = _propose_gamma(params.gamma, step, rng)
        delta = _derive_delta(gamma, delta_mode)
        return HmmParams(gamma=gamma, delta=delta, states=params.states), jac
    if block == "p":
        ps, jac = _propose_p(params._p, step, rng)
        states = tuple(StateEmission(p, st.mu, st.sigma)
                       for p, st in zip(ps, params.states))
        return HmmParams(gamma=params.gamma, delta=params.delta, states=states), jac
    if block == "mu":
        mus = np.stack([st.mu for st in params.states])
        mus, jac = _propose_mu(mus, step, rng)
        states = tuple(StateEmission(st.p, mu, st.sigma)
                       for mu, st in zip(mus, params.states))
        return HmmParams(gamma=params.gamma, delta=params.delta, states=states), jac
    if block == "sigma":
        sigmas, jac = _propose_sigma(params.states, step, rng)
        states = tuple(StateEmission(st.p, st.mu, sig)
                       for sig, st in zip(sigmas, params.states))
        return HmmParams(gamma=params.gamma, delta=params.delta, states=states), jac
    raise ValueError(f"unknown block {block!r}")


def propose(params: HmmParams, steps: StepSizes, rng: np.random.Generator,
            delta_mode: str = "stationary") -> Tuple[HmmParams, float]:
    """One full-sweep random-walk proposal touching every block in turn.

    Returns the proposed state and the summed log-Jacobian correction to add
    to the Metropolis-Hastings log ratio.  With all step sizes zero the input
    state is returned unchanged with correction 0.  May raise ValueError in
    the measure-zero event that a proposed state degenerates at floating-point
    precision (callers treat that as a rejection).
    """
    jac = 0.0
    out = params
    for block in _BLOCKS:
        step = getattr(steps, block)
        if step == 0.0:
            continue
        out, dj = _propose_block(out, block, step, rng, delta_mode)
        jac += dj
    return out, jac


def mh_accept(rng: np.random.Generator, log_ratio: float) -> bool:
    """One Metropolis-Hastings coin flip; always consumes exactly one uniform."""
    return rng.random() < math.exp(min(log_ratio, 0.0))


def sample_prior_params(k: int, spec: PriorSpec, rng: np.random.Generator,
                        delta_mode: str = "uniform") -> HmmParams:
    """Draw a parameter set from the prior.

    delta defaults to uniform here: rows drawn from a sparse Dirichlet are
    frequently near-reducible, where the stationary vector is ill-conditioned
    (requesting delta_mode='stationary' can then raise RuntimeError).
    """
    if k < 1:
        raise ValueError("k must be a positive integer")
    gamma = np.vstack([rng.dirichlet(np.full(k, spec.dirichlet_alpha)) for _ in range(k)])
    nlow = n_low_states(k)
    states = []
    lon_min, lon_max, lat_min, lat_max = spec.mu_bounds
    for j in range(k):
        shape, rate = spec.p_low if j < nlow else spec.p_high
        # truncated Gamma by rejection; the reference priors put ~99.9% of
        # their mass below 1, so this terminates immediately in practice
        while True:
            p = rng.gamma(shape, 1.0 / rate)
            if 0.0 < p < 1.0:
                break
        mu = np.array([rng.uniform(lon_min, lon_max), rng.uniform(lat_min, lat_max)])
        sigma = _scipy_invwishart.rvs(df=spec.iw_df, scale=spec.iw_scale, random_state=rng)
        states.append(StateEmission(p, mu, np.asarray(sigma)))
    delta = _derive_delta(gamma, delta_mode)
    return HmmParams(gamma=gamma, delta=delta, states=tuple(states))


def run_chain(k: int, obs: Optional[Sequence[Observation]], spec: PriorSpec,
              mcmc: McmcConfig, engine: EngineConfig, *,
              delta_mode: str = "stationary",
              loglik_fn: Optional[Callable[[HmmParams], float]] = None) -> Trace:
    """Blockwise random-walk Metropolis-Hastings over the posterior.

    The chain starts from a prior draw with finite posterior (redrawn up to
    1000 times, then RuntimeError), updates the gamma / p / mu / sigma blocks
    in a fixed order each iteration, and keeps every thin-th state starting
    with iteration 0.  Every REJUVENATE_PERIOD-th iteration additionally runs
    the joint per-state independence kernel (see _RejuvenationKernel) so a
    chain whose transition matrix starts in a simplex corner can switch a
    dormant state back on; every component kernel leaves the posterior
    invariant.  All randomness comes from one generator seeded with mcmc.seed,
    so runs are exactly repeatable.  loglik_fn overrides the likelihood (used
    for prior-only sampling and tests); by default the parallel engine
    evaluates it.
    """
    rng = np.random.default_rng(mcmc.seed)
    if loglik_fn is None:
        if obs is None or len(obs) == 0:
            raise ValueError("observations are required unless loglik_fn is given")
        present, lon, lat = observation_arrays(obs)

        def loglik_fn(p: HmmParams) -> float:
            return _parallel_loglik_arrays(p, present, lon, lat, engine)

    params = None
    lp = ll = -math.inf
    for _ in range(INIT_MAX_REDRAWS):
        try:
            cand = sample_prior_params(k, spec, rng, delta_mode)
        except RuntimeError:
            continue  # stationary vector did not converge for this draw
        lp = log_prior(cand, spec)
        if lp == -math.inf:
            continue
        ll = loglik_fn(cand)
        if math.isfinite(ll):
            params = cand
            break
    if params is None:
        raise RuntimeError(
            f"no prior draw with finite posterior after {INIT_MAX_REDRAWS} attempts")

    kept_iter = [0]
    kept_post = [lp + ll]
    kept_lik = [ll]
    kept_prior = [lp]
    kept_params = [params_to_vector(params)]
    buckets = _BLOCKS + ("rejuvenate",)
    proposed = {b: 0 for b in buckets}
    accepted = {b: 0 for b in buckets}
    rejuvenator = _RejuvenationKernel(spec, obs)

    steps = mcmc.steps
    for it in range(1, mcmc.iterations):
        updates = list(_BLOCKS)
        if it % REJUVENATE_PERIOD == 0:
            updates.append("rejuvenate")
        for block in updates:
            try:
                if block == "rejuvenate":
                    j = (it // REJUVENATE_PERIOD) % k
                    cand, jac = rejuvenator.propose(params, j, rng, delta_mode)
                else:
                    step = getattr(steps, block)
                    if step == 0.0:
                        continue
                    cand, jac = _propose_block(params, block, step, rng, delta_mode)
            except (ValueError, RuntimeError):
                proposed[block] += 1
                continue  # degenerate proposal: outside support, reject
            proposed[block] += 1
            lp_c = log_prior(cand, spec)
            if lp_c == -math.inf:
                continue
            ll_c = loglik_fn(cand)
            if not math.isfinite(ll_c):
                continue
            if mh_accept(rng, (lp_c + ll_c) - (lp + ll) + jac):
                params, lp, ll = cand, lp_c, ll_c
                accepted[block] += 1
        if it % mcmc.thin == 0:
            kept_iter.append(it)
            kept_post.append(lp + ll)
            kept_lik.append(ll)
            kept_prior.append(lp)
            kept_params.append(params_to_vector(params))

    total_prop = sum(proposed.values())
    total_acc = sum(accepted.values())
    stats = {
        "acceptance_rate": total_acc / total_prop if total_prop else 0.0,
        "acceptance_by_block": {
            b: (accepted[b] / proposed[b] if proposed[b] else 0.0) for b in buckets},
    }
    return Trace(
        k=k,
        param_names=param_names(k),
        iterations=np.array(kept_iter, dtype=np.int64),
        log_posterior=np.array(kept_post),
        log_likelihood=np.array(kept_lik),
        log_prior=np.array(kept_prior),
        params=np.vstack(kept_params),
        stats=stats,
    )


def effective_sample_size(series: np.ndarray) -> float:
    """ESS = n / (1 + 2 sum rho_t) with the autocorrelation sum truncated by
    the initial-positive-sequence rule (stop at the first lag where
    rho_t + rho_{t+1} < 0).

    A constant series has no autocorrelation structure and returns n.
    Series shorter than 10 are rejected.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("series must be one-dimensional")
    n = x.size
    if n < 10:
        raise ValueError("series must have at least 10 points")
    if not np.all(np.isfinite(x)):
        raise ValueError("series must be finite")
    x = x - x.mean()
    var = float(np.dot(x, x)) / n
    if var == 0.0:
        return float(n)
    nfft = 1
    while nfft < 2 * n:
        nfft *= 2
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n].real / n
    rho = acov / var
    s = 0.0
    t = 1
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair < 0.0:
            break
        s += pair
        t += 2
    return n / (1.0 + 2.0 * s)
