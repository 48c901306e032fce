"""Zero-inflated planar-Gaussian hidden Markov model toolkit.

A serial forward-recursion reference backend and a data-parallel segmented
matrix-chain backend for the likelihood, blockwise Metropolis-Hastings
posterior sampling, path simulation and posterior-predictive forecasting,
and a benchmark harness comparing the two backends.
"""

from .bayes import (
    McmcConfig,
    PriorSpec,
    StepSizes,
    Trace,
    dirichlet_symmetric_logpdf,
    effective_sample_size,
    gamma_logpdf,
    invwishart_logpdf,
    log_posterior,
    log_prior,
    mh_accept,
    moment_match_gamma,
    n_low_states,
    param_names,
    params_from_vector,
    params_to_vector,
    propose,
    run_chain,
    sample_prior_params,
)
from .core import (
    HmmParams,
    Observation,
    ScaledMatrix,
    StateEmission,
    brute_force_loglik,
    bvn_logpdf,
    emission_diagonal,
    forward_loglik,
    observation_arrays,
    stationary_distribution,
)
from .dataio import (
    Dataset,
    load_dataset,
    read_trace,
    save_dataset,
    write_forecast_summary,
    write_trace,
)
from .engine import (
    EngineConfig,
    SegmentProduct,
    batch_emissions,
    combine_segments,
    parallel_loglik,
    scale_by_emission,
    segment_bounds,
    segment_chain_product,
)
from .config import RunConfig, config_from_mapping, load_config
from .simforecast import (
    ForecastConfig,
    ForecastDraw,
    forecast,
    forecast_summary,
    simulate_path,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
