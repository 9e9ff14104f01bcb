"""Interacting importance samplers with variance-reduced estimators.

The package is organized bottom-up: :mod:`miis.core` defines targets,
proposals, and particle systems; :mod:`miis.cis` the conditional
importance sampling step; :mod:`miis.samplers` the chains built from it
plus the reference chains; :mod:`miis.estimators` the estimator stack
(ergodic means, particle reuse, per-block conditional estimates, control
variates) with batch-means error estimation; :mod:`miis.models` the
built-in targets; and :mod:`miis.harness` the replication engine behind
the ``miis`` command.
"""

from .cis import (
    CisConfig,
    cis_estimate,
    cis_step,
    cis_step_conditional,
    random_walk_auxiliary,
    random_walk_proposal,
    unbiasedness_check,
)
from .core import (
    AuxiliaryKernel,
    ChainAbortError,
    ChainState,
    ConfigurationError,
    DegenerateWeightsError,
    EstimateError,
    Functional,
    MiisError,
    ParticleSystem,
    ProposalFamily,
    SupportMismatchError,
    TargetDensity,
    WeightBoundError,
    categorical_draw,
    no_auxiliary,
    normalize_log_weights,
)
from .estimators import (
    ControlVariateSet,
    CvPair,
    CvResult,
    EstimateReport,
    cv_estimate,
    default_batch_len,
    iact,
    mc_estimate,
    miis_estimate,
    mse_table,
    obm_covariance,
    rb_estimate,
)
from .rng import derive_seed, spawn_key, substream
from .samplers import (
    BASELINE_KINDS,
    MIIS_KINDS,
    ChainTrace,
    SamplerSpec,
    baseline_run,
    miis_gibbs_run,
    miis_run,
)

__version__ = "0.1.0"

__all__ = [
    "AuxiliaryKernel",
    "BASELINE_KINDS",
    "ChainAbortError",
    "ChainState",
    "ChainTrace",
    "CisConfig",
    "ConfigurationError",
    "ControlVariateSet",
    "CvPair",
    "CvResult",
    "DegenerateWeightsError",
    "EstimateError",
    "EstimateReport",
    "Functional",
    "MIIS_KINDS",
    "MiisError",
    "ParticleSystem",
    "ProposalFamily",
    "SamplerSpec",
    "SupportMismatchError",
    "TargetDensity",
    "WeightBoundError",
    "baseline_run",
    "categorical_draw",
    "cis_estimate",
    "cis_step",
    "cis_step_conditional",
    "cv_estimate",
    "default_batch_len",
    "derive_seed",
    "iact",
    "mc_estimate",
    "miis_estimate",
    "miis_gibbs_run",
    "miis_run",
    "mse_table",
    "no_auxiliary",
    "normalize_log_weights",
    "obm_covariance",
    "rb_estimate",
    "random_walk_auxiliary",
    "random_walk_proposal",
    "spawn_key",
    "substream",
    "unbiasedness_check",
]
