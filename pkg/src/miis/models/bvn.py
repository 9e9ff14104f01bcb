"""Correlated bivariate Gaussian test model.

A zero-mean unit-variance pair with correlation rho, updated in two
single-coordinate blocks. Provides the analytic pieces the samplers and
baselines need: exact joint and conditional samplers, Student-t and
Gaussian conditional proposal builders matched to the conditional mean
and variance, closed-form conditional expectations for the
control-variate baseline, and exact values of the reported functionals.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
from scipy.special import ndtr, ndtri, stdtr, stdtrit

from ..core import Functional, ProposalFamily, TargetDensity

__all__ = [
    "TAIL_CUT",
    "make_target",
    "student_conditional_proposal",
    "gaussian_conditional_proposal",
    "functional",
    "functional_names",
    "truth",
    "analytic_rb",
]

TAIL_CUT = -2.32


def make_target(rho: float) -> TargetDensity:
    """Bivariate Gaussian target with per-coordinate blocks."""
    if not (-1.0 < rho < 1.0):
        raise ValueError(f"rho must lie strictly inside (-1, 1), got {rho}")
    one_minus = 1.0 - rho * rho
    cond_sd = math.sqrt(one_minus)
    log_norm_cond = -0.5 * math.log(2.0 * math.pi * one_minus)

    def log_m(points):
        x = points[:, 0]
        y = points[:, 1]
        return -(x * x - 2.0 * rho * x * y + y * y) / (2.0 * one_minus)

    def log_m_conditional(s, block_values, off_block_values):
        mu = rho * float(off_block_values[0])
        z = (block_values[:, 0] - mu) / cond_sd
        return log_norm_cond - 0.5 * z * z

    def sample_exact(rng):
        z = rng.standard_normal(2)
        return np.array([z[0], rho * z[0] + cond_sd * z[1]])

    def sample_conditional(s, off_block_values, rng, size):
        mu = rho * float(off_block_values[0])
        return mu + cond_sd * rng.standard_normal((size, 1))

    return TargetDensity(
        dim=2,
        log_m=log_m,
        block_structure=((0,), (1,)),
        log_m_conditional=log_m_conditional,
        sample_exact=sample_exact,
        sample_conditional=sample_conditional,
    )


_T_DF = 5.0
_T_LOG_NORM = math.lgamma(3.0) - math.lgamma(2.5) - 0.5 * math.log(5.0 * math.pi)


def _student_family(loc: float, scale: float) -> ProposalFamily:
    def sample(n, xi, rng):
        return loc + scale * rng.standard_t(_T_DF, size=(n, 1))

    def log_q(points, xi):
        z = (points[:, 0] - loc) / scale
        return _T_LOG_NORM - 3.0 * np.log1p(z * z / _T_DF) - math.log(scale)

    def cdf(points, xi):
        return stdtr(_T_DF, (points - loc) / scale)

    def inverse_cdf(u, xi):
        return loc + scale * stdtrit(_T_DF, u)

    return ProposalFamily(dim=1, sample=sample, log_q=log_q, cdf=cdf, inverse_cdf=inverse_cdf)


def student_conditional_proposal(rho: float) -> Callable[[np.ndarray], ProposalFamily]:
    """Student-t(5) conditional proposals matched in mean and variance.

    The returned builder maps the off-block coordinate to a location-
    scale t family centered at the conditional mean with the conditional
    variance (t variance is df/(df-2), hence the 3/5 scale factor).
    """
    scale = math.sqrt(3.0 * (1.0 - rho * rho) / 5.0)

    def build(off_block_values: np.ndarray) -> ProposalFamily:
        return _student_family(rho * float(off_block_values[0]), scale)

    return build


def gaussian_conditional_proposal(rho: float) -> Callable[[np.ndarray], ProposalFamily]:
    """Exact-conditional Gaussian proposal builder."""
    sd = math.sqrt(1.0 - rho * rho)
    log_norm = -0.5 * math.log(2.0 * math.pi) - math.log(sd)

    def build(off_block_values: np.ndarray) -> ProposalFamily:
        mu = rho * float(off_block_values[0])

        def sample(n, xi, rng):
            return mu + sd * rng.standard_normal((n, 1))

        def log_q(points, xi):
            z = (points[:, 0] - mu) / sd
            return log_norm - 0.5 * z * z

        def cdf(points, xi):
            return ndtr((points - mu) / sd)

        def inverse_cdf(u, xi):
            return mu + sd * ndtri(u)

        return ProposalFamily(dim=1, sample=sample, log_q=log_q, cdf=cdf, inverse_cdf=inverse_cdf)

    return build


_FUNCTIONALS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "mean": lambda x: x[:, 0],
    "mean2": lambda x: x[:, 1],
    "variance": lambda x: x[:, 0] ** 2,
    "variance2": lambda x: x[:, 1] ** 2,
    "covariance": lambda x: x[:, 0] * x[:, 1],
    "tail": lambda x: (x[:, 0] < TAIL_CUT).astype(float),
    "tail2": lambda x: (x[:, 1] < TAIL_CUT).astype(float),
}


def functional_names() -> tuple[str, ...]:
    return tuple(_FUNCTIONALS)


def functional(name: str) -> Functional:
    if name not in _FUNCTIONALS:
        raise KeyError(f"unknown functional {name!r}; available: {sorted(_FUNCTIONALS)}")
    return Functional(name=name, f=_FUNCTIONALS[name])


def truth(name: str, rho: float) -> float:
    """Exact value of a reported functional under the target."""
    tail = float(ndtr(TAIL_CUT))
    values = {
        "mean": 0.0,
        "mean2": 0.0,
        "variance": 1.0,
        "variance2": 1.0,
        "covariance": rho,
        "tail": tail,
        "tail2": tail,
    }
    if name not in values:
        raise KeyError(f"unknown functional {name!r}")
    return values[name]


def analytic_rb(name: str, s: int, rho: float) -> Callable[[np.ndarray], np.ndarray]:
    """Closed-form conditional expectation of a functional given the off-block value.

    Returns a callable mapping the recorded off-block values (M, 1) of
    block ``s`` to E[g(X) | off-block coordinate]. When the functional
    depends only on the off-block coordinate the expectation degenerates
    to plugging the conditioning value in.
    """
    one_minus = 1.0 - rho * rho
    sd = math.sqrt(one_minus)

    def own_mean(rest):
        return rho * rest[:, 0]

    def own_square(rest):
        return (rho * rest[:, 0]) ** 2 + one_minus

    def product(rest):
        return rho * rest[:, 0] ** 2

    def tail_prob(rest):
        return ndtr((TAIL_CUT - rho * rest[:, 0]) / sd)

    def plug_value(rest):
        return rest[:, 0].copy()

    def plug_square(rest):
        return rest[:, 0] ** 2

    def plug_tail(rest):
        return (rest[:, 0] < TAIL_CUT).astype(float)

    table = {
        ("mean", 0): own_mean,
        ("mean", 1): plug_value,
        ("mean2", 0): plug_value,
        ("mean2", 1): own_mean,
        ("variance", 0): own_square,
        ("variance", 1): plug_square,
        ("variance2", 0): plug_square,
        ("variance2", 1): own_square,
        ("covariance", 0): product,
        ("covariance", 1): product,
        ("tail", 0): tail_prob,
        ("tail", 1): plug_tail,
        ("tail2", 0): plug_tail,
        ("tail2", 1): tail_prob,
    }
    if (name, s) not in table:
        raise KeyError(f"unknown functional {name!r} or block {s}")
    return table[(name, s)]
