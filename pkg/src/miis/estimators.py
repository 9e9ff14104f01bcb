"""Estimators over recorded chains.

Four estimate families share the trace format: the plain ergodic
average, the particle-reuse average of per-iteration weighted estimates,
the per-block (Rao-Blackwellized) versions of the same for sweep
samplers, and control-variate corrections whose coefficients are fitted
from overlapping batch means. Long-run variances come from overlapping
batch means as well, and mixing is summarized by the integrated
autocorrelation time with the initial-positive-sequence cutoff on
pairwise autocorrelation sums.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .core import EstimateError, Functional
from .samplers import ChainTrace

__all__ = [
    "CvPair",
    "ControlVariateSet",
    "CvResult",
    "EstimateReport",
    "mc_estimate",
    "miis_estimate",
    "rb_estimate",
    "obm_covariance",
    "cv_estimate",
    "iact",
    "mse_table",
]

IACT_FLOOR = 1e-2


@dataclass(frozen=True, eq=False)
class CvPair:
    """One control variate: a functional and the particle-estimate source.

    ``source`` is ``"full"`` for the full-target per-iteration estimates
    or a block index for the per-block estimates of sweep samplers.
    """

    g: Functional
    source: Union[str, int] = "full"

    def __post_init__(self):
        if self.source != "full" and not isinstance(self.source, int):
            raise EstimateError(f"control variate source must be 'full' or a block index, got {self.source!r}")
        if isinstance(self.source, int) and self.source < 0:
            raise EstimateError(f"control variate block index must be nonnegative, got {self.source}")


@dataclass(frozen=True, eq=False)
class ControlVariateSet:
    pairs: tuple[CvPair, ...]

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(self.pairs))
        if not self.pairs:
            raise EstimateError("control variate set must contain at least one pair")


@dataclass(frozen=True)
class CvResult:
    estimate: float
    kappa: np.ndarray


@dataclass
class EstimateReport:
    """Per-chain estimates and diagnostics assembled by the harness."""

    label: str
    estimates: dict[str, dict[str, float]] = field(default_factory=dict)
    kappa: dict[str, list[float]] = field(default_factory=dict)
    diagnostics: dict[str, object] = field(default_factory=dict)


def mc_estimate(trace: ChainTrace, f: Functional) -> float:
    """Ergodic average of a functional over the recorded states."""
    values = np.asarray(f(trace.states), dtype=float)
    if not np.isfinite(values).all():
        raise EstimateError(f"functional {f.name!r} is non-finite along the chain")
    return float(values.mean())


def miis_estimate(trace: ChainTrace, f: Functional) -> float:
    """Average of the per-iteration particle estimates (all particles reused)."""
    if trace.cis_estimates is None or f.name not in trace.cis_estimates:
        raise EstimateError(f"trace carries no particle estimates for {f.name!r}")
    return float(trace.cis_estimates[f.name].mean())


def rb_estimate(trace: ChainTrace, f: Functional, block: Union[str, int] = "all") -> float:
    """Average of the per-block particle estimates of a sweep sampler.

    ``block="all"`` averages the per-block estimates over blocks as well
    as iterations; an integer selects a single block.
    """
    if trace.rb_estimates is None or f.name not in trace.rb_estimates:
        raise EstimateError(f"trace carries no per-block estimates for {f.name!r}")
    series = trace.rb_estimates[f.name]
    if block == "all":
        return float(series.mean())
    if not isinstance(block, int) or not (0 <= block < series.shape[1]):
        raise EstimateError(f"block must be 'all' or an index below {series.shape[1]}, got {block!r}")
    return float(series[:, block].mean())


def obm_covariance(series: np.ndarray, batch_len: int) -> np.ndarray:
    """Overlapping-batch-means estimate of the long-run covariance.

    ``series`` is ``(M,)`` or ``(M, p)``; the result is ``(p, p)``.
    Every window of ``batch_len`` consecutive rows contributes its mean,
    and the scaled outer products of their deviations from the grand
    mean estimate the asymptotic covariance of the series (divide by M
    for the covariance of the series mean).
    """
    series = np.asarray(series, dtype=float)
    if series.ndim == 1:
        series = series[:, None]
    if series.ndim != 2:
        raise EstimateError("series must be 1-d or 2-d")
    m = series.shape[0]
    b = int(batch_len)
    if b < 1:
        raise EstimateError("batch length must be at least 1")
    if b >= m:
        raise EstimateError(f"batch length {b} must be smaller than the series length {m}")
    cum = np.vstack([np.zeros((1, series.shape[1])), np.cumsum(series, axis=0)])
    window_means = (cum[b:] - cum[:-b]) / b
    dev = window_means - series.mean(axis=0)
    scale = (m * b) / ((m - b) * (m - b + 1))
    return scale * (dev.T @ dev)


def default_batch_len(m: int) -> int:
    return max(1, int(math.isqrt(m)))


def _cv_series(trace: ChainTrace, pair: CvPair) -> np.ndarray:
    if pair.source == "full":
        if trace.cis_estimates is None or pair.g.name not in trace.cis_estimates:
            raise EstimateError(f"trace carries no particle estimates for control variate {pair.g.name!r}")
        return trace.cis_estimates[pair.g.name]
    if trace.rb_estimates is None or pair.g.name not in trace.rb_estimates:
        raise EstimateError(f"trace carries no per-block estimates for control variate {pair.g.name!r}")
    s = pair.source
    if not (0 <= s < trace.rb_estimates[pair.g.name].shape[1]):
        raise EstimateError(f"control variate block {s} out of range")
    return trace.rb_estimates[pair.g.name][:, s]


def cv_estimate(
    trace: ChainTrace,
    f: Functional,
    cvs: ControlVariateSet,
    batch_len: Optional[int] = None,
    kappa: Optional[np.ndarray] = None,
) -> CvResult:
    """Control-variate corrected ergodic average.

    Each pair contributes the difference between the functional value at
    the recorded state and its particle estimate from the configured
    source; those differences have mean zero at stationarity. The
    coefficient vector solves the long-run normal equations estimated by
    overlapping batch means, with a small ridge added when the
    control-covariance matrix is numerically ill conditioned. Pass
    ``kappa`` to skip the fit and use fixed coefficients.
    """
    m = trace.n_iterations
    b = default_batch_len(m) if batch_len is None else int(batch_len)
    p = len(cvs.pairs)
    u = np.empty((m, p))
    for j, pair in enumerate(cvs.pairs):
        g_states = np.asarray(pair.g(trace.states), dtype=float)
        u[:, j] = g_states - _cv_series(trace, pair)
    f_states = np.asarray(f(trace.states), dtype=float)
    if not np.isfinite(f_states).all():
        raise EstimateError(f"functional {f.name!r} is non-finite along the chain")

    if kappa is None:
        cov = obm_covariance(np.column_stack([u, f_states]), b)
        s_uu = cov[:p, :p]
        s_uf = cov[:p, p]
        cond = np.linalg.cond(s_uu)
        if not np.isfinite(cond) or cond > 1e12:
            ridge = 1e-8 * np.trace(s_uu) / p
            s_uu = s_uu + ridge * np.eye(p)
            cond = np.linalg.cond(s_uu)
            if not np.isfinite(cond) or cond > 1e15:
                raise EstimateError(
                    f"control covariance is singular beyond repair (condition number {cond:.3g})"
                )
        kappa = np.linalg.solve(s_uu, s_uf)
    else:
        kappa = np.asarray(kappa, dtype=float)
        if kappa.shape != (p,):
            raise EstimateError(f"kappa must have shape ({p},), got {kappa.shape}")

    estimate = float(f_states.mean() - kappa @ u.mean(axis=0))
    return CvResult(estimate=estimate, kappa=kappa)


def _autocorrelation(x: np.ndarray) -> np.ndarray:
    n = x.size
    xd = x - x.mean()
    nfft = 1 << (2 * n - 1).bit_length()
    fx = np.fft.rfft(xd, nfft)
    acov = np.fft.irfft(fx * np.conj(fx), nfft)[:n] / n
    return acov / acov[0]


def iact(series: np.ndarray) -> float:
    """Integrated autocorrelation time of a scalar series.

    Sums the empirical autocorrelations truncated where the pairwise
    sums rho(2m) + rho(2m+1) first become nonpositive, and floors the
    result at a small positive value.
    """
    series = np.asarray(series, dtype=float).ravel()
    m = series.size
    if m < 100:
        raise EstimateError(f"iact needs at least 100 iterations, got {m}")
    if series.std() == 0.0:
        raise EstimateError("degenerate chain: series has zero variance")
    rho = _autocorrelation(series)
    total = 0.0
    half = (m - 1) // 2
    for j in range(half):
        gamma = rho[2 * j] + rho[2 * j + 1]
        if gamma <= 0.0:
            break
        total += gamma
    return max(-1.0 + 2.0 * total, IACT_FLOOR)


def mse_table(
    estimates: dict[str, np.ndarray],
    truth: float,
    reference: str,
    cost: Optional[dict[str, float]] = None,
) -> dict[str, dict[str, float]]:
    """Mean squared errors of per-replication estimates against a truth.

    Returns one row per label with the MSE, the MSE relative to the
    reference label, and the relative MSE scaled by the cost ratio to
    the reference (cost omitted: scaled by 1).
    """
    if reference not in estimates:
        raise EstimateError(f"reference label {reference!r} not among the estimates")
    rows: dict[str, dict[str, float]] = {}
    mse = {}
    for label, values in estimates.items():
        values = np.asarray(values, dtype=float)
        if values.size < 2:
            raise EstimateError(f"need at least 2 replications per label, got {values.size} for {label!r}")
        mse[label] = float(np.mean((values - truth) ** 2))
    ref_mse = mse[reference]
    if ref_mse == 0.0:
        raise EstimateError("reference MSE is zero; relative errors are undefined")
    for label, value in mse.items():
        relative = value / ref_mse
        if cost is not None:
            if label not in cost or reference not in cost:
                raise EstimateError("cost must cover every label when provided")
            if cost[reference] <= 0:
                raise EstimateError("reference cost must be positive")
            adjusted = relative * (cost[label] / cost[reference])
        else:
            adjusted = relative
        rows[label] = {
            "mse": value,
            "relative_mse": relative,
            "time_adjusted_relative_mse": adjusted,
        }
    return rows
