"""Conditional importance sampling steps.

One step pins a retained particle at the previous state, draws the
remaining particles from the proposal family, and weights every particle
by target density over proposal density (times the auxiliary density
when an auxiliary stage is present). Three drawing variants are
provided: independent proposals, antithetic pairs coupled through the
proposal CDF, and random-walk proposals recentered on an auxiliary
point. For the random-walk variant the proposal and auxiliary densities
cancel algebraically, so the weights are computed directly from the
target; the cancellation is asserted against the configured kernels at
run time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .core import (
    AuxiliaryKernel,
    ConfigurationError,
    DegenerateWeightsError,
    Functional,
    ParticleSystem,
    ProposalFamily,
    SupportMismatchError,
    TargetDensity,
    WeightBoundError,
    EstimateError,
    normalize_log_weights,
)

__all__ = [
    "CisConfig",
    "ProposalBuilder",
    "cis_step",
    "cis_step_conditional",
    "cis_estimate",
    "unbiasedness_check",
    "random_walk_proposal",
    "random_walk_auxiliary",
]

VARIANTS = ("simple", "antithetic", "random-walk")

# A proposal can be given directly or as a builder that closes over the
# off-block coordinates of the current state (sweep samplers).
ProposalBuilder = Callable[[np.ndarray], ProposalFamily]


@dataclass(frozen=True, eq=False)
class CisConfig:
    """Configuration of one conditional importance sampling step.

    Parameters
    ----------
    n_particles : int
        Number of particles N, retained one included.
    variant : str
        "simple", "antithetic", or "random-walk".
    proposal : ProposalFamily or callable
        The proposal marginals, or a builder mapping off-block
        coordinates to them for block-conditional steps.
    aux : AuxiliaryKernel
        Auxiliary kernel; must have kind "random-walk" for the
        random-walk variant and is ignored by its weights.
    weight_bound : float, optional
        Declared upper bound on the raw weights. When set, every step
        asserts ``w_i <= weight_bound`` up to a 1e-9 relative slack.
    allow_small_n : bool
        Skip the particle-count floors (N >= 3, and N/2 >= 3 for
        antithetic pairs) that back the uniform ergodicity guarantees.
        Intended for exact-enumeration checks and degenerate examples.
    """

    n_particles: int
    variant: str
    proposal: Union[ProposalFamily, ProposalBuilder]
    aux: AuxiliaryKernel
    weight_bound: Optional[float] = None
    allow_small_n: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        n = self.n_particles
        if n < 1:
            raise ConfigurationError("n_particles must be at least 1")
        if self.variant == "antithetic":
            if n % 2 != 0:
                raise ConfigurationError("antithetic variant requires an even particle count")
            if n // 2 < 3 and not self.allow_small_n:
                raise ConfigurationError(
                    "antithetic variant requires at least 3 pairs for uniform ergodicity; "
                    "set allow_small_n to override"
                )
            if isinstance(self.proposal, ProposalFamily) and (
                self.proposal.cdf is None or self.proposal.inverse_cdf is None
            ):
                raise ConfigurationError("antithetic variant requires proposal cdf and inverse_cdf")
        elif n < 3 and not self.allow_small_n:
            raise ConfigurationError(
                f"{self.variant} variant requires at least 3 particles for uniform ergodicity; "
                "set allow_small_n to override"
            )
        if self.variant == "random-walk" and self.aux.kind != "random-walk":
            raise ConfigurationError("random-walk variant requires a random-walk auxiliary kernel")
        if self.weight_bound is not None and self.weight_bound <= 0:
            raise ConfigurationError("weight_bound must be positive")

    def resolve_proposal(self, off_block_values: Optional[np.ndarray] = None) -> ProposalFamily:
        if isinstance(self.proposal, ProposalFamily):
            return self.proposal
        if off_block_values is None:
            raise ConfigurationError(
                "proposal is a conditional builder; a full-target step needs a concrete ProposalFamily"
            )
        return self.proposal(off_block_values)


def _draw_particles(
    cfg: CisConfig,
    proposal: ProposalFamily,
    y: np.ndarray,
    k: int,
    xi: Optional[np.ndarray],
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw the particle matrix with particle k pinned to y."""
    n = cfg.n_particles
    if cfg.variant == "antithetic":
        if proposal.cdf is None or proposal.inverse_cdf is None:
            raise ConfigurationError("antithetic variant requires proposal cdf and inverse_cdf")
        half = n // 2
        base = proposal.sample(half, xi, rng)
        particles = np.vstack([base, proposal.inverse_cdf(1.0 - proposal.cdf(base, xi), xi)])
        # The retained particle's partner is deterministic: mirror y through
        # the proposal CDF and place it in the opposite half of its pair slot.
        mirrored = proposal.inverse_cdf(1.0 - proposal.cdf(y[None, :], xi), xi)[0]
        if k < half:
            particles[k] = y
            particles[k + half] = mirrored
        else:
            particles[k] = y
            particles[k - half] = mirrored
    else:
        particles = proposal.sample(n, xi, rng)
        particles[k] = y
    return particles


def _weigh(
    cfg: CisConfig,
    proposal: ProposalFamily,
    particles: np.ndarray,
    xi: Optional[np.ndarray],
    log_m_values: np.ndarray,
    y_index: int,
) -> np.ndarray:
    """Raw log-weights for a particle matrix, reduced form for random walks."""
    if cfg.variant == "random-walk":
        # Proposal and auxiliary densities cancel; verify the configured
        # kernels actually agree before trusting the reduced form.
        y = particles[y_index]
        lq = float(proposal.log_q(y[None, :], xi)[0])
        le = float(cfg.aux.log_eta(np.asarray(xi), y[None, :])[0])
        if not np.isclose(lq, le, rtol=0.0, atol=1e-6):
            raise ConfigurationError(
                "random-walk variant requires proposal and auxiliary densities of identical shape"
            )
        log_w = np.array(log_m_values, dtype=float)
    else:
        log_q = np.asarray(proposal.log_q(particles, xi), dtype=float)
        if log_q[y_index] == -np.inf:
            raise SupportMismatchError("proposal density vanishes at the retained particle")
        if (log_q == -np.inf).any():
            raise SupportMismatchError("proposal density vanishes at one of its own draws")
        if cfg.aux.kind == "none":
            log_w = log_m_values - log_q
        else:
            log_w = log_m_values - log_q + cfg.aux.log_eta(np.asarray(xi), particles)
    if np.isnan(log_w).any():
        raise ValueError("log-weights came out NaN; check target and proposal densities")
    if cfg.weight_bound is not None:
        limit = np.log(cfg.weight_bound) + np.log1p(1e-9)
        worst = float(log_w.max())
        if worst > limit:
            raise WeightBoundError(
                f"raw weight exp({worst:.6g}) exceeds declared bound {cfg.weight_bound:.6g}"
            )
    return log_w


def cis_step(
    y: np.ndarray,
    k: int,
    cfg: CisConfig,
    target: TargetDensity,
    rng: np.random.Generator,
) -> ParticleSystem:
    """Run one conditional importance sampling step on the full target.

    Particle ``k`` is pinned to the previous state ``y`` (its stored row
    compares equal bitwise); the remaining particles are drawn from the
    configured variant and all particles are weighted and normalized.

    Returns
    -------
    ParticleSystem
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (target.dim,):
        raise ConfigurationError(f"state shape {y.shape} does not match target dimension {target.dim}")
    if not (0 <= k < cfg.n_particles):
        raise ConfigurationError(f"retained index {k} outside 0..{cfg.n_particles - 1}")
    proposal = cfg.resolve_proposal()
    if proposal.dim != target.dim:
        raise ConfigurationError("proposal dimension does not match target dimension")

    xi = None
    if cfg.aux.kind != "none":
        xi = np.asarray(cfg.aux.sample(y, rng), dtype=float)

    particles = _draw_particles(cfg, proposal, y, k, xi, rng)
    log_m = np.asarray(target.log_m(particles), dtype=float)
    if np.isnan(log_m).any():
        raise ValueError("target log-density returned NaN")
    if log_m[k] == -np.inf:
        raise ConfigurationError("previous state lies outside the target support")

    log_w = _weigh(cfg, proposal, particles, xi, log_m, k)
    try:
        weights = normalize_log_weights(log_w)
    except DegenerateWeightsError as err:
        raise DegenerateWeightsError(f"degenerate particle system: {err}") from err
    return ParticleSystem(particles=particles, xi=xi, log_w=log_w, weights=weights, retained=k)


def cis_step_conditional(
    s: int,
    y: np.ndarray,
    k_s: int,
    cfg: CisConfig,
    target: TargetDensity,
    rng: np.random.Generator,
) -> ParticleSystem:
    """Run one conditional importance sampling step on block ``s``.

    Operates on the block-s coordinates of ``y`` with the remaining
    coordinates held fixed; the proposal may be a builder that closes
    over those off-block values. The returned particles live in the
    block coordinate space.
    """
    if target.block_structure is None or target.log_m_conditional is None:
        raise ConfigurationError("block-conditional steps need block_structure and log_m_conditional")
    if not (0 <= s < target.n_blocks):
        raise ConfigurationError(f"block index {s} outside 0..{target.n_blocks - 1}")
    y = np.asarray(y, dtype=float)
    block_y, rest = target.split_block(y, s)
    if not (0 <= k_s < cfg.n_particles):
        raise ConfigurationError(f"retained index {k_s} outside 0..{cfg.n_particles - 1}")
    proposal = cfg.resolve_proposal(rest)
    if proposal.dim != block_y.size:
        raise ConfigurationError("proposal dimension does not match block dimension")

    xi = None
    if cfg.aux.kind != "none":
        xi = np.asarray(cfg.aux.sample(block_y, rng), dtype=float)

    particles = _draw_particles(cfg, proposal, block_y, k_s, xi, rng)
    log_m = np.asarray(target.log_m_conditional(s, particles, rest), dtype=float)
    if np.isnan(log_m).any():
        raise ValueError("conditional log-density returned NaN")
    if log_m[k_s] == -np.inf:
        raise ConfigurationError("previous state lies outside the conditional support")

    log_w = _weigh(cfg, proposal, particles, xi, log_m, k_s)
    try:
        weights = normalize_log_weights(log_w)
    except DegenerateWeightsError as err:
        raise DegenerateWeightsError(f"degenerate particle system: {err}") from err
    return ParticleSystem(particles=particles, xi=xi, log_w=log_w, weights=weights, retained=k_s)


def cis_estimate(ps: ParticleSystem, f: Functional) -> float:
    """Weighted particle average of a functional over one system."""
    values = f(ps.particles)
    live = ps.weights > 1e-300
    if not np.isfinite(values[live]).all():
        raise EstimateError(f"functional {f.name!r} is non-finite at a particle with positive weight")
    return float(ps.weights @ np.where(live, values, 0.0))


def unbiasedness_check(
    cfg: CisConfig,
    target: TargetDensity,
    f: Functional,
    replications: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Monte Carlo check that one step estimates the target expectation.

    Draws the previous state from the exact target with a uniformly
    random retained index, runs one step, and averages the resulting
    particle estimates. Under the stationary initialization the mean of
    those estimates equals the target expectation of ``f``.

    Returns
    -------
    (mean, standard_error)
    """
    if target.sample_exact is None:
        raise ConfigurationError("unbiasedness_check needs a target with an exact sampler")
    if replications < 1000:
        raise ConfigurationError("unbiasedness_check needs at least 1000 replications")
    estimates = np.empty(replications)
    for r in range(replications):
        y = target.sample_exact(rng)
        k = int(rng.integers(cfg.n_particles))
        ps = cis_step(y, k, cfg, target, rng)
        estimates[r] = cis_estimate(ps, f)
    mean = float(estimates.mean())
    se = float(estimates.std(ddof=1) / np.sqrt(replications))
    return mean, se


def _gaussian_kernel(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    chol = np.linalg.cholesky(cov)
    dim = cov.shape[0]
    log_norm = -0.5 * dim * np.log(2.0 * np.pi) - np.log(np.diag(chol)).sum()
    return cov, chol, log_norm


def _gaussian_logpdf(diff: np.ndarray, chol: np.ndarray, log_norm: float) -> np.ndarray:
    z = np.linalg.solve(chol, diff.T)
    return log_norm - 0.5 * (z * z).sum(axis=0)


def random_walk_proposal(cov: np.ndarray) -> ProposalFamily:
    """Gaussian proposal family centered on the auxiliary point."""
    cov, chol, log_norm = _gaussian_kernel(cov)
    dim = cov.shape[0]

    def sample(n, xi, rng):
        return xi + rng.standard_normal((n, dim)) @ chol.T

    def log_q(points, xi):
        return _gaussian_logpdf(points - xi, chol, log_norm)

    return ProposalFamily(dim=dim, sample=sample, log_q=log_q, is_xi_dependent=True)


def random_walk_auxiliary(cov: np.ndarray) -> AuxiliaryKernel:
    """Gaussian auxiliary kernel centered on the previous state."""
    cov, chol, log_norm = _gaussian_kernel(cov)
    dim = cov.shape[0]

    def sample(y, rng):
        return y + chol @ rng.standard_normal(dim)

    def log_eta(xi, points):
        return _gaussian_logpdf(np.asarray(points) - np.asarray(xi), chol, log_norm)

    return AuxiliaryKernel(kind="random-walk", sample=sample, log_eta=log_eta)
