"""Shared types for particle systems and chains.

The samplers in this package share a small vocabulary: an unnormalized
target density evaluated in the log domain, a proposal family that can
draw and score batches of particles, an optional auxiliary kernel that
recenters proposals around the previous state, and the particle system
produced by one conditional importance sampling step.

All density callables are batched: ``log_m`` maps an ``(n, dim)`` array to
an ``(n,)`` array, and proposals draw ``(n, dim)`` blocks in one call.
Weight normalization is done with a log-sum-exp shift so that weights
spanning hundreds of orders of magnitude normalize without overflow.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

__all__ = [
    "MiisError",
    "ConfigurationError",
    "DegenerateWeightsError",
    "SupportMismatchError",
    "WeightBoundError",
    "EstimateError",
    "ChainAbortError",
    "TargetDensity",
    "ProposalFamily",
    "AuxiliaryKernel",
    "no_auxiliary",
    "ParticleSystem",
    "ChainState",
    "Functional",
    "normalize_log_weights",
    "categorical_draw",
]


class MiisError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(MiisError):
    """A sampler or step was configured inconsistently."""


class DegenerateWeightsError(MiisError):
    """Every weight in a particle system vanished."""


class SupportMismatchError(MiisError):
    """A proposal assigns zero density somewhere the target has mass."""


class WeightBoundError(MiisError):
    """A raw weight exceeded the declared bound."""


class EstimateError(MiisError):
    """An estimator could not be formed from the given trace."""


class ChainAbortError(MiisError):
    """A chain hit an unrecoverable state mid-run."""


@dataclass(frozen=True, eq=False)
class TargetDensity:
    """Unnormalized target density with optional block decomposition.

    Parameters
    ----------
    dim : int
        Dimension of the state space.
    log_m : callable
        Maps an ``(n, dim)`` array of points to an ``(n,)`` array of
        log-density values. ``-inf`` marks points outside the support;
        NaN is never a legal return value.
    block_structure : sequence of index sequences, optional
        Partition of ``range(dim)`` into update blocks for sweep samplers.
    log_m_conditional : callable, optional
        ``log_m_conditional(s, block_values, off_block_values)`` maps an
        ``(n, len(block s))`` array of block-s coordinates, with the
        remaining coordinates fixed at ``off_block_values`` (ascending
        index order), to ``(n,)`` log conditional densities. May differ
        from the restriction of ``log_m`` by an additive constant.
    sample_exact : callable, optional
        ``sample_exact(rng) -> (dim,)`` point drawn from the normalized
        target. Available for analytic models only; used by unbiasedness
        checks.
    sample_conditional : callable, optional
        ``sample_conditional(s, off_block_values, rng, size) -> (size, len(block s))``
        exact draws from the block-s conditional. Required by the exact
        Gibbs baseline.
    """

    dim: int
    log_m: Callable[[np.ndarray], np.ndarray]
    block_structure: Optional[tuple[tuple[int, ...], ...]] = None
    log_m_conditional: Optional[Callable[[int, np.ndarray, np.ndarray], np.ndarray]] = None
    sample_exact: Optional[Callable[[np.random.Generator], np.ndarray]] = None
    sample_conditional: Optional[Callable[[int, np.ndarray, np.random.Generator, int], np.ndarray]] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigurationError("target dimension must be at least 1")
        if self.block_structure is not None:
            blocks = tuple(tuple(int(i) for i in b) for b in self.block_structure)
            object.__setattr__(self, "block_structure", blocks)
            flat = sorted(i for b in blocks for i in b)
            if flat != list(range(self.dim)):
                raise ConfigurationError("block structure must partition the coordinate indices")

    @property
    def n_blocks(self) -> int:
        if self.block_structure is None:
            return 1
        return len(self.block_structure)

    def block_indices(self, s: int) -> np.ndarray:
        if self.block_structure is None:
            raise ConfigurationError("target has no block structure")
        return np.asarray(self.block_structure[s], dtype=np.intp)

    def off_block_indices(self, s: int) -> np.ndarray:
        idx = set(self.block_indices(s).tolist())
        return np.asarray([i for i in range(self.dim) if i not in idx], dtype=np.intp)

    def split_block(self, x: np.ndarray, s: int) -> tuple[np.ndarray, np.ndarray]:
        """Split a point into (block-s coordinates, remaining coordinates)."""
        x = np.asarray(x, dtype=float)
        return x[self.block_indices(s)], x[self.off_block_indices(s)]

    def join_block(self, s: int, block_values: np.ndarray, off_block_values: np.ndarray) -> np.ndarray:
        """Assemble a full point from block-s coordinates and the rest."""
        out = np.empty(self.dim)
        out[self.block_indices(s)] = block_values
        out[self.off_block_indices(s)] = off_block_values
        return out


@dataclass(frozen=True, eq=False)
class ProposalFamily:
    """Batched proposal marginals shared by the particles of one step.

    ``sample(n, xi, rng)`` draws ``n`` independent points as an
    ``(n, dim)`` array and ``log_q(points, xi)`` scores an ``(n, dim)``
    array, returning ``(n,)``. The auxiliary value ``xi`` is ``None``
    unless the family recenters on it (``is_xi_dependent``). ``cdf`` and
    ``inverse_cdf`` are per-coordinate maps of the same batched shape,
    required only by the antithetic sampler.
    """

    dim: int
    sample: Callable[[int, Optional[np.ndarray], np.random.Generator], np.ndarray]
    log_q: Callable[[np.ndarray, Optional[np.ndarray]], np.ndarray]
    cdf: Optional[Callable[[np.ndarray, Optional[np.ndarray]], np.ndarray]] = None
    inverse_cdf: Optional[Callable[[np.ndarray, Optional[np.ndarray]], np.ndarray]] = None
    is_xi_dependent: bool = False


@dataclass(frozen=True, eq=False)
class AuxiliaryKernel:
    """Auxiliary variable kernel drawn from the previous state.

    ``kind`` is ``"none"`` (no auxiliary stage, ``log_eta`` identically
    zero) or ``"random-walk"`` (a symmetric density centered on the
    previous state). ``log_eta(xi, points)`` is batched over ``points``.
    """

    kind: str
    sample: Optional[Callable[[np.ndarray, np.random.Generator], np.ndarray]]
    log_eta: Callable[[np.ndarray, np.ndarray], np.ndarray]

    def __post_init__(self):
        if self.kind not in ("none", "random-walk"):
            raise ConfigurationError(f"unknown auxiliary kernel kind {self.kind!r}")


def no_auxiliary() -> AuxiliaryKernel:
    """Auxiliary kernel of a sampler with no auxiliary stage."""
    return AuxiliaryKernel(
        kind="none",
        sample=None,
        log_eta=lambda xi, points: np.zeros(np.asarray(points).shape[0]),
    )


@dataclass(frozen=True, eq=False)
class ParticleSystem:
    """Output of one conditional importance sampling step.

    ``particles`` has shape ``(N, dim)`` (block dimension for sweep
    samplers), ``log_w`` holds the raw log-weights, ``weights`` their
    normalized counterparts, and ``retained`` is the 0-based index of the
    particle pinned to the previous state.
    """

    particles: np.ndarray
    xi: Optional[np.ndarray]
    log_w: np.ndarray
    weights: np.ndarray
    retained: int

    def __post_init__(self):
        n = self.particles.shape[0]
        if not (0 <= self.retained < n):
            raise ConfigurationError(f"retained index {self.retained} outside 0..{n - 1}")
        if self.log_w.shape != (n,) or self.weights.shape != (n,):
            raise ConfigurationError("weight vectors must have one entry per particle")
        if abs(float(self.weights.sum()) - 1.0) > 1e-9:
            raise ConfigurationError("normalized weights must sum to one")


@dataclass
class ChainState:
    """Current state and retained index (or per-block indices) of a chain."""

    y: np.ndarray
    k: "int | np.ndarray"


@dataclass(frozen=True, eq=False)
class Functional:
    """Named scalar function of the state, batched over points.

    ``f`` maps an ``(n, dim)`` array to an ``(n,)`` array.
    """

    name: str
    f: Callable[[np.ndarray], np.ndarray]

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(self.f(np.asarray(points, dtype=float)), dtype=float)


def normalize_log_weights(log_w: np.ndarray) -> np.ndarray:
    """Normalize log-weights to probabilities with a log-sum-exp shift.

    Entries of ``-inf`` map to weight 0. Raises
    :class:`DegenerateWeightsError` if every entry is ``-inf`` and
    ``ValueError`` on NaN input.
    """
    log_w = np.asarray(log_w, dtype=float)
    if log_w.ndim != 1 or log_w.size == 0:
        raise ValueError("log-weights must be a nonempty 1-d array")
    if np.isnan(log_w).any():
        raise ValueError("log-weights must not contain NaN")
    m = log_w.max()
    if m == -np.inf:
        raise DegenerateWeightsError("degenerate weight vector: all log-weights are -inf")
    z = np.exp(log_w - m)
    return z / z.sum()


def categorical_draw(weights: np.ndarray, rng: np.random.Generator) -> int:
    """Draw an index from a normalized weight vector.

    Uses the inverse-CDF method over the stored order of ``weights`` so
    that ties and selection order are deterministic given the stream.
    """
    weights = np.asarray(weights, dtype=float)
    if weights.ndim != 1 or weights.size == 0:
        raise ValueError("weights must be a nonempty 1-d array")
    if (weights < -1e-12).any():
        raise ValueError("weights must be nonnegative")
    total = float(weights.sum())
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"weights must sum to one, got {total!r}")
    cum = np.cumsum(weights)
    idx = int(np.searchsorted(cum, rng.random(), side="right"))
    return min(idx, weights.size - 1)
