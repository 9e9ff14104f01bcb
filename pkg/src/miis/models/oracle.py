"""Finite-support targets with exactly computable chain kernels.

On a finite atom set the interacting samplers have a finite augmented
state space (atom, retained index), so their transition matrices can be
enumerated exactly and the stationary law compared entrywise against
the target spread uniformly over the retained index. This is the
ground-truth check for the selection and weighting logic: no Monte
Carlo error, tolerance at float precision.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..core import (
    ConfigurationError,
    Functional,
    ProposalFamily,
    SupportMismatchError,
    TargetDensity,
)
from ..cis import CisConfig

__all__ = [
    "DiscreteOracleTarget",
    "make_proposal",
    "discrete_oracle_kernel",
    "discrete_oracle_gibbs_kernel",
    "stationary_of",
    "standard_check_cases",
    "functional",
    "functional_names",
]

_ATOM_TOL = 1e-9
_MAX_ATOMS = 5
_MAX_PARTICLES = 3


@dataclass(frozen=True, eq=False)
class DiscreteOracleTarget:
    """Finite target: one atom list per block, a joint probability table.

    ``atoms`` holds one strictly increasing 1-d array per coordinate
    block; ``probs`` has one axis per block and strictly positive
    entries summing to one.
    """

    atoms: tuple[np.ndarray, ...]
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(np.asarray(a, dtype=float) for a in self.atoms))
        object.__setattr__(self, "probs", np.asarray(self.probs, dtype=float))
        if self.probs.shape != tuple(a.size for a in self.atoms):
            raise ConfigurationError("probability table shape must match the atom counts per block")
        for a in self.atoms:
            if a.ndim != 1 or a.size == 0 or (np.diff(a) <= 0).any():
                raise ConfigurationError("each block needs a strictly increasing 1-d atom array")
        if (self.probs <= 0).any():
            raise ConfigurationError("target probabilities must be strictly positive")
        if abs(float(self.probs.sum()) - 1.0) > 1e-12:
            raise ConfigurationError("target probabilities must sum to one")

    @property
    def n_blocks(self) -> int:
        return len(self.atoms)

    def _match(self, values: np.ndarray, s: int) -> np.ndarray:
        """Indices of values in block s's atom list, -1 where unmatched."""
        atoms = self.atoms[s]
        idx = np.clip(np.searchsorted(atoms, values), 0, atoms.size - 1)
        left = np.clip(idx - 1, 0, atoms.size - 1)
        idx = np.where(np.abs(atoms[left] - values) < np.abs(atoms[idx] - values), left, idx)
        return np.where(np.abs(atoms[idx] - values) <= _ATOM_TOL, idx, -1)

    def to_target(self) -> TargetDensity:
        """View as a sampler target; off-atom points get zero density."""
        d = self.n_blocks
        log_probs = np.log(self.probs)

        def log_m(points):
            points = np.asarray(points, dtype=float)
            idx = [self._match(points[:, s], s) for s in range(d)]
            ok = np.all([ix >= 0 for ix in idx], axis=0)
            out = np.full(points.shape[0], -np.inf)
            if ok.any():
                sel = tuple(ix[ok] for ix in idx)
                out[ok] = log_probs[sel]
            return out

        def log_m_conditional(s, block_values, off_block_values):
            rest_axes = [t for t in range(d) if t != s]
            rest_idx = []
            for j, t in enumerate(rest_axes):
                ix = self._match(np.asarray([off_block_values[j]]), t)[0]
                if ix < 0:
                    raise ConfigurationError("conditioning value is not an atom")
                rest_idx.append(ix)
            slicer = [slice(None)] * d
            for t, ix in zip(rest_axes, rest_idx):
                slicer[t] = ix
            column = log_probs[tuple(slicer)]
            idx = self._match(np.asarray(block_values, dtype=float)[:, 0], s)
            out = np.full(len(idx), -np.inf)
            ok = idx >= 0
            out[ok] = column[idx[ok]]
            return out

        return TargetDensity(
            dim=d,
            log_m=log_m,
            block_structure=tuple((s,) for s in range(d)),
            log_m_conditional=log_m_conditional,
        )

    def expectation(self, f: Functional) -> float:
        """Exact expectation of a functional over the atom grid."""
        grids = np.meshgrid(*self.atoms, indexing="ij")
        points = np.column_stack([g.ravel() for g in grids])
        return float(self.probs.ravel() @ f(points))


def make_proposal(atoms: np.ndarray, probs: np.ndarray) -> ProposalFamily:
    """Categorical proposal over one block's atoms."""
    atoms = np.asarray(atoms, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if probs.shape != atoms.shape or (probs < 0).any() or abs(probs.sum() - 1.0) > 1e-12:
        raise ConfigurationError("proposal probabilities must match the atoms and sum to one")
    cum = np.cumsum(probs)
    with np.errstate(divide="ignore"):
        log_probs = np.log(probs)

    def sample(n, xi, rng):
        idx = np.minimum(np.searchsorted(cum, rng.random(n), side="right"), atoms.size - 1)
        return atoms[idx][:, None]

    def log_q(points, xi):
        values = np.asarray(points, dtype=float)[:, 0]
        idx = np.clip(np.searchsorted(atoms, values), 0, atoms.size - 1)
        left = np.clip(idx - 1, 0, atoms.size - 1)
        idx = np.where(np.abs(atoms[left] - values) < np.abs(atoms[idx] - values), left, idx)
        out = np.full(values.size, -np.inf)
        ok = np.abs(atoms[idx] - values) <= _ATOM_TOL
        out[ok] = log_probs[idx[ok]]
        return out

    return ProposalFamily(dim=1, sample=sample, log_q=log_q)


def _check_enumeration_size(cfg: CisConfig, n_atoms: int):
    if cfg.variant != "simple":
        raise ConfigurationError("exact kernel enumeration covers the simple variant only")
    if n_atoms > _MAX_ATOMS:
        raise ConfigurationError(f"exact enumeration caps atoms per block at {_MAX_ATOMS}")
    if cfg.n_particles > _MAX_PARTICLES:
        raise ConfigurationError(f"exact enumeration caps the particle count at {_MAX_PARTICLES}")


def _one_block_kernel(pi: np.ndarray, q: np.ndarray, n_particles: int) -> np.ndarray:
    """Exact kernel over (atom, retained index) for one importance step.

    ``pi`` may be unnormalized (conditional slices of a joint table).
    """
    if ((pi > 0) & (q <= 0)).any():
        raise SupportMismatchError("proposal assigns zero mass to an atom with positive target probability")
    n_atoms = pi.size
    n = n_particles
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(q > 0, pi / q, 0.0)
    size = n_atoms * n
    kernel = np.zeros((size, size))
    free_slots = n - 1
    for a in range(n_atoms):
        for l in range(n):
            row = a * n + l
            for combo in itertools.product(range(n_atoms), repeat=free_slots):
                particles = list(combo[:l]) + [a] + list(combo[l:])
                prob = float(np.prod(q[list(combo)])) if combo else 1.0
                weights = w[particles]
                total = weights.sum()
                if total <= 0:
                    raise SupportMismatchError("a particle assignment has zero total weight")
                weights = weights / total
                for k in range(n):
                    kernel[row, particles[k] * n + k] += prob * weights[k]
    return kernel


def discrete_oracle_kernel(cfg: CisConfig, target: DiscreteOracleTarget, proposal_probs: np.ndarray) -> np.ndarray:
    """Exact transition matrix of the full-target sampler on a finite target.

    State (atom a, retained k) maps to row ``a * N + k``. The stationary
    law of the returned matrix should put mass ``probs[a] / N`` on every
    such pair.
    """
    if target.n_blocks != 1:
        raise ConfigurationError("full-target enumeration expects a single-block target")
    _check_enumeration_size(cfg, target.atoms[0].size)
    return _one_block_kernel(target.probs, np.asarray(proposal_probs, dtype=float), cfg.n_particles)


def discrete_oracle_gibbs_kernel(
    cfgs: Sequence[CisConfig],
    target: DiscreteOracleTarget,
    proposal_probs: Sequence[np.ndarray],
) -> np.ndarray:
    """Exact sweep kernel of the block sampler on a finite target.

    States enumerate atom indices and retained indices per block,
    ordered with the atom grid outermost (C order over atoms, then over
    retained tuples). One application is a full sweep in block order;
    the stationary mass of each state is the joint probability of its
    atoms divided by the product of particle counts.
    """
    d = target.n_blocks
    if len(cfgs) != d or len(proposal_probs) != d:
        raise ConfigurationError("need one step config and one proposal vector per block")
    for s in range(d):
        _check_enumeration_size(cfgs[s], target.atoms[s].size)
    atom_counts = [a.size for a in target.atoms]
    particle_counts = [c.n_particles for c in cfgs]
    atom_states = list(itertools.product(*[range(c) for c in atom_counts]))
    k_states = list(itertools.product(*[range(n) for n in particle_counts]))
    index = {
        (a, k): i
        for i, (a, k) in enumerate(itertools.product(atom_states, k_states))
    }
    size = len(index)

    sweep = np.eye(size)
    for s in range(d):
        q = np.asarray(proposal_probs[s], dtype=float)
        block = np.zeros((size, size))
        for a_vec in atom_states:
            slicer = tuple(a_vec[t] if t != s else slice(None) for t in range(d))
            pi_cond = np.asarray(target.probs[slicer], dtype=float)
            small = _one_block_kernel(pi_cond, q, particle_counts[s])
            n_s = particle_counts[s]
            for k_vec in k_states:
                row = index[(a_vec, k_vec)]
                small_row = small[a_vec[s] * n_s + k_vec[s]]
                for a_new in range(atom_counts[s]):
                    for k_new in range(n_s):
                        p = small_row[a_new * n_s + k_new]
                        if p == 0.0:
                            continue
                        a_to = tuple(a_vec[t] if t != s else a_new for t in range(d))
                        k_to = tuple(k_vec[t] if t != s else k_new for t in range(d))
                        block[row, index[(a_to, k_to)]] += p
        sweep = sweep @ block
    return sweep


_FUNCTIONALS = {
    "identity": lambda points: points[:, 0],
    "square": lambda points: points[:, 0] ** 2,
}


def functional_names() -> tuple[str, ...]:
    return tuple(sorted(_FUNCTIONALS))


def functional(name: str) -> Functional:
    """Named functional of the first coordinate for chain experiments."""
    if name not in _FUNCTIONALS:
        raise KeyError(f"unknown functional {name!r}; available: {sorted(_FUNCTIONALS)}")
    return Functional(name=name, f=_FUNCTIONALS[name])


def stationary_of(kernel: np.ndarray) -> np.ndarray:
    """Stationary distribution of a row-stochastic matrix (least squares)."""
    size = kernel.shape[0]
    a = np.vstack([kernel.T - np.eye(size), np.ones(size)])
    b = np.zeros(size + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    return pi


def _expected_full(target: DiscreteOracleTarget, n_particles: int) -> np.ndarray:
    return np.repeat(target.probs / n_particles, n_particles)


def _expected_gibbs(target: DiscreteOracleTarget, particle_counts: Sequence[int]) -> np.ndarray:
    scale = float(np.prod(particle_counts))
    reps = int(scale)
    return np.repeat(target.probs.ravel() / scale, reps)


def standard_check_cases() -> list[tuple[str, np.ndarray, np.ndarray]]:
    """Named (kernel, expected stationary law) cases for the exact checks."""
    from ..core import no_auxiliary

    cases = []
    atoms = np.array([-1.0, 0.0, 2.0])
    pi = np.array([0.2, 0.3, 0.5])
    uniform = np.full(3, 1.0 / 3.0)
    skewed = np.array([0.6, 0.3, 0.1])
    single = DiscreteOracleTarget(atoms=(atoms,), probs=pi)

    for name, n, probs, small in [
        ("full-simple-uniform-N3", 3, uniform, False),
        ("full-simple-skewed-N3", 3, skewed, False),
        ("full-simple-uniform-N2", 2, uniform, True),
    ]:
        cfg = CisConfig(
            n_particles=n,
            variant="simple",
            proposal=make_proposal(atoms, probs),
            aux=no_auxiliary(),
            allow_small_n=small,
        )
        kernel = discrete_oracle_kernel(cfg, single, probs)
        cases.append((name, kernel, _expected_full(single, n)))

    joint = np.array([[0.04, 0.10, 0.06], [0.08, 0.20, 0.12], [0.10, 0.15, 0.15]])
    pair = DiscreteOracleTarget(atoms=(atoms, np.array([0.5, 1.5, 3.0])), probs=joint)
    q_blocks = [uniform, np.array([0.5, 0.3, 0.2])]
    cfgs = [
        CisConfig(
            n_particles=3,
            variant="simple",
            proposal=make_proposal(pair.atoms[s], q_blocks[s]),
            aux=no_auxiliary(),
        )
        for s in range(2)
    ]
    kernel = discrete_oracle_gibbs_kernel(cfgs, pair, q_blocks)
    cases.append(("gibbs-3x3-N3", kernel, _expected_gibbs(pair, [3, 3])))
    return cases
