"""Chain runners: interacting importance samplers and reference baselines.

The interacting samplers advance by one conditional importance sampling
step per iteration (or per block within a sweep), select the next state
among the weighted particles, and record the per-iteration particle
estimates that the reuse and control-variate estimators consume. The
baselines (exact Gibbs, Metropolis-within-Gibbs, random-walk
Metropolis) share the trace format; for sweep baselines the number of
inner updates per block is configurable so runs can be matched to an
N-particle sampler in target-density evaluations per sweep.

Every run is addressed by an integer seed. Iteration t of block s draws
from the stream ("step", t, s), so a run can be replayed or split
across processes without changing its output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .cis import CisConfig, cis_estimate, cis_step, cis_step_conditional
from .core import (
    ChainAbortError,
    ConfigurationError,
    DegenerateWeightsError,
    Functional,
    MiisError,
    TargetDensity,
    categorical_draw,
)
from .rng import substream

__all__ = ["SamplerSpec", "ChainTrace", "miis_run", "miis_gibbs_run", "baseline_run", "MIIS_KINDS", "BASELINE_KINDS"]

MIIS_FULL_KINDS = ("miis-simple", "miis-antithetic", "miis-random-walk")
MIIS_KINDS = MIIS_FULL_KINDS + ("miis-gibbs",)
BASELINE_KINDS = ("gibbs-exact", "mwg", "rwm")

_VARIANT_FOR_KIND = {
    "miis-simple": "simple",
    "miis-antithetic": "antithetic",
    "miis-random-walk": "random-walk",
}


@dataclass(frozen=True, eq=False)
class SamplerSpec:
    """Which chain to run and with what ingredients.

    ``cis`` holds the step configuration for the interacting samplers: a
    single :class:`CisConfig` for full-target kinds, one per block for
    "miis-gibbs". The Metropolis-within-Gibbs baseline reuses the
    per-block configs for their proposals. ``inner_repeats`` is the
    number of successive block updates per sweep for the sweep
    baselines, and ``rw_scale`` the proposal covariance for "rwm".
    """

    kind: str
    cis: Union[CisConfig, tuple, None] = None
    inner_repeats: int = 1
    rw_scale: Optional[np.ndarray] = None
    record_conditioning: bool = False

    def __post_init__(self):
        if self.kind not in MIIS_KINDS + BASELINE_KINDS:
            raise ConfigurationError(f"unknown sampler kind {self.kind!r}")
        if self.kind in MIIS_FULL_KINDS:
            if not isinstance(self.cis, CisConfig):
                raise ConfigurationError(f"{self.kind} requires a single CisConfig")
            expected = _VARIANT_FOR_KIND[self.kind]
            if self.cis.variant != expected:
                raise ConfigurationError(
                    f"{self.kind} requires a CisConfig with variant {expected!r}, got {self.cis.variant!r}"
                )
        if self.kind == "miis-gibbs":
            if isinstance(self.cis, CisConfig):
                object.__setattr__(self, "cis", (self.cis,))
            elif self.cis is not None:
                object.__setattr__(self, "cis", tuple(self.cis))
            if not self.cis or not all(isinstance(c, CisConfig) for c in self.cis):
                raise ConfigurationError("miis-gibbs requires one CisConfig per block")
        if self.kind == "mwg":
            if isinstance(self.cis, CisConfig):
                object.__setattr__(self, "cis", (self.cis,))
            elif self.cis is not None:
                object.__setattr__(self, "cis", tuple(self.cis))
            if not self.cis:
                raise ConfigurationError("mwg requires per-block proposal configs")
        if self.inner_repeats < 1:
            raise ConfigurationError("inner_repeats must be at least 1")
        if self.kind == "rwm":
            if self.rw_scale is None:
                raise ConfigurationError("rwm requires a proposal covariance rw_scale")
            object.__setattr__(self, "rw_scale", np.atleast_2d(np.asarray(self.rw_scale, dtype=float)))


@dataclass
class ChainTrace:
    """Recorded output of one chain after burn-in.

    ``states`` has shape ``(M, dim)``. ``retained`` holds the selected
    particle index per iteration (per block for sweep samplers).
    ``cis_estimates`` maps functional names to the per-iteration
    particle estimates of full-target interacting samplers;
    ``rb_estimates`` maps them to ``(M, n_blocks)`` per-block estimates
    for sweep samplers. ``moved`` flags iterations whose state differs
    bitwise from the previous one. ``n_evals`` counts target-density
    evaluations (batched calls count one per row) and ``work`` adds one
    unit per exact conditional draw, so runs of different methods can be
    compared on equal footing.
    """

    kind: str
    states: np.ndarray
    retained: Optional[np.ndarray]
    moved: np.ndarray
    cis_estimates: Optional[dict[str, np.ndarray]] = None
    rb_estimates: Optional[dict[str, np.ndarray]] = None
    n_evals: int = 0
    work: int = 0
    n_blocks: int = 1
    conditioning: Optional[list[np.ndarray]] = None

    @property
    def n_iterations(self) -> int:
        return self.states.shape[0]

    @property
    def acceptance(self) -> float:
        return float(self.moved.mean())


class _CountingTarget:
    """View of a target that counts density evaluations by batch row."""

    def __init__(self, target: TargetDensity):
        self._target = target
        self.count = 0
        self.dim = target.dim
        self.block_structure = target.block_structure
        self.n_blocks = target.n_blocks
        self.sample_exact = target.sample_exact
        self.sample_conditional = target.sample_conditional
        self.block_indices = target.block_indices
        self.off_block_indices = target.off_block_indices
        self.split_block = target.split_block
        self.join_block = target.join_block

    def log_m(self, points):
        points = np.asarray(points)
        self.count += points.shape[0]
        return self._target.log_m(points)

    def log_m_conditional(self, s, block_values, off_block_values):
        block_values = np.asarray(block_values)
        self.count += block_values.shape[0]
        return self._target.log_m_conditional(s, block_values, off_block_values)


def _functional_row(functionals, points, weights):
    """Weighted estimates of every functional over one particle matrix."""
    out = np.empty(len(functionals))
    for j, f in enumerate(functionals):
        values = np.asarray(f(points), dtype=float)
        est = float(weights @ values)
        if not math.isfinite(est):
            live = weights > 1e-300
            if not np.isfinite(values[live]).all():
                raise ChainAbortError(
                    f"functional {f.name!r} is non-finite at a particle with positive weight"
                )
        out[j] = est
    return out


def _check_m(m: int, burn_in: int):
    if m < 1:
        raise ConfigurationError("chain length must be at least 1")
    if burn_in < 0:
        raise ConfigurationError("burn-in must be nonnegative")


def miis_run(
    spec: SamplerSpec,
    target: TargetDensity,
    functionals: Sequence[Functional],
    y0: np.ndarray,
    m: int,
    burn_in: int,
    seed: int,
) -> ChainTrace:
    """Run a full-target interacting importance sampler.

    The retained index starts at 0 and the chain starts at ``y0``.
    Burn-in iterations are executed and discarded; the recorded
    per-iteration estimates come from the same particle systems that
    drove the selection.
    """
    if spec.kind not in MIIS_FULL_KINDS:
        raise ConfigurationError(f"miis_run cannot run kind {spec.kind!r}")
    _check_m(m, burn_in)
    counting = _CountingTarget(target)
    cfg: CisConfig = spec.cis
    names = tuple(f.name for f in functionals)

    y = np.array(y0, dtype=float)
    k = 0
    prev = y.copy()
    states = np.empty((m, target.dim))
    retained = np.empty(m, dtype=np.intp)
    moved = np.empty(m, dtype=bool)
    ests = {name: np.empty(m) for name in names}

    for t in range(burn_in + m):
        rng = substream(seed, "step", t, 0)
        try:
            ps = cis_step(y, k, cfg, counting, rng)
        except (DegenerateWeightsError, MiisError) as err:
            raise ChainAbortError(f"iteration {t}: {err}") from err
        k = categorical_draw(ps.weights, rng)
        y = ps.particles[k].copy()
        if t >= burn_in:
            i = t - burn_in
            states[i] = y
            retained[i] = k
            moved[i] = not np.array_equal(y, prev)
            row = _functional_row(functionals, ps.particles, ps.weights)
            for j, name in enumerate(names):
                ests[name][i] = row[j]
        prev = y

    return ChainTrace(
        kind=spec.kind,
        states=states,
        retained=retained,
        moved=moved,
        cis_estimates=ests,
        n_evals=counting.count,
        work=counting.count,
        n_blocks=1,
    )


def miis_gibbs_run(
    spec: SamplerSpec,
    target: TargetDensity,
    functionals: Sequence[Functional],
    y0: np.ndarray,
    m: int,
    burn_in: int,
    seed: int,
) -> ChainTrace:
    """Run the within-sweep interacting sampler, one step per block.

    Blocks are visited in their stored order; block s conditions on the
    already-updated blocks before it and the not-yet-updated blocks
    after it. The per-block particle estimates are taken at full points
    assembled from the block particles and those same conditioning
    values, which is what the averaged-block and control-variate
    estimators expect.
    """
    if spec.kind != "miis-gibbs":
        raise ConfigurationError(f"miis_gibbs_run cannot run kind {spec.kind!r}")
    _check_m(m, burn_in)
    if target.block_structure is None:
        raise ConfigurationError("miis-gibbs requires a target with block structure")
    d = target.n_blocks
    cfgs = spec.cis
    if len(cfgs) == 1 and d > 1:
        cfgs = cfgs * d
    if len(cfgs) != d:
        raise ConfigurationError(f"expected {d} per-block CisConfigs, got {len(cfgs)}")
    counting = _CountingTarget(target)
    names = tuple(f.name for f in functionals)

    y = np.array(y0, dtype=float)
    ks = np.zeros(d, dtype=np.intp)
    prev = y.copy()
    states = np.empty((m, target.dim))
    retained = np.empty((m, d), dtype=np.intp)
    moved = np.empty(m, dtype=bool)
    rb = {name: np.empty((m, d)) for name in names}
    block_idx = [target.block_indices(s) for s in range(d)]

    for t in range(burn_in + m):
        record = t >= burn_in
        i = t - burn_in
        for s in range(d):
            rng = substream(seed, "step", t, s)
            try:
                ps = cis_step_conditional(s, y, int(ks[s]), cfgs[s], counting, rng)
            except (DegenerateWeightsError, MiisError) as err:
                raise ChainAbortError(f"iteration {t}, block {s}: {err}") from err
            ks[s] = categorical_draw(ps.weights, rng)
            if record:
                n = ps.particles.shape[0]
                full = np.repeat(y[None, :], n, axis=0)
                full[:, block_idx[s]] = ps.particles
                row = _functional_row(functionals, full, ps.weights)
                for j, name in enumerate(names):
                    rb[name][i, s] = row[j]
            y = y.copy()
            y[block_idx[s]] = ps.particles[ks[s]]
        if record:
            states[i] = y
            retained[i] = ks
            moved[i] = not np.array_equal(y, prev)
        prev = y

    return ChainTrace(
        kind=spec.kind,
        states=states,
        retained=retained,
        moved=moved,
        rb_estimates=rb,
        n_evals=counting.count,
        work=counting.count,
        n_blocks=d,
    )


def _run_rwm(spec, counting, y0, m, burn_in, seed):
    cov = spec.rw_scale
    dim = counting.dim
    if cov.shape != (dim, dim):
        raise ConfigurationError(f"rw_scale shape {cov.shape} does not match dimension {dim}")
    chol = np.linalg.cholesky(cov)
    y = np.array(y0, dtype=float)
    log_m_cur = float(counting.log_m(y[None, :])[0])
    if log_m_cur == -np.inf:
        raise ChainAbortError("initial state lies outside the target support")
    prev = y.copy()
    states = np.empty((m, dim))
    moved = np.empty(m, dtype=bool)
    for t in range(burn_in + m):
        rng = substream(seed, "step", t, 0)
        prop = y + chol @ rng.standard_normal(dim)
        log_m_prop = float(counting.log_m(prop[None, :])[0])
        if np.log(rng.random()) <= log_m_prop - log_m_cur:
            y = prop
            log_m_cur = log_m_prop
        if t >= burn_in:
            i = t - burn_in
            states[i] = y
            moved[i] = not np.array_equal(y, prev)
        prev = y.copy()
    return states, moved


def _run_gibbs_exact(spec, counting, y0, m, burn_in, seed):
    if counting.sample_conditional is None:
        raise ConfigurationError("gibbs-exact requires a target with exact conditional samplers")
    d = counting.n_blocks
    block_idx = [counting.block_indices(s) for s in range(d)]
    y = np.array(y0, dtype=float)
    prev = y.copy()
    states = np.empty((m, counting.dim))
    moved = np.empty(m, dtype=bool)
    rest_records = [np.empty((m, counting.off_block_indices(s).size)) for s in range(d)] if spec.record_conditioning else None
    draws_done = 0
    for t in range(burn_in + m):
        for s in range(d):
            rng = substream(seed, "step", t, s)
            _, rest = counting.split_block(y, s)
            if spec.record_conditioning and t >= burn_in:
                rest_records[s][t - burn_in] = rest
            draws = np.asarray(counting.sample_conditional(s, rest, rng, spec.inner_repeats))
            draws_done += spec.inner_repeats
            y = y.copy()
            y[block_idx[s]] = draws[-1]
        if t >= burn_in:
            i = t - burn_in
            states[i] = y
            moved[i] = not np.array_equal(y, prev)
        prev = y
    return states, moved, rest_records, draws_done


def _run_mwg(spec, counting, y0, m, burn_in, seed):
    d = counting.n_blocks
    cfgs = spec.cis
    if len(cfgs) == 1 and d > 1:
        cfgs = cfgs * d
    if len(cfgs) != d:
        raise ConfigurationError(f"expected {d} per-block proposal configs, got {len(cfgs)}")
    block_idx = [counting.block_indices(s) for s in range(d)]
    inner = spec.inner_repeats
    y = np.array(y0, dtype=float)
    log_m_cur = float(counting.log_m(y[None, :])[0])
    if log_m_cur == -np.inf:
        raise ChainAbortError("initial state lies outside the target support")
    prev = y.copy()
    states = np.empty((m, counting.dim))
    moved = np.empty(m, dtype=bool)
    rest_records = [np.empty((m, counting.off_block_indices(s).size)) for s in range(d)] if spec.record_conditioning else None
    for t in range(burn_in + m):
        for s in range(d):
            rng = substream(seed, "step", t, s)
            block_y, rest = counting.split_block(y, s)
            if spec.record_conditioning and t >= burn_in:
                rest_records[s][t - burn_in] = rest
            family = cfgs[s].resolve_proposal(rest)
            props = family.sample(inner, None, rng)
            log_u = np.log(rng.random(inner))
            # Scoring the joint density at each proposal (other blocks held
            # at their current values) lets the current value carry across
            # blocks, which keeps the evaluation count at `inner` per block.
            pts = np.repeat(y[None, :], inner, axis=0)
            pts[:, block_idx[s]] = props
            log_m_props = np.asarray(counting.log_m(pts), dtype=float)
            log_q_all = np.asarray(family.log_q(np.vstack([block_y[None, :], props]), None), dtype=float)
            log_q_cur = log_q_all[0]
            for j in range(inner):
                if log_u[j] <= (log_m_props[j] - log_q_all[j + 1]) - (log_m_cur - log_q_cur):
                    log_m_cur = log_m_props[j]
                    log_q_cur = log_q_all[j + 1]
                    y = y.copy()
                    y[block_idx[s]] = props[j]
        if t >= burn_in:
            i = t - burn_in
            states[i] = y
            moved[i] = not np.array_equal(y, prev)
        prev = y
    return states, moved, rest_records


def baseline_run(
    spec: SamplerSpec,
    target: TargetDensity,
    functionals: Sequence[Functional],
    y0: np.ndarray,
    m: int,
    burn_in: int,
    seed: int,
) -> ChainTrace:
    """Run one of the reference chains (rwm, gibbs-exact, mwg).

    The trace carries no particle estimates; sweep baselines can record
    their per-block conditioning values (``spec.record_conditioning``)
    so closed-form conditional expectations can be attached afterwards.
    """
    if spec.kind not in BASELINE_KINDS:
        raise ConfigurationError(f"baseline_run cannot run kind {spec.kind!r}")
    _check_m(m, burn_in)
    counting = _CountingTarget(target)
    rest_records = None
    draw_units = 0
    if spec.kind == "rwm":
        states, moved = _run_rwm(spec, counting, y0, m, burn_in, seed)
        n_blocks = 1
    elif spec.kind == "gibbs-exact":
        states, moved, rest_records, draw_units = _run_gibbs_exact(spec, counting, y0, m, burn_in, seed)
        n_blocks = counting.n_blocks
    else:
        states, moved, rest_records = _run_mwg(spec, counting, y0, m, burn_in, seed)
        n_blocks = counting.n_blocks

    return ChainTrace(
        kind=spec.kind,
        states=states,
        retained=None,
        moved=moved,
        n_evals=counting.count,
        work=counting.count + draw_units,
        n_blocks=n_blocks,
        conditioning=rest_records,
    )
