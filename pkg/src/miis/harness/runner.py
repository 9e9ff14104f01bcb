"""Replication engine: datasets, chains, estimates, aggregation.

One experiment is a grid of (dataset, method, replication) chains. Every
chain owns a seed derived from the base seed and its grid coordinates,
so the result set is identical no matter how the work is scheduled or
how many worker processes run it. Workers are forked after the shared
context (targets, sampler specs) is built, and only plain numbers travel
back, so nothing needs to be picklable beyond the results.

The cost column feeding the time-adjusted MSE is the deterministic work
counter of each chain (density evaluations plus exact draws), not wall
time; wall times are recorded in the bundle metadata only. This keeps
the written tables byte-identical across reruns and worker counts.
"""

from __future__ import annotations

import math
import multiprocessing
import os
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..cis import CisConfig, random_walk_auxiliary, random_walk_proposal
from ..core import EstimateError, Functional, MiisError, TargetDensity, no_auxiliary
from ..estimators import (
    ControlVariateSet,
    CvPair,
    cv_estimate,
    iact,
    mc_estimate,
    miis_estimate,
    rb_estimate,
)
from ..models import bvn, mmpp, oracle
from ..rng import derive_seed, substream
from ..samplers import SamplerSpec, baseline_run, miis_gibbs_run, miis_run
from .config import ExperimentConfig, MethodConfig
from .errors import HarnessError
from .report import compute_rows

__all__ = ["HarnessError", "run_experiment", "pilot_covariance", "resolve_threads"]

RW_SCALE = 2.38**2 / 4.0


def resolve_threads(config_threads: int, cli_threads: Optional[int] = None) -> int:
    """Worker count: MIIS_THREADS beats the CLI flag beats the config."""
    env = os.environ.get("MIIS_THREADS")
    if env is not None:
        try:
            value = int(env)
        except ValueError:
            raise HarnessError(f"MIIS_THREADS must be an integer, got {env!r}")
        if value < 1:
            raise HarnessError("MIIS_THREADS must be at least 1")
        return value
    if cli_threads is not None:
        if cli_threads < 1:
            raise HarnessError("--threads must be at least 1")
        return cli_threads
    return config_threads


@dataclass
class _Dataset:
    """One target instance with everything a worker needs to run on it."""

    index: int
    target: TargetDensity
    truth: Optional[dict]
    init_point: Optional[np.ndarray]
    rw_cov: Optional[np.ndarray] = None
    prior_means: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)


def pilot_covariance(
    target: TargetDensity,
    theta0: np.ndarray,
    rng: np.random.Generator,
    iterations: int = 2000,
    rounds: int = 4,
) -> np.ndarray:
    """Diagonal posterior covariance from a short adaptive warm phase.

    Runs a random-walk chain whose step scale is nudged toward the 0.234
    acceptance rate between rounds; the last round's sample variances
    give the diagonal. The warm draws are never reused for estimation.
    """
    dim = theta0.size
    per_round = max(iterations // rounds, 10)
    scale = 0.1
    var = np.ones(dim)
    y = np.asarray(theta0, dtype=float).copy()
    log_m_cur = float(target.log_m(y[None, :])[0])
    if not np.isfinite(log_m_cur):
        raise HarnessError("pilot start point has zero target density")
    samples = np.empty((per_round, dim))
    for _ in range(rounds):
        accepted = 0
        sd = scale * np.sqrt(var)
        for i in range(per_round):
            prop = y + sd * rng.standard_normal(dim)
            log_m_prop = float(target.log_m(prop[None, :])[0])
            if math.log(rng.random()) < log_m_prop - log_m_cur:
                y = prop
                log_m_cur = log_m_prop
                accepted += 1
            samples[i] = y
        rate = accepted / per_round
        scale *= math.exp(2.0 * (rate - 0.234))
        fresh = samples.var(axis=0)
        var = np.where(fresh > 1e-12, fresh, var)
    return np.diag(var)


def _bvn_proposal(name: str, rho: float):
    if name == "student-t5":
        return bvn.student_conditional_proposal(rho)
    return bvn.gaussian_conditional_proposal(rho)


def _load_pilot_matrix(path: str) -> np.ndarray:
    import json

    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, ValueError) as exc:
        raise HarnessError(f"pilot covariance file {path}: {exc}") from exc
    arr = np.asarray(data, dtype=float)
    if arr.ndim == 1:
        arr = np.diag(arr)
    if arr.shape != (4, 4):
        raise HarnessError(f"pilot covariance file {path}: expected 4 or 4x4 numbers")
    return arr


def _prepare_mmpp_dataset(cfg: ExperimentConfig, index: int, base_seed: int) -> _Dataset:
    prior_means = np.asarray(cfg.model["prior_means"], dtype=float)
    if cfg.experiment == "mmpp-sim":
        psi = np.asarray(cfg.model["psi"], dtype=float)
        q = np.asarray(cfg.model["q"], dtype=float)
        window = float(cfg.model["window"])
        model = mmpp.MmppModel(n_states=2, psi=psi, q=q, prior_means=prior_means, window=window)
        times = mmpp.simulate_mmpp(model, substream(base_seed, "dataset", index))
        truth_point = mmpp.transform(psi, q)
    else:
        times, file_window = mmpp.read_event_times(cfg.model["path"])
        window = cfg.model["window"] if cfg.model["window"] is not None else file_window
        if window is None:
            raise HarnessError(
                f"{cfg.model['path']} has no window header; set model.window in the config"
            )
        model = mmpp.MmppModel(
            n_states=2,
            psi=np.array([1.0, 2.0]),
            q=np.array([1.0, 1.0]),
            prior_means=prior_means,
            window=float(window),
        )
        truth_point = None
    target = mmpp.make_target(model, times, float(window))

    if cfg.pilot.get("path"):
        sigma = _load_pilot_matrix(cfg.pilot["path"])
    else:
        start = truth_point if truth_point is not None else np.zeros(4)
        sigma = pilot_covariance(
            target,
            start,
            substream(base_seed, "pilot", index),
            iterations=cfg.pilot.get("iterations", 2000),
            rounds=cfg.pilot.get("rounds", 4),
        )
    rw_cov = RW_SCALE * sigma

    if isinstance(cfg.init, tuple):
        init_point = np.asarray(cfg.init, dtype=float)
    elif cfg.init == "origin":
        init_point = np.zeros(4)
    elif cfg.init == "truth":
        init_point = truth_point
    else:
        init_point = None
    return _Dataset(
        index=index,
        target=target,
        truth=None,
        init_point=init_point,
        rw_cov=rw_cov,
        prior_means=prior_means,
        meta={"n_events": int(times.size), "window": float(window)},
    )


def _prepare_datasets(cfg: ExperimentConfig, base_seed: int) -> list[_Dataset]:
    if cfg.experiment == "bvn":
        rho = cfg.model["rho"]
        target = bvn.make_target(rho)
        truth = {name: bvn.truth(name, rho) for name in cfg.functionals}
        point = np.asarray(cfg.init, dtype=float) if isinstance(cfg.init, tuple) else np.zeros(2)
        return [_Dataset(index=0, target=target, truth=truth, init_point=point)]
    if cfg.experiment == "oracle":
        atoms = np.asarray(cfg.model["atoms"], dtype=float)
        probs = np.asarray(cfg.model["probs"], dtype=float)
        discrete = oracle.DiscreteOracleTarget(atoms=(atoms,), probs=probs)
        truth = {name: discrete.expectation(oracle.functional(name)) for name in cfg.functionals}
        if isinstance(cfg.init, tuple):
            point = np.asarray(cfg.init, dtype=float)
        elif cfg.init == "truth":
            point = np.array([atoms[int(np.argmax(probs))]])
        else:
            point = np.array([atoms[0]])
        return [
            _Dataset(
                index=0,
                target=discrete.to_target(),
                truth=truth,
                init_point=point,
                meta={"atoms": atoms, "probs": probs},
            )
        ]
    count = cfg.model["datasets"] if cfg.experiment == "mmpp-sim" else 1
    return [_prepare_mmpp_dataset(cfg, index, base_seed) for index in range(count)]


def _build_spec(cfg: ExperimentConfig, method: MethodConfig, dataset: _Dataset) -> SamplerSpec:
    if cfg.experiment == "bvn":
        proposal = _bvn_proposal(method.proposal, cfg.model["rho"]) if method.proposal else None
        if method.kind == "miis-gibbs":
            block = CisConfig(
                n_particles=method.n_particles,
                variant=method.variant,
                proposal=proposal,
                aux=no_auxiliary(),
            )
            return SamplerSpec(kind="miis-gibbs", cis=(block, block))
        if method.kind == "mwg":
            block = CisConfig(n_particles=3, variant="simple", proposal=proposal, aux=no_auxiliary())
            return SamplerSpec(kind="mwg", cis=(block, block), inner_repeats=method.inner_repeats)
        return SamplerSpec(
            kind="gibbs-exact",
            inner_repeats=method.inner_repeats,
            record_conditioning=_needs_rb_fill(method),
        )
    if cfg.experiment == "oracle":
        proposal = oracle.make_proposal(
            np.asarray(cfg.model["atoms"], dtype=float),
            np.asarray(cfg.model["proposal_probs"], dtype=float),
        )
        if method.kind == "miis-simple":
            return SamplerSpec(
                kind="miis-simple",
                cis=CisConfig(
                    n_particles=method.n_particles,
                    variant="simple",
                    proposal=proposal,
                    aux=no_auxiliary(),
                ),
            )
        block = CisConfig(n_particles=3, variant="simple", proposal=proposal, aux=no_auxiliary())
        return SamplerSpec(kind="mwg", cis=(block,), inner_repeats=method.inner_repeats)
    if method.kind == "rwm":
        return SamplerSpec(kind="rwm", rw_scale=dataset.rw_cov)
    return SamplerSpec(
        kind="miis-random-walk",
        cis=CisConfig(
            n_particles=method.n_particles,
            variant="random-walk",
            proposal=random_walk_proposal(dataset.rw_cov),
            aux=random_walk_auxiliary(dataset.rw_cov),
        ),
    )


def _needs_rb_fill(method: MethodConfig) -> bool:
    if method.kind != "gibbs-exact":
        return False
    if method.estimator == "rb":
        return True
    return method.estimator == "cv"


def _functional_lookup(experiment: str):
    if experiment == "bvn":
        return bvn.functional
    if experiment.startswith("mmpp"):
        return mmpp.functional
    return oracle.functional


def _cv_sets(cfg: ExperimentConfig, method: MethodConfig) -> dict[str, ControlVariateSet]:
    lookup = _functional_lookup(cfg.experiment)
    sets = {}
    for fname in cfg.functionals:
        pairs = method.cv.get(fname, method.cv.get("*"))
        if pairs is None:
            continue
        sets[fname] = ControlVariateSet(
            tuple(CvPair(g=lookup(gname), source=source) for gname, source in pairs)
        )
    return sets


def _sampler_functionals(cfg: ExperimentConfig, method: MethodConfig) -> list:
    """Functionals a chain must record for this method.

    Control-variate pairs can reference functionals outside the reported
    set; the sampler has to evaluate those too so the per-block (or
    full-target) estimates exist when the estimator asks for them. The
    exact-conditional sweep is exempt because its per-block values are
    filled from closed forms after the run.
    """
    lookup = _functional_lookup(cfg.experiment)
    names = list(cfg.functionals)
    if method.estimator == "cv" and method.kind != "gibbs-exact":
        for pairs in method.cv.values():
            for gname, _ in pairs:
                if gname not in names:
                    names.append(gname)
    return [lookup(name) for name in names]


def _attach_analytic_rb(trace, cfg: ExperimentConfig, method: MethodConfig):
    """Fill per-block estimates of an exact-conditional sweep from closed forms."""
    rho = cfg.model["rho"]
    names = set()
    if method.estimator == "rb":
        names.update(cfg.functionals)
    for pairs in method.cv.values():
        names.update(gname for gname, _ in pairs)
    rb = {}
    for name in names:
        cols = [
            bvn.analytic_rb(name, s, rho)(np.asarray(trace.conditioning[s]))
            for s in range(trace.n_blocks)
        ]
        rb[name] = np.column_stack(cols)
    trace.rb_estimates = rb


def _draw_prior_init(dataset: _Dataset, base_seed: int, rep: int) -> np.ndarray:
    """Draw natural parameters from the prior, honoring the ordering constraint."""
    rng = substream(base_seed, "init", dataset.index, rep)
    means = dataset.prior_means
    for _ in range(1000):
        draw = rng.exponential(means)
        if draw[1] > draw[0]:
            return mmpp.transform(np.array([draw[0], draw[1]]), np.array([draw[2], draw[3]]))
    raise HarnessError("prior draw failed to satisfy the intensity ordering after 1000 tries")


# Worker context shared through fork; set in the parent before the pool starts.
_CTX: dict = {}


def _run_single(ds_index: int, method_index: int, rep: int) -> dict:
    cfg: ExperimentConfig = _CTX["config"]
    base_seed: int = _CTX["base_seed"]
    dataset: _Dataset = _CTX["datasets"][ds_index]
    method: MethodConfig = cfg.methods[method_index]
    spec: SamplerSpec = _CTX["specs"][ds_index][method_index]
    functionals = _CTX["functionals"]
    chain_functionals = _CTX["sampler_functionals"][method_index]
    cv_sets = _CTX["cv_sets"][method_index]
    out = {
        "dataset": ds_index,
        "method": method.label,
        "replication": rep,
        "ok": True,
    }
    start = time.perf_counter()
    try:
        y0 = dataset.init_point
        if y0 is None:
            y0 = _draw_prior_init(dataset, base_seed, rep)
        seed = derive_seed(base_seed, "chain", ds_index, method.label, rep)
        if spec.kind == "miis-gibbs":
            trace = miis_gibbs_run(spec, dataset.target, chain_functionals, y0, cfg.m, cfg.burn_in, seed)
        elif spec.kind.startswith("miis"):
            trace = miis_run(spec, dataset.target, chain_functionals, y0, cfg.m, cfg.burn_in, seed)
        else:
            trace = baseline_run(spec, dataset.target, chain_functionals, y0, cfg.m, cfg.burn_in, seed)
        if cfg.experiment == "bvn" and _needs_rb_fill(method):
            _attach_analytic_rb(trace, cfg, method)

        estimates = {}
        mc_values = {}
        iact_values = {}
        for f in functionals:
            if method.estimator == "mc":
                estimates[f.name] = mc_estimate(trace, f)
            elif method.estimator == "miis":
                estimates[f.name] = miis_estimate(trace, f)
            elif method.estimator == "rb":
                estimates[f.name] = rb_estimate(trace, f, block=method.rb_block)
            else:
                estimates[f.name] = cv_estimate(
                    trace, f, cv_sets[f.name], batch_len=cfg.obm_batch
                ).estimate
            mc_values[f.name] = mc_estimate(trace, f)
            try:
                iact_values[f.name] = iact(f(trace.states))
            except EstimateError:
                iact_values[f.name] = float("nan")
        out.update(
            estimates=estimates,
            mc_estimates=mc_values,
            iact=iact_values,
            acceptance=trace.acceptance,
            n_evals=int(trace.n_evals),
            work=int(trace.work),
            wall_seconds=time.perf_counter() - start,
        )
    except MiisError as exc:
        out.update(ok=False, error=f"{type(exc).__name__}: {exc}", wall_seconds=time.perf_counter() - start)
    return out


def _pool_entry(task):
    return _run_single(*task)


def _execute(tasks: list, threads: int) -> list:
    if threads <= 1 or len(tasks) <= 1:
        return [_run_single(*task) for task in tasks]
    ctx = multiprocessing.get_context("fork")
    chunk = max(len(tasks) // (threads * 4), 1)
    with ctx.Pool(processes=threads) as pool:
        return pool.map(_pool_entry, tasks, chunksize=chunk)


def _aggregate(cfg: ExperimentConfig, datasets: list, results: list) -> dict:
    by_key = {}
    failures = []
    for res in results:
        if res["ok"]:
            by_key[(res["dataset"], res["method"], res["replication"])] = res
        else:
            failures.append(
                {
                    "dataset": res["dataset"],
                    "method": res["method"],
                    "replication": res["replication"],
                    "error": res["error"],
                }
            )

    labels = [m.label for m in cfg.methods]
    n_ds = len(datasets)

    def reps_for(ds, label):
        return [
            by_key[(ds, label, r)]
            for r in range(cfg.replications)
            if (ds, label, r) in by_key
        ]

    truths = []
    for ds, dataset in enumerate(datasets):
        if dataset.truth is not None:
            truths.append({name: float(dataset.truth[name]) for name in cfg.functionals})
        else:
            pooled = {}
            for name in cfg.functionals:
                values = [
                    res["mc_estimates"][name]
                    for label in labels
                    for res in reps_for(ds, label)
                ]
                if not values:
                    raise HarnessError(f"no successful chains on dataset {ds}; cannot pool a truth value")
                pooled[name] = float(np.mean(values))
            truths.append(pooled)

    estimates_out = {}
    mc_out = {}
    diagnostics_out = {}
    for label in labels:
        estimates_out[label] = {
            name: [[res["estimates"][name] for res in reps_for(ds, label)] for ds in range(n_ds)]
            for name in cfg.functionals
        }
        diagnostics_out[label] = {
            "iact": {
                name: [[res["iact"][name] for res in reps_for(ds, label)] for ds in range(n_ds)]
                for name in cfg.functionals
            },
            "acceptance": [[res["acceptance"] for res in reps_for(ds, label)] for ds in range(n_ds)],
            "work": [[res["work"] for res in reps_for(ds, label)] for ds in range(n_ds)],
            "n_evals": [[res["n_evals"] for res in reps_for(ds, label)] for ds in range(n_ds)],
            "wall_seconds": [
                [res["wall_seconds"] for res in reps_for(ds, label)] for ds in range(n_ds)
            ],
        }
        if cfg.experiment.startswith("mmpp"):
            mc_out[label] = {
                name: [[res["mc_estimates"][name] for res in reps_for(ds, label)] for ds in range(n_ds)]
                for name in cfg.functionals
            }

    rows = compute_rows(
        list(cfg.functionals),
        labels,
        cfg.reference_label,
        truths,
        estimates_out,
        diagnostics_out,
    )
    return {
        "rows": rows,
        "truth": truths,
        "estimates": estimates_out,
        "mc_estimates": mc_out,
        "diagnostics": diagnostics_out,
        "failures": failures,
    }


def run_experiment(
    cfg: ExperimentConfig,
    threads: Optional[int] = None,
    base_seed: Optional[int] = None,
) -> dict:
    """Run every chain of an experiment and assemble the result bundle.

    ``threads`` and ``base_seed`` are command-line overrides; the
    MIIS_THREADS environment variable has the last word on workers.
    Returns the bundle; the caller decides where it gets written.
    """
    seed = cfg.base_seed if base_seed is None else base_seed
    workers = resolve_threads(cfg.threads, threads)
    start = time.perf_counter()
    datasets = _prepare_datasets(cfg, seed)
    lookup = _functional_lookup(cfg.experiment)
    functionals = [lookup(name) for name in cfg.functionals]
    specs = [
        [_build_spec(cfg, method, dataset) for method in cfg.methods] for dataset in datasets
    ]
    _CTX.clear()
    _CTX.update(
        config=cfg,
        base_seed=seed,
        datasets=datasets,
        specs=specs,
        functionals=functionals,
        sampler_functionals=[_sampler_functionals(cfg, method) for method in cfg.methods],
        cv_sets=[_cv_sets(cfg, method) for method in cfg.methods],
    )
    tasks = [
        (ds, mi, rep)
        for ds in range(len(datasets))
        for mi in range(len(cfg.methods))
        for rep in range(cfg.replications)
    ]
    try:
        results = _execute(tasks, workers)
    finally:
        _CTX.clear()

    summary = _aggregate(cfg, datasets, results)
    bundle = {
        "experiment": cfg.experiment,
        "config": cfg.raw,
        "config_hash": cfg.config_hash,
        "base_seed": seed,
        "threads": workers,
        "functionals": list(cfg.functionals),
        "methods": [m.label for m in cfg.methods],
        "reference": cfg.reference_label,
        "replications": cfg.replications,
        "datasets": [
            {k: v for k, v in ds.meta.items() if not isinstance(v, np.ndarray)}
            for ds in datasets
        ],
        "truth": summary["truth"],
        "mse_rows": summary["rows"],
        "estimates": summary["estimates"],
        "mc_estimates": summary["mc_estimates"],
        "diagnostics": summary["diagnostics"],
        "failures": summary["failures"],
        "wall_seconds_total": time.perf_counter() - start,
    }
    return bundle
