"""Experiment configuration: JSON schema, strict validation, field paths.

Configs are plain JSON. Every key is checked against the schema for its
location and unknown keys are rejected, so a typo fails loudly instead
of silently running a different experiment. Error messages carry the
path of the offending field (``methods[2].cv.mean``).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional, Union

from ..models import bvn, mmpp, oracle
from .errors import ConfigError

__all__ = ["ConfigError", "MethodConfig", "ExperimentConfig", "load_config", "parse_config"]

EXPERIMENTS = ("bvn", "mmpp-sim", "mmpp-data", "oracle")
ESTIMATORS = ("mc", "miis", "rb", "cv")

_KINDS_FOR_EXPERIMENT = {
    "bvn": ("mwg", "gibbs-exact", "miis-gibbs"),
    "mmpp-sim": ("rwm", "miis-random-walk"),
    "mmpp-data": ("rwm", "miis-random-walk"),
    "oracle": ("mwg", "miis-simple"),
}

_PROPOSALS_BVN = ("student-t5", "exact-conditional")


def _fail(path: str, message: str):
    raise ConfigError(f"{path}: {message}")


def _require_mapping(value, path: str) -> dict:
    if not isinstance(value, dict):
        _fail(path, f"expected an object, got {type(value).__name__}")
    return value


def _reject_unknown(mapping: dict, path: str, allowed: set):
    for key in mapping:
        if key not in allowed:
            _fail(f"{path}.{key}" if path else str(key), "unknown key")


def _take(mapping: dict, key: str, path: str, kinds, required: bool = True, default=None):
    label = f"{path}.{key}" if path else key
    if key not in mapping:
        if required:
            _fail(label, "missing required key")
        return default
    value = mapping[key]
    if kinds is not None and not isinstance(value, kinds):
        names = kinds.__name__ if isinstance(kinds, type) else "/".join(k.__name__ for k in kinds)
        _fail(label, f"expected {names}, got {type(value).__name__}")
    if isinstance(value, bool) and kinds in (int, float, (int, float)):
        _fail(label, "expected a number, got a boolean")
    return value


def _float_list(mapping: dict, key: str, path: str, length: Optional[int] = None,
                required: bool = True, default=None):
    value = _take(mapping, key, path, list, required=required, default=None)
    if value is None:
        return default
    label = f"{path}.{key}" if path else key
    out = []
    for i, v in enumerate(value):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            _fail(f"{label}[{i}]", "expected a number")
        out.append(float(v))
    if length is not None and len(out) != length:
        _fail(label, f"expected {length} entries, got {len(out)}")
    return tuple(out)


@dataclass(frozen=True)
class MethodConfig:
    """One experiment arm: a sampler kind plus the estimator read off it."""

    label: str
    kind: str
    estimator: str
    reference: bool = False
    n_particles: Optional[int] = None
    variant: str = "simple"
    proposal: Optional[str] = None
    inner_repeats: int = 1
    cv: dict = field(default_factory=dict)
    rb_block: Union[str, int] = "all"


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    output_dir: str
    m: int
    burn_in: int
    replications: int
    base_seed: int
    functionals: tuple
    methods: tuple
    model: dict
    init: Union[str, tuple]
    threads: int = 1
    obm_batch: Optional[int] = None
    pilot: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)
    config_hash: str = ""

    @property
    def reference_label(self) -> str:
        return next(m.label for m in self.methods if m.reference)


def _functional_registry(experiment: str):
    if experiment == "bvn":
        return bvn.functional, bvn.functional_names()
    if experiment in ("mmpp-sim", "mmpp-data"):
        return mmpp.functional, mmpp.functional_names()
    return oracle.functional, oracle.functional_names()


def _parse_cv(raw, path: str, experiment: str, functionals, n_blocks: int) -> dict:
    """Control-variate pairs per functional; "*" is the fallback set."""
    raw = _require_mapping(raw, path)
    _, known = _functional_registry(experiment)
    out = {}
    for fname, pairs in raw.items():
        label = f"{path}.{fname}"
        if fname != "*" and fname not in functionals:
            _fail(label, "control variates keyed by a functional not in the experiment list")
        if not isinstance(pairs, list) or not pairs:
            _fail(label, "expected a nonempty list of [g, source] pairs")
        parsed = []
        for i, pair in enumerate(pairs):
            plabel = f"{label}[{i}]"
            if not isinstance(pair, list) or len(pair) != 2:
                _fail(plabel, "expected a [g, source] pair")
            gname, source = pair
            if gname not in known:
                _fail(plabel, f"unknown control-variate function {gname!r}")
            if source == "full":
                parsed.append((gname, "full"))
            elif isinstance(source, int) and not isinstance(source, bool):
                if not 0 <= source < n_blocks:
                    _fail(plabel, f"block index {source} outside 0..{n_blocks - 1}")
                parsed.append((gname, source))
            else:
                _fail(plabel, 'source must be a block index or "full"')
        out[fname] = tuple(parsed)
    return out


def _parse_method(raw, path: str, experiment: str, functionals, n_blocks: int) -> MethodConfig:
    raw = _require_mapping(raw, path)
    allowed = {"label", "kind", "estimator", "reference", "n_particles", "variant",
               "proposal", "inner_repeats", "cv", "rb_block"}
    _reject_unknown(raw, path, allowed)
    label = _take(raw, "label", path, str)
    kind = _take(raw, "kind", path, str)
    if kind not in _KINDS_FOR_EXPERIMENT[experiment]:
        _fail(f"{path}.kind",
              f"{kind!r} is not valid for {experiment!r}; choose from {_KINDS_FOR_EXPERIMENT[experiment]}")
    estimator = _take(raw, "estimator", path, str)
    if estimator not in ESTIMATORS:
        _fail(f"{path}.estimator", f"unknown estimator {estimator!r}; choose from {ESTIMATORS}")
    reference = _take(raw, "reference", path, bool, required=False, default=False)
    n_particles = _take(raw, "n_particles", path, int, required=False)
    variant = _take(raw, "variant", path, str, required=False, default="simple")
    if "variant" in raw and kind != "miis-gibbs":
        _fail(f"{path}.variant", "only configurable for the sweep sampler")
    if variant not in ("simple", "antithetic"):
        _fail(f"{path}.variant", f"unknown variant {variant!r}")
    proposal = _take(raw, "proposal", path, str, required=False)
    inner_repeats = _take(raw, "inner_repeats", path, int, required=False, default=1)
    if "inner_repeats" in raw and kind not in ("mwg", "gibbs-exact"):
        _fail(f"{path}.inner_repeats", "only the sweep baselines repeat block updates")
    if inner_repeats < 1:
        _fail(f"{path}.inner_repeats", "must be at least 1")
    rb_block = _take(raw, "rb_block", path, (str, int), required=False, default="all")
    if "rb_block" in raw and estimator != "rb":
        _fail(f"{path}.rb_block", 'only meaningful when estimator is "rb"')
    if isinstance(rb_block, str) and rb_block != "all":
        _fail(f"{path}.rb_block", 'expected a block index or "all"')

    needs_particles = kind.startswith("miis")
    if needs_particles and n_particles is None:
        _fail(f"{path}.n_particles", f"required for kind {kind!r}")
    if "n_particles" in raw and not needs_particles:
        _fail(f"{path}.n_particles", f"not used by kind {kind!r}")
    if n_particles is not None:
        if variant == "antithetic":
            if n_particles % 2 or n_particles // 2 < 3:
                _fail(f"{path}.n_particles", "antithetic sampling needs an even count of at least 6")
        elif n_particles < 3:
            _fail(f"{path}.n_particles", "must be at least 3")
    if experiment == "bvn" and kind in ("mwg", "miis-gibbs"):
        if proposal is None:
            _fail(f"{path}.proposal", f"required for kind {kind!r}; choose from {_PROPOSALS_BVN}")
        if proposal not in _PROPOSALS_BVN:
            _fail(f"{path}.proposal", f"unknown proposal {proposal!r}; choose from {_PROPOSALS_BVN}")
    elif proposal is not None:
        _fail(f"{path}.proposal", f"not configurable for kind {kind!r} in {experiment!r}")

    cv = {}
    if estimator == "cv":
        if "cv" not in raw:
            _fail(f"{path}.cv", 'required when estimator is "cv"')
        cv = _parse_cv(raw["cv"], f"{path}.cv", experiment, functionals, n_blocks)
        missing = [f for f in functionals if f not in cv and "*" not in cv]
        if missing:
            _fail(f"{path}.cv", f"no pairs for functionals {missing} and no \"*\" fallback")
        full_kind = kind in ("rwm", "miis-random-walk", "miis-simple")
        for fname, pairs in cv.items():
            for gname, source in pairs:
                if source == "full" and not kind.startswith("miis"):
                    _fail(f"{path}.cv.{fname}", 'source "full" needs an interacting sampler')
                if source == "full" and kind == "miis-gibbs":
                    _fail(f"{path}.cv.{fname}", 'source "full" does not apply to the sweep sampler')
                if isinstance(source, int) and full_kind:
                    _fail(f"{path}.cv.{fname}", "block sources need a sweep sampler")
                if isinstance(source, int) and kind == "mwg":
                    _fail(f"{path}.cv.{fname}", "the Metropolis-within-Gibbs chain carries no block estimates")
    elif "cv" in raw:
        _fail(f"{path}.cv", 'only meaningful when estimator is "cv"')

    if estimator == "miis" and not (kind.startswith("miis") and kind != "miis-gibbs"):
        _fail(f"{path}.estimator", '"miis" reads full-target particle estimates; use "rb" for sweep samplers')
    if estimator == "rb" and kind not in ("miis-gibbs", "gibbs-exact"):
        _fail(f"{path}.estimator", '"rb" needs per-block estimates from a sweep sampler')

    return MethodConfig(label=label, kind=kind, estimator=estimator, reference=reference,
                        n_particles=n_particles, variant=variant, proposal=proposal,
                        inner_repeats=inner_repeats, cv=cv, rb_block=rb_block)


def _parse_model(raw, experiment: str) -> dict:
    raw = _require_mapping(raw, "model")
    if experiment == "bvn":
        _reject_unknown(raw, "model", {"rho"})
        rho = _take(raw, "rho", "model", (int, float))
        if not -1.0 < float(rho) < 1.0:
            _fail("model.rho", "correlation must lie strictly inside (-1, 1)")
        return {"rho": float(rho)}
    if experiment == "mmpp-sim":
        _reject_unknown(raw, "model", {"psi", "q", "window", "prior_means", "datasets"})
        psi = _float_list(raw, "psi", "model", length=2)
        q = _float_list(raw, "q", "model", length=2)
        window = float(_take(raw, "window", "model", (int, float)))
        prior_means = _float_list(raw, "prior_means", "model", length=4)
        datasets = _take(raw, "datasets", "model", int, required=False, default=1)
        if psi[0] <= 0 or psi[1] <= psi[0]:
            _fail("model.psi", "intensities must be positive and strictly increasing")
        if min(q) <= 0:
            _fail("model.q", "switching rates must be positive")
        if window <= 0:
            _fail("model.window", "must be positive")
        if min(prior_means) <= 0:
            _fail("model.prior_means", "prior means must be positive")
        if datasets < 1:
            _fail("model.datasets", "must be at least 1")
        return {"psi": psi, "q": q, "window": window, "prior_means": prior_means,
                "datasets": datasets}
    if experiment == "mmpp-data":
        _reject_unknown(raw, "model", {"path", "prior_means", "window"})
        path = _take(raw, "path", "model", str)
        prior_means = _float_list(raw, "prior_means", "model", length=4)
        window = _take(raw, "window", "model", (int, float), required=False)
        if min(prior_means) <= 0:
            _fail("model.prior_means", "prior means must be positive")
        if window is not None and float(window) <= 0:
            _fail("model.window", "must be positive")
        return {"path": path, "prior_means": prior_means,
                "window": None if window is None else float(window)}
    _reject_unknown(raw, "model", {"atoms", "probs", "proposal_probs"})
    atoms = _float_list(raw, "atoms", "model")
    probs = _float_list(raw, "probs", "model", length=len(atoms))
    proposal_probs = _float_list(raw, "proposal_probs", "model", length=len(atoms),
                                 required=False, default=probs)
    if len(atoms) < 2:
        _fail("model.atoms", "need at least two atoms")
    if any(b <= a for a, b in zip(atoms, atoms[1:])):
        _fail("model.atoms", "must be strictly increasing")
    if min(probs) <= 0 or abs(sum(probs) - 1.0) > 1e-9:
        _fail("model.probs", "must be positive and sum to one")
    if min(proposal_probs) < 0 or abs(sum(proposal_probs) - 1.0) > 1e-9:
        _fail("model.proposal_probs", "must be nonnegative and sum to one")
    return {"atoms": atoms, "probs": probs, "proposal_probs": proposal_probs}


def _parse_pilot(raw) -> dict:
    raw = _require_mapping(raw, "pilot")
    _reject_unknown(raw, "pilot", {"iterations", "rounds", "path"})
    iterations = _take(raw, "iterations", "pilot", int, required=False, default=2000)
    rounds = _take(raw, "rounds", "pilot", int, required=False, default=4)
    path = _take(raw, "path", "pilot", str, required=False)
    if iterations < 100:
        _fail("pilot.iterations", "must be at least 100")
    if rounds < 1 or rounds > iterations:
        _fail("pilot.rounds", "must be between 1 and pilot.iterations")
    return {"iterations": iterations, "rounds": rounds, "path": path}


def _dim_for(experiment: str) -> int:
    if experiment == "bvn":
        return 2
    if experiment in ("mmpp-sim", "mmpp-data"):
        return 4
    return 1


def parse_config(raw: dict, config_hash: str = "") -> ExperimentConfig:
    """Validate a decoded JSON document into an ExperimentConfig."""
    raw = _require_mapping(raw, "")
    allowed = {"experiment", "output_dir", "m", "burn_in", "replications", "base_seed",
               "functionals", "methods", "model", "init", "threads", "obm_batch", "pilot"}
    _reject_unknown(raw, "", allowed)

    experiment = _take(raw, "experiment", "", str)
    if experiment not in EXPERIMENTS:
        _fail("experiment", f"unknown experiment {experiment!r}; choose from {EXPERIMENTS}")
    output_dir = _take(raw, "output_dir", "", str)
    m = _take(raw, "m", "", int)
    burn_in = _take(raw, "burn_in", "", int, required=False, default=0)
    replications = _take(raw, "replications", "", int)
    base_seed = _take(raw, "base_seed", "", int)
    threads = _take(raw, "threads", "", int, required=False, default=1)
    obm_batch = _take(raw, "obm_batch", "", int, required=False)
    if m < 1:
        _fail("m", "must be at least 1")
    if burn_in < 0:
        _fail("burn_in", "must be nonnegative")
    if replications < 1:
        _fail("replications", "must be at least 1")
    if threads < 1:
        _fail("threads", "must be at least 1")
    if obm_batch is not None and not 1 <= obm_batch < m:
        _fail("obm_batch", "must satisfy 1 <= obm_batch < m")

    lookup, known = _functional_registry(experiment)
    fnames = _take(raw, "functionals", "", list)
    if not fnames:
        _fail("functionals", "need at least one functional")
    for i, name in enumerate(fnames):
        if not isinstance(name, str) or name not in known:
            _fail(f"functionals[{i}]", f"unknown functional {name!r}; choose from {known}")
    if len(set(fnames)) != len(fnames):
        _fail("functionals", "duplicate names")

    model = _parse_model(_take(raw, "model", "", dict), experiment)
    pilot = _parse_pilot(raw.get("pilot", {})) if experiment.startswith("mmpp") else {}
    if "pilot" in raw and not experiment.startswith("mmpp"):
        _fail("pilot", f"not used by the {experiment!r} experiment")

    dim = _dim_for(experiment)
    init = raw.get("init", "origin")
    if isinstance(init, str):
        if init not in ("origin", "truth", "prior-draw"):
            _fail("init", f"unknown mode {init!r}")
        if init == "prior-draw" and not experiment.startswith("mmpp"):
            _fail("init", "prior-draw needs a model with a prior")
        if init == "truth" and experiment == "mmpp-data":
            _fail("init", "no true parameters are available for recorded data")
    elif isinstance(init, list):
        init = _float_list({"init": init}, "init", "", length=dim)
    else:
        _fail("init", "expected a mode name or a numeric vector")

    n_blocks = 2 if experiment == "bvn" else 1
    methods_raw = _take(raw, "methods", "", list)
    if not methods_raw:
        _fail("methods", "need at least one method")
    methods = tuple(
        _parse_method(entry, f"methods[{i}]", experiment, tuple(fnames), n_blocks)
        for i, entry in enumerate(methods_raw)
    )
    labels = [meth.label for meth in methods]
    if len(set(labels)) != len(labels):
        _fail("methods", f"duplicate labels {sorted({l for l in labels if labels.count(l) > 1})}")
    refs = [meth.label for meth in methods if meth.reference]
    if len(refs) != 1:
        _fail("methods", f"exactly one method must set \"reference\": true (found {len(refs)})")

    return ExperimentConfig(
        experiment=experiment,
        output_dir=output_dir,
        m=m,
        burn_in=burn_in,
        replications=replications,
        base_seed=base_seed,
        functionals=tuple(fnames),
        methods=methods,
        model=model,
        init=init,
        threads=threads,
        obm_batch=obm_batch,
        pilot=pilot,
        raw=raw,
        config_hash=config_hash,
    )


def load_config(path) -> ExperimentConfig:
    """Read, decode, and validate a JSON config file."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    try:
        raw = json.loads(blob)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return parse_config(raw, config_hash=hashlib.sha256(blob).hexdigest())
