"""Acceptance checks for the shipped estimator stack.

Every test here guards one of the package's numbered acceptance
criteria at its stated tolerance and prints a single PASS/FAIL line
(run with ``-s`` to see the checklist). The desk-scale experiment
criteria drive the shipped configs through the real runner, so this
module is the slow part of the suite; everything else stays green in
seconds.
"""

import math
import os
import shutil
import subprocess
import time
from pathlib import Path

import mpmath
import numpy as np
import pytest
from scipy.signal import lfilter
from scipy.stats import norm

from miis import CisConfig, no_auxiliary
from miis.cis import random_walk_auxiliary, random_walk_proposal, unbiasedness_check
from miis.core import Functional, ProposalFamily
from miis.estimators import (
    ControlVariateSet,
    CvPair,
    cv_estimate,
    default_batch_len,
    iact,
    miis_estimate,
    obm_covariance,
)
from miis.harness.config import load_config
from miis.harness.runner import run_experiment
from miis.models import bvn, mmpp, oracle
from miis.rng import substream
from miis.samplers import SamplerSpec, miis_run

REPO = Path(__file__).resolve().parents[1]
CONFIGS = REPO / "configs"


def report(tag: str, ok: bool, detail: str):
    print(f"{tag}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{tag}: {detail}"


def table_row(bundle: dict, functional: str, method: str) -> dict:
    for row in bundle["mse_rows"]:
        if row["functional"] == functional and row["method"] == method:
            return row
    raise AssertionError(f"no table row for ({functional}, {method})")


# ---------------------------------------------------------------------------
# slow experiment fixtures (shared by the criteria that read them)
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def high_correlation_bundle():
    return run_experiment(load_config(CONFIGS / "bvn_rho099.json"))


@pytest.fixture(scope="module")
def low_correlation_bundle():
    return run_experiment(load_config(CONFIGS / "bvn_rho025.json"))


@pytest.fixture(scope="module")
def event_model_bundle():
    return run_experiment(load_config(CONFIGS / "mmpp_sim.json"))


# ---------------------------------------------------------------------------
# A1: enumerated kernels hit the exact stationary law
# ---------------------------------------------------------------------------


def test_a1_discrete_kernels_have_exact_stationary_law():
    start = time.perf_counter()
    worst = 0.0
    for name, kernel, expected in oracle.standard_check_cases():
        rows = float(np.max(np.abs(kernel.sum(axis=1) - 1.0)))
        stat = float(np.max(np.abs(oracle.stationary_of(kernel) - expected)))
        worst = max(worst, rows, stat)
    elapsed = time.perf_counter() - start
    report(
        "A1",
        worst <= 1e-10 and elapsed < 10.0,
        f"max deviation {worst:.2e}, {elapsed:.2f} s",
    )


# ---------------------------------------------------------------------------
# A2: high-correlation control variates against the sweep baseline
# ---------------------------------------------------------------------------


def test_a2_high_correlation_cv_relative_mse(high_correlation_bundle):
    mean_rel = table_row(high_correlation_bundle, "mean", "miis-cv")["relative_mse"]
    var_rel = table_row(high_correlation_bundle, "variance", "miis-cv")["relative_mse"]
    report(
        "A2",
        mean_rel <= 0.10 and var_rel <= 0.10,
        f"mean {mean_rel:.4f} <= 0.10, variance {var_rel:.4f} <= 0.10",
    )


# ---------------------------------------------------------------------------
# A3: antithetic control variates at low correlation
# ---------------------------------------------------------------------------


def test_a3_antithetic_cv_relative_mse(low_correlation_bundle):
    cov_rel = table_row(low_correlation_bundle, "covariance", "miis-a-cv")["relative_mse"]
    report("A3", cov_rel <= 0.15, f"covariance {cov_rel:.4f} <= 0.15")


# ---------------------------------------------------------------------------
# A4: one conditional step is unbiased under stationary starts
# ---------------------------------------------------------------------------


def _independence_proposal(rho: float) -> ProposalFamily:
    cov = 1.5 * np.array([[1.0, rho], [rho, 1.0]])
    chol = np.linalg.cholesky(cov)
    log_norm = -math.log(2 * math.pi) - float(np.log(np.diag(chol)).sum())

    def sample(n, xi, rng):
        return rng.standard_normal((n, 2)) @ chol.T

    def log_q(points, xi):
        z = np.linalg.solve(chol, points.T)
        return log_norm - 0.5 * (z * z).sum(axis=0)

    return ProposalFamily(dim=2, sample=sample, log_q=log_q, is_xi_dependent=False)


def test_a4_one_step_estimates_are_unbiased():
    functionals = [
        Functional("x1", lambda pts: pts[:, 0]),
        Functional("x1sq", lambda pts: pts[:, 0] ** 2),
        Functional("x1x2", lambda pts: pts[:, 0] * pts[:, 1]),
    ]
    details = []
    ok = True
    for rho in (0.25, 0.5, 0.99):
        target = bvn.make_target(rho)
        cfg = CisConfig(
            n_particles=10,
            variant="simple",
            proposal=_independence_proposal(rho),
            aux=no_auxiliary(),
        )
        truths = {"x1": 0.0, "x1sq": 1.0, "x1x2": rho}
        for f in functionals:
            mean, se = unbiasedness_check(
                cfg, target, f, 10_000, substream(7404, "stationary", str(rho), f.name)
            )
            gap = abs(mean - truths[f.name]) / se
            ok = ok and gap <= 4.0
            details.append(f"rho={rho} {f.name} {gap:.2f} se")
    report("A4", ok, "; ".join(details))


# ---------------------------------------------------------------------------
# A5: event-model random-walk variant against the joint baseline
# ---------------------------------------------------------------------------


def test_a5_event_model_mixing_and_mse(event_model_bundle):
    b = event_model_bundle
    iact_ratio_num = np.mean(
        [table_row(b, name, "miis-rw")["mean_iact"] for name in b["functionals"]]
    )
    iact_ratio_den = np.mean(
        [table_row(b, name, "rwm")["mean_iact"] for name in b["functionals"]]
    )
    ratio = float(iact_ratio_num / iact_ratio_den)
    rel = float(
        np.mean([table_row(b, name, "miis-rw")["relative_mse"] for name in b["functionals"]])
    )
    report(
        "A5",
        ratio <= 0.7 and rel <= 0.5,
        f"IACT ratio {ratio:.3f} <= 0.7, mean relative MSE {rel:.3f} <= 0.5",
    )


# ---------------------------------------------------------------------------
# A6: a single unit-coefficient control variate collapses to particle reuse
# ---------------------------------------------------------------------------


def _stored_traces():
    """One chain trace per full-target sampler variant, two targets."""
    functionals = [
        Functional("x1", lambda pts: pts[:, 0]),
        Functional("x1sq", lambda pts: pts[:, 0] ** 2),
        Functional("x1x2", lambda pts: pts[:, 0] * pts[:, 1]),
    ]
    traces = []

    simple = SamplerSpec(
        kind="miis-simple",
        cis=CisConfig(
            n_particles=20,
            variant="simple",
            proposal=_independence_proposal(0.5),
            aux=no_auxiliary(),
        ),
    )
    traces.append(
        ("simple", functionals,
         miis_run(simple, bvn.make_target(0.5), functionals, np.zeros(2), 400, 50, 601))
    )

    iso = ProposalFamily(
        dim=2,
        sample=lambda n, xi, rng: rng.standard_normal((n, 2)),
        log_q=lambda pts, xi: norm.logpdf(pts).sum(axis=1),
        is_xi_dependent=False,
        cdf=lambda pts, xi: norm.cdf(pts),
        inverse_cdf=lambda u, xi: norm.ppf(u),
    )
    antithetic = SamplerSpec(
        kind="miis-antithetic",
        cis=CisConfig(n_particles=20, variant="antithetic", proposal=iso, aux=no_auxiliary()),
    )
    traces.append(
        ("antithetic", functionals,
         miis_run(antithetic, bvn.make_target(0.0), functionals, np.zeros(2), 400, 50, 602))
    )

    rw_cov = 0.25 * np.eye(2)
    walk = SamplerSpec(
        kind="miis-random-walk",
        cis=CisConfig(
            n_particles=8,
            variant="random-walk",
            proposal=random_walk_proposal(rw_cov),
            aux=random_walk_auxiliary(rw_cov),
        ),
    )
    traces.append(
        ("random-walk", functionals,
         miis_run(walk, bvn.make_target(0.3), functionals, np.zeros(2), 400, 50, 603))
    )

    model = mmpp.MmppModel(
        n_states=2,
        psi=np.array([10.0, 17.0]),
        q=np.array([1.0, 1.0]),
        prior_means=np.array([10.0, 17.0, 1.0, 1.0]),
        window=20.0,
    )
    times = mmpp.simulate_mmpp(model, substream(604, "dataset"))
    event_target = mmpp.make_target(model, times, 20.0)
    rates = [Functional(name, mmpp.functional(name).f) for name in mmpp.functional_names()]
    ev_cov = 0.01 * np.eye(4)
    event_walk = SamplerSpec(
        kind="miis-random-walk",
        cis=CisConfig(
            n_particles=6,
            variant="random-walk",
            proposal=random_walk_proposal(ev_cov),
            aux=random_walk_auxiliary(ev_cov),
        ),
    )
    start = mmpp.transform(model.psi, model.q)
    traces.append(
        ("event-random-walk", rates,
         miis_run(event_walk, event_target, rates, start, 250, 30, 605))
    )
    return traces


def test_a6_unit_coefficient_identity():
    worst = 0.0
    count = 0
    for label, functionals, trace in _stored_traces():
        for f in functionals:
            plain = miis_estimate(trace, f)
            forced = cv_estimate(
                trace,
                f,
                ControlVariateSet((CvPair(f, "full"),)),
                kappa=np.array([1.0]),
            ).estimate
            worst = max(worst, abs(forced - plain))
            count += 1
    report("A6", worst <= 1e-12, f"max gap {worst:.2e} over {count} trace/functional pairs")


# ---------------------------------------------------------------------------
# A7: likelihood and diagnostic numerics against independent oracles
# ---------------------------------------------------------------------------


def _naive_loglik(psi, q12, q21, times, window, dps=50):
    with mpmath.workdps(dps):
        gen = mpmath.matrix([[-q12, q12], [q21, -q21]])
        lam = mpmath.matrix([[psi[0], 0], [0, psi[1]]])
        row = mpmath.matrix([[q21 / (q12 + q21), q12 / (q12 + q21)]])
        a = gen - lam
        prev = 0.0
        for t in times:
            row = row * mpmath.expm(a * (t - prev)) * lam
            prev = t
        row = row * mpmath.expm(a * (window - prev))
        return float(mpmath.log(row[0, 0] + row[0, 1]))


def test_a7_numerical_oracles():
    rng = substream(7707, "instances")
    worst_rel = 0.0
    for _ in range(50):
        window = float(rng.uniform(0.5, 2.0))
        n = int(rng.integers(0, 11))
        times = np.sort(rng.uniform(0.0, window, size=n))
        psi1 = float(rng.uniform(0.5, 8.0))
        psi = np.array([psi1, psi1 + float(rng.uniform(0.5, 12.0))])
        q = rng.uniform(0.2, 3.0, size=2)
        model = mmpp.MmppModel(
            n_states=2, psi=psi, q=q, prior_means=np.concatenate([psi, q]), window=window
        )
        ours = mmpp.mmpp_loglik(model, (psi, q), times, window)
        ref = _naive_loglik(psi, q[0], q[1], times, window)
        worst_rel = max(worst_rel, abs(ours - ref) / abs(ref))
    lik_ok = worst_rel <= 1e-8

    phi, m_long = 0.9, 1_000_000
    noise = substream(7707, "ar1").standard_normal(m_long)
    series = lfilter([1.0], [1.0, -phi], noise)
    tau = iact(series)
    expected_tau = (1 + phi) / (1 - phi)
    iact_ok = abs(tau - expected_tau) <= 0.1 * expected_tau

    m_iid = 100_000
    iid = substream(7707, "iid").standard_normal(m_iid)
    var_of_mean = float(obm_covariance(iid, default_batch_len(m_iid))[0, 0]) / m_iid
    obm_ok = abs(var_of_mean - 1.0 / m_iid) <= 0.2 / m_iid

    report(
        "A7",
        lik_ok and iact_ok and obm_ok,
        f"likelihood rel err {worst_rel:.2e} <= 1e-8, "
        f"iact {tau:.2f} vs {expected_tau:.0f}, "
        f"obm {var_of_mean * m_iid:.3f}/M vs 1/M",
    )


# ---------------------------------------------------------------------------
# A8: worker count never changes the written table
# ---------------------------------------------------------------------------


def test_a8_thread_count_never_changes_the_table(tmp_path):
    exe = shutil.which("miis")
    assert exe is not None, "the 'miis' console script must be installed"
    env = {k: v for k, v in os.environ.items() if k != "MIIS_THREADS"}
    config = CONFIGS / "oracle_smoke.json"
    outputs = []
    for threads in (1, 8):
        cwd = tmp_path / f"threads{threads}"
        cwd.mkdir()
        proc = subprocess.run(
            [exe, "run", str(config), "--threads", str(threads), "--no-figures"],
            cwd=cwd,
            env=env,
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
        outputs.append((cwd / "results" / "oracle-smoke" / "mse_table.csv").read_bytes())
    report(
        "A8",
        outputs[0] == outputs[1],
        f"{len(outputs[0])} CSV bytes identical across thread counts 1 and 8",
    )
