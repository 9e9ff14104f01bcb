"""Tests for the shared vocabulary: weights, draws, targets, streams.

Covers log-sum-exp normalization against extended precision, the
deterministic inverse-CDF categorical draw, target block plumbing,
particle-system validation, and the seed-derivation helpers.
"""

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from miis import (
    AuxiliaryKernel,
    ConfigurationError,
    DegenerateWeightsError,
    Functional,
    ParticleSystem,
    TargetDensity,
    categorical_draw,
    no_auxiliary,
    normalize_log_weights,
)
from miis.rng import derive_seed, spawn_key, substream

# ---------------------------------------------------------------------------
# normalize_log_weights
# ---------------------------------------------------------------------------


def test_normalize_small_integers():
    w = normalize_log_weights(np.log([1.0, 2.0, 3.0]))
    np.testing.assert_allclose(w, [1 / 6, 2 / 6, 3 / 6], rtol=1e-14)


@pytest.mark.parametrize("c", [0.0, -5.0, 123.456, 1e300, -1e300])
def test_normalize_constant_is_uniform(c):
    w = normalize_log_weights(np.full(4, c))
    np.testing.assert_allclose(w, 0.25, rtol=1e-14)


def test_normalize_extreme_gap_matches_extended_precision():
    log_w = np.array([0.0, -1000.0])
    w = normalize_log_weights(log_w)
    with mpmath.workdps(60):
        z = [mpmath.e**v for v in log_w]
        total = mpmath.fsum(z)
        expected = [float(v / total) for v in z]
    assert np.isfinite(w).all()
    np.testing.assert_allclose(w, expected, rtol=1e-14)
    assert w[0] == pytest.approx(1.0)


def test_normalize_minus_inf_entries_get_zero_weight():
    w = normalize_log_weights(np.array([0.0, -np.inf, 0.0]))
    np.testing.assert_allclose(w, [0.5, 0.0, 0.5])


def test_normalize_all_minus_inf_raises():
    with pytest.raises(DegenerateWeightsError):
        normalize_log_weights(np.array([-np.inf, -np.inf]))


def test_normalize_rejects_nan_and_bad_shape():
    with pytest.raises(ValueError):
        normalize_log_weights(np.array([0.0, np.nan]))
    with pytest.raises(ValueError):
        normalize_log_weights(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        normalize_log_weights(np.array([]))


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(min_value=-300, max_value=300), min_size=1, max_size=12),
    st.floats(min_value=-50, max_value=50),
)
def test_normalize_invariants(values, shift):
    log_w = np.asarray(values)
    w = normalize_log_weights(log_w)
    assert (w >= 0).all()
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    # order preserved: bigger log-weight never gets a smaller weight
    order = np.argsort(log_w, kind="stable")
    assert (np.diff(w[order]) >= -1e-15).all()
    np.testing.assert_allclose(normalize_log_weights(log_w + shift), w, atol=1e-12)


# ---------------------------------------------------------------------------
# categorical_draw
# ---------------------------------------------------------------------------


def test_draw_degenerate_weight_always_selected():
    rng = substream(1, "draw")
    for _ in range(50):
        assert categorical_draw(np.array([0.0, 1.0, 0.0]), rng) == 1


@pytest.mark.parametrize(
    "weights",
    [np.full(4, 0.25), np.array([1 / 6, 2 / 6, 3 / 6])],
)
def test_draw_frequencies_match_weights(weights):
    rng = substream(2, "freq", len(weights))
    n = 100_000
    counts = np.zeros(len(weights))
    for _ in range(n):
        counts[categorical_draw(weights, rng)] += 1
    freq = counts / n
    se = np.sqrt(weights * (1 - weights) / n)
    assert (np.abs(freq - weights) <= 4 * se).all()


def test_draw_rejects_bad_weights():
    rng = substream(3)
    with pytest.raises(ValueError):
        categorical_draw(np.array([0.5, 0.6]), rng)
    with pytest.raises(ValueError):
        categorical_draw(np.array([1.5, -0.5]), rng)
    with pytest.raises(ValueError):
        categorical_draw(np.array([]), rng)


def test_draw_is_deterministic_given_stream():
    a = [categorical_draw(np.full(3, 1 / 3), substream(7, "d", i)) for i in range(20)]
    b = [categorical_draw(np.full(3, 1 / 3), substream(7, "d", i)) for i in range(20)]
    assert a == b


# ---------------------------------------------------------------------------
# TargetDensity
# ---------------------------------------------------------------------------


def _flat_target(dim=2, blocks=((0,), (1,))):
    return TargetDensity(
        dim=dim,
        log_m=lambda pts: np.zeros(np.asarray(pts).shape[0]),
        block_structure=blocks,
    )


def test_target_block_partition_checked():
    with pytest.raises(ConfigurationError):
        _flat_target(blocks=((0,), (0,)))
    with pytest.raises(ConfigurationError):
        _flat_target(blocks=((0,),))
    with pytest.raises(ConfigurationError):
        TargetDensity(dim=0, log_m=lambda pts: np.zeros(0))


def test_target_split_join_roundtrip():
    target = TargetDensity(
        dim=4,
        log_m=lambda pts: np.zeros(np.asarray(pts).shape[0]),
        block_structure=((0, 2), (1, 3)),
    )
    x = np.array([1.0, 2.0, 3.0, 4.0])
    block, rest = target.split_block(x, 0)
    np.testing.assert_array_equal(block, [1.0, 3.0])
    np.testing.assert_array_equal(rest, [2.0, 4.0])
    np.testing.assert_array_equal(target.join_block(0, block, rest), x)
    assert target.n_blocks == 2
    with pytest.raises(ConfigurationError):
        TargetDensity(dim=2, log_m=target.log_m).block_indices(0)


# ---------------------------------------------------------------------------
# ParticleSystem and kernels
# ---------------------------------------------------------------------------


def test_particle_system_validation():
    particles = np.zeros((3, 1))
    w = np.full(3, 1 / 3)
    ParticleSystem(particles=particles, xi=None, log_w=np.zeros(3), weights=w, retained=0)
    with pytest.raises(ConfigurationError):
        ParticleSystem(particles=particles, xi=None, log_w=np.zeros(3), weights=w, retained=3)
    with pytest.raises(ConfigurationError):
        ParticleSystem(particles=particles, xi=None, log_w=np.zeros(2), weights=w, retained=0)
    with pytest.raises(ConfigurationError):
        ParticleSystem(
            particles=particles, xi=None, log_w=np.zeros(3), weights=np.full(3, 0.5), retained=0
        )


def test_auxiliary_kernel_kinds():
    aux = no_auxiliary()
    assert aux.kind == "none"
    np.testing.assert_array_equal(aux.log_eta(None, np.zeros((4, 2))), np.zeros(4))
    with pytest.raises(ConfigurationError):
        AuxiliaryKernel(kind="teleport", sample=None, log_eta=aux.log_eta)


def test_functional_coerces_to_float_array():
    f = Functional(name="first", f=lambda pts: pts[:, 0] > 0)
    out = f([[1.0, 0.0], [-1.0, 0.0]])
    assert out.dtype == float
    np.testing.assert_array_equal(out, [1.0, 0.0])


# ---------------------------------------------------------------------------
# seed streams
# ---------------------------------------------------------------------------


def test_substream_reproducible_and_path_sensitive():
    a = substream(11, "chain", 0, "x").standard_normal(5)
    b = substream(11, "chain", 0, "x").standard_normal(5)
    c = substream(11, "chain", 1, "x").standard_normal(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_spawn_key_mixes_path_types():
    assert spawn_key(5, "a", 1) == spawn_key(5, "a", 1)
    assert spawn_key(5, "a", 1) != spawn_key(5, "a", 2)
    assert spawn_key(5, "a") != spawn_key(5, "b")


def test_derive_seed_integer_range_and_determinism():
    s1 = derive_seed(99, "chain", 0, "mwg", 3)
    s2 = derive_seed(99, "chain", 0, "mwg", 3)
    s3 = derive_seed(99, "chain", 0, "mwg", 4)
    assert s1 == s2 != s3
    assert 0 <= s1 < 2**64
    # derived seeds feed fresh generators without collisions across labels
    labels = {derive_seed(99, "chain", 0, lab, 0) for lab in ("a", "b", "c", "d")}
    assert len(labels) == 4
