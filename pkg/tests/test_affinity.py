import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from ivra.affinity import (
    AffinityMap,
    PatchEmbeddings,
    ZeroNormPatchError,
    apply_ivra_to_tokens,
    compute_affinity,
    mix_tokens,
    pool_tokens,
    pooling_weights,
)
from ivra.tensor import DimensionError


def patches(f, grid=None):
    f = np.asarray(f, dtype=np.float32)
    gh, gw = grid or (1, f.shape[0])
    return PatchEmbeddings(gh, gw, f)


def random_affinity(r, n, d=8):
    return compute_affinity(patches(r.standard_normal((n, d))))


def bits(a):
    return np.ascontiguousarray(a, dtype=np.float32).view(np.uint32)


# compute_affinity

def test_identical_patches_have_unit_affinity():
    a = compute_affinity(patches([[0.3, -1.2, 2.0], [0.3, -1.2, 2.0]]))
    np.testing.assert_array_equal(a.values, np.ones((2, 2)))


def test_orthogonal_patches():
    a = compute_affinity(patches([[1, 0], [0, 1]]))
    np.testing.assert_array_equal(a.values, np.eye(2))


def test_affinity_matches_scalar_cosine(rng):
    f = rng.standard_normal((6, 4)).astype(np.float32)
    assert oracles.max_abs(compute_affinity(patches(f)).values, oracles.cosine_affinity(f)) <= 1e-6


def test_zero_norm_patch_names_index():
    with pytest.raises(ZeroNormPatchError) as info:
        compute_affinity(patches([[1, 2], [0, 0], [3, 4]]))
    assert info.value.index == 1


def test_grid_must_hold_all_patches():
    with pytest.raises(DimensionError):
        PatchEmbeddings(2, 2, np.ones((3, 2)))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 40), d=st.integers(1, 16))
def test_affinity_invariants(seed, n, d):
    a = random_affinity(np.random.default_rng(seed), n, d).values
    np.testing.assert_array_equal(a, a.T)
    assert np.abs(np.diag(a) - 1).max() <= 1e-6
    assert np.abs(a).max() <= 1 + 1e-6


def test_from_values_rejects_invalid():
    with pytest.raises(ValueError):
        AffinityMap.from_values([[1.0, 0.2], [0.1, 1.0]])
    with pytest.raises(ValueError):
        AffinityMap.from_values([[0.5, 0.0], [0.0, 1.0]])
    with pytest.raises(DimensionError):
        AffinityMap.from_values(np.eye(4), 3, 1)


# pooling_weights

def test_isolated_patches_give_identity_weights():
    w = pooling_weights(AffinityMap.from_values(np.eye(5)))
    np.testing.assert_array_equal(w.values, np.eye(5))
    assert w.isolated.all()


def test_uniform_affinity_gives_halves():
    w = pooling_weights(AffinityMap.from_values(np.ones((2, 2))))
    np.testing.assert_array_equal(w.values, np.full((2, 2), 0.5))


def test_negative_affinity_is_clipped():
    a = AffinityMap.from_values([[1.0, -0.5, 0.5], [-0.5, 1.0, 0.0], [0.5, 0.0, 1.0]])
    w = pooling_weights(a).values
    np.testing.assert_allclose(w[0], [2 / 3, 0, 1 / 3], rtol=1e-6)
    assert w[0, 1] == 0.0


def test_clip_none_keeps_negative_weights():
    a = AffinityMap.from_values([[1.0, -0.5, 0.5], [-0.5, 1.0, 0.0], [0.5, 0.0, 1.0]])
    w = pooling_weights(a, clip="none").values
    np.testing.assert_allclose(w[0], [1.0, -0.5, 0.5], rtol=1e-6)
    with pytest.raises(ValueError):
        pooling_weights(a, clip="abs")


def test_pooling_weights_match_oracle(rng):
    a = random_affinity(rng, 12, 3)
    assert oracles.max_abs(pooling_weights(a).values, oracles.pooling_weights(a.values)) <= 1e-6


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 48), d=st.integers(1, 8))
def test_pooling_weights_row_stochastic(seed, n, d):
    a = random_affinity(np.random.default_rng(seed), n, d)
    w = pooling_weights(a).values
    assert np.abs(w.sum(axis=1, dtype=np.float64) - 1).max() <= 1e-5
    assert (w >= 0).all() and (w <= 1).all()
    assert (np.diag(w) > 0).all()
    assert (w[a.values < 0] == 0).all()


# pool_tokens

def test_identity_weights_pool_exactly(rng):
    v = rng.standard_normal((5, 3)).astype(np.float32)
    w = pooling_weights(AffinityMap.from_values(np.eye(5)))
    np.testing.assert_array_equal(pool_tokens(w, v), v)


def test_identical_rows_are_a_fixed_point(rng):
    a = random_affinity(rng, 6)
    v = np.tile(rng.standard_normal(4).astype(np.float32), (6, 1))
    np.testing.assert_allclose(pool_tokens(pooling_weights(a), v), v, rtol=1e-6, atol=1e-6)


def test_pool_matches_scalar_oracle(rng):
    raw = rng.random((5, 5))
    w = pooling_weights(AffinityMap.from_values(np.ones((5, 5))))
    w = type(w)((raw / raw.sum(axis=1, keepdims=True)).astype(np.float32), np.zeros(5, bool))
    v = rng.standard_normal((5, 3)).astype(np.float32)
    assert oracles.max_abs(pool_tokens(w, v), oracles.pool(w.values, v)) <= 1e-5


def test_pool_dimension_mismatch(rng):
    w = pooling_weights(random_affinity(rng, 4))
    with pytest.raises(DimensionError):
        pool_tokens(w, np.ones((3, 2)))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 32), d=st.integers(1, 12))
def test_pool_stays_in_convex_hull(seed, n, d):
    r = np.random.default_rng(seed)
    w = pooling_weights(random_affinity(r, n))
    v = (r.standard_normal((n, d)) * 10).astype(np.float32)
    out = pool_tokens(w, v)
    assert (out >= v.min(axis=0) - 1e-6 * np.abs(v).max(axis=0).clip(1)).all()
    assert (out <= v.max(axis=0) + 1e-6 * np.abs(v).max(axis=0).clip(1)).all()


# mix_tokens

def test_mix_endpoints_are_bit_identical(rng):
    v = rng.standard_normal((4, 3)).astype(np.float32)
    vp = rng.standard_normal((4, 3)).astype(np.float32)
    np.testing.assert_array_equal(bits(mix_tokens(v, vp, 0.0)), bits(v))
    np.testing.assert_array_equal(bits(mix_tokens(v, vp, 1.0)), bits(vp))


def test_mix_at_chosen_coefficient():
    np.testing.assert_allclose(mix_tokens([[1, 0]], [[0, 1]], 0.3), [[0.7, 0.3]], rtol=1e-6)


def test_mix_errors():
    with pytest.raises(DimensionError):
        mix_tokens(np.ones((2, 2)), np.ones((2, 3)), 0.5)
    for lam in (-0.01, 1.01):
        with pytest.raises(ValueError):
            mix_tokens(np.ones((2, 2)), np.ones((2, 2)), lam)


# apply_ivra_to_tokens

def test_ivra_lambda_zero_is_identity(rng):
    v = rng.standard_normal((9, 5)).astype(np.float32)
    out = apply_ivra_to_tokens(v, random_affinity(rng, 9), 0.0)
    np.testing.assert_array_equal(bits(out), bits(v))


@pytest.mark.parametrize("lam", [0.0, 0.3, 0.7, 1.0, 0.123])
def test_ivra_identity_affinity_is_identity(rng, lam):
    v = rng.standard_normal((6, 4)).astype(np.float32)
    out = apply_ivra_to_tokens(v, AffinityMap.from_values(np.eye(6)), lam)
    np.testing.assert_array_equal(bits(out), bits(v))


def _mean_within_cosine(x, groups):
    x = np.asarray(x, dtype=np.float64)
    u = x / np.linalg.norm(x, axis=1, keepdims=True)
    return np.mean([u[i] @ u[j] for g in groups for i in g for j in g if i < j])


def test_ivra_tightens_planted_clusters():
    protos = np.array([[1.0, 0.2, 0.0, 0.0], [0.0, 0.0, 1.0, 0.3]])
    noise = np.array([[0.0, 0.4, 0.3, 0.0], [0.2, -0.3, 0.0, 0.2], [0.3, 0.0, 0.0, -0.4], [-0.2, 0.3, 0.0, 0.1]])
    f = (protos[[0, 0, 1, 1]] + noise).astype(np.float32)
    groups = [(0, 1), (2, 3)]
    out = apply_ivra_to_tokens(f, compute_affinity(patches(f)), 0.3)
    before, after = _mean_within_cosine(f, groups), _mean_within_cosine(out, groups)
    assert after > before


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 30), lam=st.sampled_from([0.0, 0.3, 0.7, 1.0]))
def test_ivra_permutation_equivariance(seed, n, lam):
    r = np.random.default_rng(seed)
    f = r.standard_normal((n, 6)).astype(np.float32)
    v = r.standard_normal((n, 5)).astype(np.float32)
    perm = r.permutation(n)
    out = apply_ivra_to_tokens(v, compute_affinity(patches(f)), lam)
    out_p = apply_ivra_to_tokens(v[perm], compute_affinity(patches(f[perm])), lam)
    np.testing.assert_allclose(out_p, out[perm], rtol=0, atol=1e-6)
