"""Routing functions against brute-force oracles, plus the augmented layer."""

import numpy as np
import pytest

from sparse_memory_lab.autodiff import Tensor
from sparse_memory_lab.lookup import (
    HyperplaneLshParams,
    MemoryTable,
    MinHashParams,
    SoftmaxRouterParams,
    SphericalLshParams,
    TokenContext,
    TokenIdLookup,
    fold_cells,
    hyperplane_lsh_lookup,
    memory_augmented_forward,
    minhash_lookup,
    partial_expert_param_count,
    route,
    softmax_route,
    spherical_lsh_lookup,
    token_id_lookup,
)
from sparse_memory_lab.nn import ConstantExpertParams, TwoLayerExpertParams


# -- token-id ---------------------------------------------------------------

def test_token_id_basic():
    r = token_id_lookup(TokenContext(7), 32000)
    assert r.indices == (7,)
    np.testing.assert_array_equal(r.weights.data, [1.0])
    assert token_id_lookup(TokenContext(0), 4).indices == (0,)


def test_token_id_out_of_vocabulary():
    with pytest.raises(ValueError):
        token_id_lookup(TokenContext(4), 4)


def test_token_id_layer_independent():
    ctx = TokenContext(9)
    results = [route(Tensor(np.random.default_rng(i).standard_normal(4)), ctx,
                     TokenIdLookup(n=16)).indices for i in range(5)]
    assert all(r == (9,) for r in results)


# -- softmax routing -------------------------------------------------------------

def test_softmax_uniform_logits_tie_break_low_index():
    params = SoftmaxRouterParams(W=Tensor(np.zeros((4, 3)), requires_grad=True), k=1)
    r = softmax_route(Tensor(np.ones(3)), params)
    assert r.indices == (0,)
    np.testing.assert_allclose(r.weights.data, [0.25])


def test_softmax_identity_rows_pick_matching_index():
    params = SoftmaxRouterParams(W=Tensor(np.eye(4)), k=1)
    x = np.zeros(4)
    x[2] = 1.0
    assert softmax_route(Tensor(x), params).indices == (2,)


def test_softmax_matches_full_sort_oracle():
    rng = np.random.default_rng(21)
    w = rng.standard_normal((8, 4))
    x = rng.standard_normal(4)
    params = SoftmaxRouterParams(W=Tensor(w), k=2)
    r = softmax_route(Tensor(x), params)

    logits = w @ x
    probs = np.exp(logits) / np.exp(logits).sum()
    order = sorted(range(8), key=lambda i: (-probs[i], i))
    assert r.indices == tuple(order[:2])
    np.testing.assert_allclose(r.weights.data, probs[list(order[:2])], rtol=1e-12)
    assert abs(probs.sum() - 1.0) < 1e-12
    assert np.all((r.weights.data > 0) & (r.weights.data <= 1))


def test_softmax_jitter_needs_rng_and_is_train_only():
    params = SoftmaxRouterParams.init(4, 3, k=1, seed=0)
    x = Tensor(np.ones(3))
    with pytest.raises(ValueError):
        softmax_route(x, params, train_mode=True)
    eval_a = softmax_route(x, params)
    eval_b = softmax_route(x, params)
    np.testing.assert_array_equal(eval_a.weights.data, eval_b.weights.data)
    t1 = softmax_route(x, params, train_mode=True, rng=np.random.default_rng(1))
    t2 = softmax_route(x, params, train_mode=True, rng=np.random.default_rng(1))
    np.testing.assert_array_equal(t1.weights.data, t2.weights.data)


def test_softmax_k_bounds():
    with pytest.raises(ValueError):
        SoftmaxRouterParams(W=Tensor(np.zeros((4, 3))), k=5)


# -- hyperplane LSH ---------------------------------------------------------------

def test_hyperplane_deterministic():
    params = HyperplaneLshParams.init(8, 4, 1.0, 64, seed=5)
    x = np.random.default_rng(0).standard_normal(8)
    a = hyperplane_lsh_lookup(x, params)
    b = hyperplane_lsh_lookup(x, params)
    assert a.indices == b.indices


def test_hyperplane_single_projection_arithmetic():
    d = 4
    directions = np.zeros((1, d))
    directions[0, 0] = 1.0
    params = HyperplaneLshParams(directions=directions, offsets=np.zeros(1),
                                 width=1.0, n=16)
    x = np.zeros(d)
    x[0] = 2.5  # cell floor(2.5/1.0) = 2
    r = hyperplane_lsh_lookup(x, params)
    expected = int(fold_cells(np.array([2]), params.mix_seed) % np.uint64(16))
    assert r.indices == (expected,)


def test_hyperplane_near_pairs_collide_more_than_far_pairs():
    d, w, n = 16, 1.0, 256
    rng = np.random.default_rng(42)
    near = far = 0
    trials = 10000
    for i in range(trials):
        params = HyperplaneLshParams.init(d, 4, w, n, seed=1000 + i)
        x = rng.standard_normal(d)
        x /= np.linalg.norm(x)
        delta = rng.standard_normal(d)
        delta /= np.linalg.norm(delta)
        near += hyperplane_lsh_lookup(x, params).indices == \
            hyperplane_lsh_lookup(x + 0.1 * w * delta, params).indices
        far += hyperplane_lsh_lookup(x, params).indices == \
            hyperplane_lsh_lookup(x + 10.0 * w * delta, params).indices
    assert near / trials > far / trials


# -- spherical LSH ---------------------------------------------------------------

def test_spherical_self_anchor():
    params = SphericalLshParams.init(8, 5, seed=3)
    r = spherical_lsh_lookup(params.anchors[3], params)
    assert r.indices == (3,)


def test_spherical_antipodal_sign():
    u = np.zeros(4)
    u[1] = 1.0
    params = SphericalLshParams(anchors=np.stack([u, -u]))
    x = np.array([0.3, 0.9, 0.1, -0.2])
    assert spherical_lsh_lookup(x, params).indices == (0,)
    assert spherical_lsh_lookup(-x, params).indices == (1,)


def test_spherical_matches_brute_force_scan():
    params = SphericalLshParams.init(32, 8, seed=7)
    rng = np.random.default_rng(8)
    for _ in range(20):
        x = rng.standard_normal(8)
        got = spherical_lsh_lookup(x, params).indices[0]
        dots = [params.anchors[i] @ (x / np.linalg.norm(x)) for i in range(32)]
        assert got == int(np.argmax(dots))


def test_spherical_scaling_invariance():
    params = SphericalLshParams.init(16, 6, seed=9)
    rng = np.random.default_rng(10)
    for _ in range(10):
        x = rng.standard_normal(6)
        base = spherical_lsh_lookup(x, params).indices
        for c in (0.01, 3.7, 250.0):
            assert spherical_lsh_lookup(c * x, params).indices == base


def test_spherical_zero_vector_rejected():
    params = SphericalLshParams.init(4, 3, seed=0)
    with pytest.raises(ValueError):
        spherical_lsh_lookup(np.zeros(3), params)


def test_spherical_anchor_norm_validated():
    with pytest.raises(ValueError):
        SphericalLshParams(anchors=np.ones((2, 3)))


# -- min-hash ----------------------------------------------------------------------

def test_minhash_identical_sets_always_collide():
    for seed in range(20):
        params = MinHashParams.init(32, 32, seed=seed)
        a = minhash_lookup({3, 7, 11}, params)
        b = minhash_lookup({3, 7, 11}, params)
        assert a.indices == b.indices


def test_minhash_disjoint_sets_never_share_winner():
    for seed in range(20):
        params = MinHashParams.init(16, 16, seed=seed)
        a = minhash_lookup({0, 1, 2}, params).indices[0]
        b = minhash_lookup({8, 9, 10}, params).indices[0]
        assert a != b  # universe <= n, so buckets are the elements themselves


def test_minhash_collision_matches_jaccard_half():
    # |A & B| / |A | B| = 2/4 = 0.5
    a, b = {0, 1, 2}, {1, 2, 3}
    universe = 4
    hits = 0
    trials = 100000
    for seed in range(trials):
        params = MinHashParams.init(universe, universe, seed=seed)
        hits += minhash_lookup(a, params).indices == minhash_lookup(b, params).indices
    assert abs(hits / trials - 0.5) < 0.01


def test_minhash_empty_set_rejected():
    params = MinHashParams.init(8, 8, seed=0)
    with pytest.raises(ValueError):
        minhash_lookup(set(), params)


# -- memory-augmented layer -----------------------------------------------------------

def test_memory_forward_zero_experts_is_layer_output():
    table = MemoryTable(entries=[
        TwoLayerExpertParams(U=Tensor(np.zeros((4, 2))), V=Tensor(np.zeros((4, 2))))
        for _ in range(3)
    ])
    router = SoftmaxRouterParams.init(3, 4, k=2, seed=1)
    x = Tensor(np.random.default_rng(2).standard_normal(4))
    out = memory_augmented_forward(lambda v: v * 2.0, x, TokenContext(0), router, table)
    np.testing.assert_allclose(out.data, 2.0 * x.data, rtol=1e-12)


def test_memory_forward_token_id_constant_expert():
    d, n = 4, 5
    table = MemoryTable(entries=[
        ConstantExpertParams(b=Tensor(np.full(d, float(i)))) for i in range(n)
    ])
    x = Tensor(np.random.default_rng(3).standard_normal(d))
    out = memory_augmented_forward(lambda v: v, x, TokenContext(2),
                                   TokenIdLookup(n=n), table)
    np.testing.assert_allclose(out.data, x.data + 2.0, rtol=1e-12)


def test_memory_forward_matches_scripted_formula():
    rng = np.random.default_rng(17)
    d, n, k, rank = 4, 3, 2, 2
    us = [rng.standard_normal((d, rank)) for _ in range(n)]
    vs = [rng.standard_normal((d, rank)) for _ in range(n)]
    w = rng.standard_normal((n, d))
    x = rng.standard_normal(d)
    layer_m = rng.standard_normal((d, d))

    table = MemoryTable(entries=[
        TwoLayerExpertParams(U=Tensor(us[i]), V=Tensor(vs[i])) for i in range(n)
    ])
    router = SoftmaxRouterParams(W=Tensor(w), k=k)
    got = memory_augmented_forward(lambda v: Tensor(layer_m) @ v, Tensor(x),
                                   TokenContext(0), router, table).data

    probs = np.exp(w @ x) / np.exp(w @ x).sum()
    top = sorted(range(n), key=lambda i: (-probs[i], i))[:k]
    expected = layer_m @ x
    for i in top:
        expected = expected + probs[i] * (vs[i] @ np.maximum(us[i].T @ x, 0.0))
    np.testing.assert_allclose(got, expected, rtol=1e-12)


def test_memory_forward_router_gradient_nonzero():
    rng = np.random.default_rng(23)
    d, n = 4, 4
    table = MemoryTable.init(n, d, rank=2, seed=5)
    router = SoftmaxRouterParams.init(n, d, k=2, seed=6)
    x = Tensor(rng.standard_normal(d))
    out = memory_augmented_forward(lambda v: v, x, TokenContext(0), router, table)
    (out * out).sum().backward()
    assert router.W.grad is not None and np.abs(router.W.grad).max() > 0


def test_route_purity_same_inputs_same_result():
    rng = np.random.default_rng(29)
    x = Tensor(rng.standard_normal(6))
    lookups = [
        TokenIdLookup(n=8),
        SoftmaxRouterParams.init(8, 6, k=3, seed=1),
        HyperplaneLshParams.init(6, 4, 1.0, 8, seed=2),
        SphericalLshParams.init(8, 6, seed=3),
        MinHashParams.init(8, 8, seed=4),
    ]
    for lk in lookups:
        a = route(x, TokenContext(5), lk)
        b = route(x, TokenContext(5), lk)
        assert a.indices == b.indices
        np.testing.assert_array_equal(a.weights.data, b.weights.data)


# -- parameter count formula ----------------------------------------------------------

def test_partial_expert_param_count_values():
    assert partial_expert_param_count(128, 128, 512)[0] == 32768  # 2**15
    assert partial_expert_param_count(0, 777, 64)[0] == 777
    assert partial_expert_param_count(4, 1024, 64)[0] == 8192
    comparison, full = partial_expert_param_count(4, 32, 16)
    assert (comparison, full) == (256, 4096)
    assert partial_expert_param_count(0, 10, 7) == (10, 70)


def test_partial_expert_param_count_validation():
    with pytest.raises(ValueError):
        partial_expert_param_count(-1, 1, 1)
    with pytest.raises(ValueError):
        partial_expert_param_count(0, 0, 1)


def test_memory_table_homogeneity_enforced():
    with pytest.raises(ValueError):
        MemoryTable(entries=[
            ConstantExpertParams(b=Tensor(np.zeros(4))),
            TwoLayerExpertParams(U=Tensor(np.zeros((4, 1))), V=Tensor(np.zeros((4, 1)))),
        ])
