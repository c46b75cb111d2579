import numpy as np
import pytest

from ltelab.layers import (
    LoraHead,
    LoraLinear,
    effective_weight,
    load_layer,
    lora_backward,
    lora_forward,
    mhlora_forward,
    save_layer,
    split_product,
    worker_view_forward,
)
from ltelab.numerics import InitScheme, RandomSource


def random_layer(rng, m=5, n=4, r=2, n_heads=3, alpha=None, zero_b=False):
    heads = []
    for i in range(n_heads):
        a = rng.child("A", i).standard_normal((r, n))
        b = np.zeros((m, r)) if zero_b else rng.child("B", i).standard_normal((m, r))
        heads.append(LoraHead(A=a, B=b))
    w = rng.child("W").standard_normal((m, n))
    return LoraLinear(W=w, alpha=float(alpha if alpha is not None else r), heads=heads)


class TestConstruction:
    def test_fresh_head_has_zero_b(self):
        h = LoraHead.fresh(6, 4, 2, InitScheme("kaiming"), RandomSource(0).child(0))
        np.testing.assert_array_equal(h.B, np.zeros((6, 2)))
        assert h.rank == 2

    def test_rank_bound_enforced(self):
        with pytest.raises(ValueError, match="rank"):
            LoraHead(A=np.ones((5, 4)), B=np.ones((4, 5)))

    def test_heads_share_rank(self):
        w = np.zeros((4, 4))
        h1 = LoraHead.fresh(4, 4, 1, InitScheme("kaiming"), RandomSource(1).child(0))
        h2 = LoraHead.fresh(4, 4, 2, InitScheme("kaiming"), RandomSource(1).child(1))
        with pytest.raises(ValueError, match="share"):
            LoraLinear(W=w, alpha=1.0, heads=[h1, h2])

    def test_scale_is_alpha_over_rank(self):
        layer = random_layer(RandomSource(2), m=64, n=64, r=64, n_heads=1, alpha=4096.0)
        assert layer.s == 64.0


class TestForwards:
    def test_fresh_head_is_base_map(self):
        layer = random_layer(RandomSource(3), zero_b=True)
        x = RandomSource(4).standard_normal((4, 6))
        expected = layer.W @ x
        np.testing.assert_array_equal(lora_forward(layer, 0, x), expected)
        np.testing.assert_array_equal(mhlora_forward(layer, x), expected)
        np.testing.assert_array_equal(worker_view_forward(layer, 1, x), expected)

    def test_single_head_hand_case(self):
        # W = 0, s = 2 via alpha=2 r=1, B A x picks the second coordinate
        layer = LoraLinear(
            W=np.zeros((2, 2)), alpha=2.0,
            heads=[LoraHead(A=np.array([[0.0, 1.0]]), B=np.array([[1.0], [0.0]]))],
        )
        out = lora_forward(layer, 0, np.array([[3.0], [4.0]]))
        np.testing.assert_array_equal(out, np.array([[8.0], [0.0]]))

    def test_large_alpha_scale_in_forward(self):
        layer = LoraLinear(
            W=np.zeros((64, 64)), alpha=4096.0,
            heads=[LoraHead(A=np.eye(64), B=np.eye(64))],
        )
        x = np.ones((64, 1))
        np.testing.assert_array_equal(lora_forward(layer, 0, x), 64.0 * x)

    def test_mhlora_single_head_degenerates(self):
        layer = random_layer(RandomSource(5), n_heads=1)
        x = RandomSource(6).standard_normal((4, 3))
        assert np.abs(mhlora_forward(layer, x) - lora_forward(layer, 0, x)).max() <= 1e-15

    def test_mhlora_duplicate_heads(self):
        rng = RandomSource(7)
        a = rng.child("A").standard_normal((2, 4))
        b = rng.child("B").standard_normal((5, 2))
        w = rng.child("W").standard_normal((5, 4))
        layer = LoraLinear(W=w, alpha=2.0, heads=[LoraHead(A=a, B=b), LoraHead(A=a.copy(), B=b.copy())])
        x = rng.child("x").standard_normal((4, 3))
        expected = w @ x + layer.s * (b @ (a @ x))
        np.testing.assert_allclose(mhlora_forward(layer, x), expected, atol=1e-13)

    def test_worker_view_single_worker_equals_lora(self):
        layer = random_layer(RandomSource(8), n_heads=1)
        x = RandomSource(9).standard_normal((4, 3))
        np.testing.assert_array_equal(worker_view_forward(layer, 0, x), lora_forward(layer, 0, x))

    def test_worker_shares_sum_to_multi_head(self):
        # the N worker views jointly realize the multi-head map: the base plus
        # the sum of per-worker shares equals the multi-head forward
        layer = random_layer(RandomSource(10), n_heads=4)
        x = RandomSource(11).standard_normal((4, 5))
        base = layer.W @ x
        acc = base.copy()
        for h in range(4):
            acc += worker_view_forward(layer, h, x) - base
        np.testing.assert_allclose(acc, mhlora_forward(layer, x), atol=1e-13)

    def test_worker_view_correction(self):
        layer = random_layer(RandomSource(12), n_heads=2)
        x = RandomSource(13).standard_normal((4, 3))
        v = RandomSource(14).standard_normal((5, 4))
        c = layer.s / 2
        expected = worker_view_forward(layer, 0, x) - c * (v @ x)
        np.testing.assert_allclose(worker_view_forward(layer, 0, x, correction=v), expected, atol=1e-14)

    def test_shape_errors(self):
        layer = random_layer(RandomSource(15))
        with pytest.raises(ValueError):
            lora_forward(layer, 0, np.ones((3, 2)))


class TestEffectiveWeight:
    def test_zero_heads_give_base(self):
        layer = random_layer(RandomSource(16), zero_b=True)
        np.testing.assert_array_equal(effective_weight(layer), layer.W)

    def test_hand_average(self):
        heads = [
            LoraHead(A=np.array([[1.0]]), B=np.array([[1.0]])),
            LoraHead(A=np.array([[3.0]]), B=np.array([[1.0]])),
        ]
        layer = LoraLinear(W=np.zeros((1, 1)), alpha=1.0, heads=heads)
        np.testing.assert_array_equal(effective_weight(layer), [[2.0]])

    def test_forward_consistency(self):
        layer = random_layer(RandomSource(17), n_heads=3)
        x = RandomSource(18).standard_normal((4, 6))
        np.testing.assert_allclose(effective_weight(layer) @ x, mhlora_forward(layer, x), atol=1e-12)


class TestSplitProduct:
    def test_exact_reconstruction_small(self):
        rng = RandomSource(19)
        b = rng.child("b").standard_normal((3, 2))
        a = rng.child("a").standard_normal((2, 3))
        (b1, a1), (b2, a2) = split_product(b, a, 1)
        assert np.abs(b1 @ a1 + b2 @ a2 - b @ a).max() <= 1e-15

    def test_split_ranks(self):
        rng = RandomSource(20)
        b = rng.child("b").standard_normal((6, 4))
        a = rng.child("a").standard_normal((4, 7))
        (b1, a1), (b2, a2) = split_product(b, a, 1)
        s1 = np.linalg.svd(b1 @ a1, compute_uv=False)
        s2 = np.linalg.svd(b2 @ a2, compute_uv=False)
        assert np.sum(s1 > 1e-10 * s1[0]) <= 1
        assert np.sum(s2 > 1e-10 * s2[0]) <= 3

    def test_zero_tail_column(self):
        b = np.array([[1.0, 0.0], [2.0, 0.0]])
        a = np.array([[1.0, 1.0], [2.0, 2.0]])
        (_, _), (b2, a2) = split_product(b, a, 1)
        np.testing.assert_array_equal(b2 @ a2, np.zeros((2, 2)))

    def test_reconstruction_random_shapes(self):
        rng = RandomSource(21)
        for i in range(10):
            d = int(rng.child("d", i).integers(2, 9))
            k = int(rng.child("k", i).integers(1, d))
            b = rng.child("b", i).standard_normal((5, d))
            a = rng.child("a", i).standard_normal((d, 6))
            (b1, a1), (b2, a2) = split_product(b, a, k)
            np.testing.assert_allclose(b1 @ a1 + b2 @ a2, b @ a, atol=1e-14)

    def test_k_out_of_range(self):
        b, a = np.ones((2, 2)), np.ones((2, 2))
        for k in (0, 2):
            with pytest.raises(ValueError):
                split_product(b, a, k)


class TestBackward:
    def test_zero_upstream(self):
        layer = random_layer(RandomSource(22))
        x = RandomSource(23).standard_normal((4, 3))
        g = lora_backward(layer, 0, x, np.zeros((5, 3)), "full", with_base=True)
        np.testing.assert_array_equal(g.dA[0], np.zeros((2, 4)))
        np.testing.assert_array_equal(g.dB[0], np.zeros((5, 2)))
        np.testing.assert_array_equal(g.dW, np.zeros((5, 4)))

    def test_scalar_chain_rule(self):
        # 1-D case: dB = u*a*x, dA = b*u*x at s = 1
        layer = LoraLinear(
            W=np.zeros((1, 1)), alpha=1.0,
            heads=[LoraHead(A=np.array([[0.7]]), B=np.array([[-1.3]]))],
        )
        g = lora_backward(layer, 0, np.array([[2.0]]), np.array([[0.5]]), "full")
        np.testing.assert_allclose(g.dB[0], [[0.5 * 0.7 * 2.0]])
        np.testing.assert_allclose(g.dA[0], [[-1.3 * 0.5 * 2.0]])

    def test_matches_finite_differences(self):
        # loss L = sum(upstream * forward) makes `upstream` the exact output gradient
        rng = RandomSource(24)
        for trial in range(5):
            layer = random_layer(rng.child(trial), m=4, n=3, r=2, n_heads=2)
            x = rng.child("x", trial).standard_normal((3, 2))
            upstream = rng.child("u", trial).standard_normal((4, 2))
            for scale_mode, fwd in (
                ("full", lambda: lora_forward(layer, 1, x)),
                ("shared", lambda: worker_view_forward(layer, 1, x)),
            ):
                g = lora_backward(layer, 1, x, upstream, scale_mode)
                h = layer.heads[1]
                for arr, analytic in ((h.A, g.dA[1]), (h.B, g.dB[1])):
                    flat = int(rng.child("idx", trial).integers(0, arr.size))
                    old = arr.flat[flat]
                    arr.flat[flat] = old + 1e-6
                    hi = float(np.sum(upstream * fwd()))
                    arr.flat[flat] = old - 1e-6
                    lo = float(np.sum(upstream * fwd()))
                    arr.flat[flat] = old
                    fd = (hi - lo) / 2e-6
                    assert abs(analytic.flat[flat] - fd) <= 1e-6 * max(1.0, abs(fd))

    def test_scale_mode_validated(self):
        layer = random_layer(RandomSource(25))
        with pytest.raises(ValueError):
            lora_backward(layer, 0, np.ones((4, 1)), np.ones((5, 1)), "mean")


def test_checkpoint_round_trip(tmp_path):
    layer = random_layer(RandomSource(26), m=6, n=4, r=2, n_heads=2, alpha=8.0)
    save_layer(layer, tmp_path, "layer0")
    loaded = load_layer(tmp_path, "layer0")
    np.testing.assert_array_equal(loaded.W, layer.W)
    assert loaded.alpha == layer.alpha
    for ha, hb in zip(loaded.heads, layer.heads):
        np.testing.assert_array_equal(ha.A, hb.A)
        np.testing.assert_array_equal(ha.B, hb.B)
