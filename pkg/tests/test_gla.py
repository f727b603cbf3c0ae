import numpy as np
import pytest

from vig.attention import init_attn_params, linear_attention, project_qkv
from vig.gla import (
    GateParams,
    compute_gates,
    gla_chunkwise,
    gla_recurrent,
    init_multihead_gla_params,
    multihead_gla,
)
from vig.tensor_ops import sigmoid


def rel_err(a, b):
    return np.abs(a - b).max() / max(np.abs(a).max(), 1e-30)


class TestComputeGates:
    def test_zero_input_zero_bias(self):
        rng = np.random.default_rng(0)
        g = GateParams(w1=rng.normal(size=(6, 16)), w2=rng.normal(size=(16, 4)),
                       b=np.zeros((1, 4)), tau=16.0)
        out = compute_gates(np.zeros((3, 6)), g)
        assert np.abs(out - 0.5 ** (1.0 / 16.0)).max() < 1e-15

    def test_tau_one_is_plain_sigmoid(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(5, 6))
        g = GateParams(w1=rng.normal(size=(6, 16)), w2=rng.normal(size=(16, 4)),
                       b=rng.normal(size=(1, 4)), tau=1.0)
        expected = sigmoid(x @ g.w1 @ g.w2 + g.b)
        assert np.array_equal(compute_gates(x, g), expected)

    def test_matches_composed_evaluation(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(7, 6))
        g = GateParams(w1=rng.normal(size=(6, 16)), w2=rng.normal(size=(16, 4)),
                       b=rng.normal(size=(1, 4)), tau=16.0)
        pre = x @ g.w1 @ g.w2 + g.b
        expected = (1.0 / (1.0 + np.exp(-pre))) ** (1.0 / 16.0)
        assert rel_err(compute_gates(x, g), expected) < 1e-12
        assert ((compute_gates(x, g) > 0) & (compute_gates(x, g) <= 1)).all()

    def test_tau_below_one_rejected(self):
        with pytest.raises(ValueError):
            GateParams(w1=np.ones((2, 16)), w2=np.ones((16, 2)),
                       b=np.zeros((1, 2)), tau=0.5)


class TestRecurrentScan:
    def test_gate_one_reduces_to_linear_attention(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(9, 6))
        p = init_attn_params(rng, 6, 4, 5, std=1.0)
        q, k, v = project_qkv(x, p)
        o, _ = gla_recurrent(q, k, v, np.ones((9, 4)))
        assert np.array_equal(o, linear_attention(x, p, causal=True))

    def test_hand_recurrence(self):
        q = np.array([[1.0], [1.0]])
        k = np.array([[1.0], [1.0]])
        v = np.array([[1.0], [2.0]])
        alpha = np.array([[1.0], [0.5]])
        o, s = gla_recurrent(q, k, v, alpha)
        assert np.array_equal(o.ravel(), [1.0, 2.5])
        assert s[0, 0] == 2.5

    def test_full_forget_limit(self):
        rng = np.random.default_rng(4)
        t = 6
        q, k = rng.normal(size=(2, t, 3))
        v = rng.normal(size=(t, 4))
        o, _ = gla_recurrent(q, k, v, np.full((t, 3), 1e-14))
        expected = np.stack([q[i] @ np.outer(k[i], v[i]) for i in range(t)])
        assert rel_err(o, expected) < 1e-10

    def test_alpha_out_of_range_rejected(self):
        q = k = v = np.ones((2, 2))
        with pytest.raises(ValueError):
            gla_recurrent(q, k, v, np.array([[1.0, 0.0], [1.0, 1.0]]))
        with pytest.raises(ValueError):
            gla_recurrent(q, k, v, np.full((2, 2), 1.5))

    def test_causal_locality_bitwise(self):
        rng = np.random.default_rng(5)
        t = 10
        q, k = rng.normal(size=(2, t, 3))
        v = rng.normal(size=(t, 4))
        alpha = rng.uniform(0.1, 1.0, size=(t, 3))
        o1, _ = gla_recurrent(q, k, v, alpha)
        k2 = k.copy()
        k2[7] += 5.0
        o2, _ = gla_recurrent(q, k2, v, alpha)
        assert np.array_equal(o1[:7], o2[:7])

    def test_state_boundedness(self):
        rng = np.random.default_rng(6)
        t, delta = 2000, 0.05
        k = rng.uniform(-1.0, 1.0, size=(t, 2)) / np.sqrt(2.0)
        v = rng.uniform(-1.0, 1.0, size=(t, 3)) / np.sqrt(3.0)
        alpha = rng.uniform(0.2, 1.0 - delta, size=(t, 2))
        _, s = gla_recurrent(np.zeros((t, 2)), k, v, alpha)
        assert np.abs(s).max() <= 1.0 / delta


class TestChunkwiseScan:
    def test_chunk_one_degenerates_to_recurrent(self):
        rng = np.random.default_rng(7)
        t = 11
        q, k = rng.normal(size=(2, t, 3))
        v = rng.normal(size=(t, 4))
        alpha = rng.uniform(0.05, 1.0, size=(t, 3))
        o_ref, s_ref = gla_recurrent(q, k, v, alpha)
        o, s = gla_chunkwise(q, k, v, alpha, chunk=1)
        assert rel_err(o_ref, o) < 1e-12 and rel_err(s_ref, s) < 1e-12

    def test_single_block_matches(self):
        rng = np.random.default_rng(8)
        t = 16
        q, k = rng.normal(size=(2, t, 4))
        v = rng.normal(size=(t, 5))
        alpha = rng.uniform(0.05, 1.0, size=(t, 4))
        o_ref, _ = gla_recurrent(q, k, v, alpha)
        o, _ = gla_chunkwise(q, k, v, alpha, chunk=t)
        assert rel_err(o_ref, o) < 1e-10

    def test_ragged_tail(self):
        rng = np.random.default_rng(9)
        t = 13
        q, k = rng.normal(size=(2, t, 4))
        v = rng.normal(size=(t, 5))
        alpha = rng.uniform(0.05, 1.0, size=(t, 4))
        o_ref, _ = gla_recurrent(q, k, v, alpha)
        o, _ = gla_chunkwise(q, k, v, alpha, chunk=4)
        assert rel_err(o_ref, o) < 1e-10

    def test_chunk_sweep(self):
        rng = np.random.default_rng(10)
        for t in (1, 2, 5, 12, 29):
            q, k = rng.normal(size=(2, t, 4))
            v = rng.normal(size=(t, 3))
            alpha = rng.uniform(0.02, 1.0, size=(t, 4))
            o_ref, _ = gla_recurrent(q, k, v, alpha)
            for chunk in (1, 2, 3, 5, 8, t):
                o, _ = gla_chunkwise(q, k, v, alpha, chunk)
                assert rel_err(o_ref, o) < 1e-9

    def test_tiny_gates_use_safe_path(self):
        # gates small enough that the two-sided matmul factorization would
        # overflow; the pairwise-difference fallback must stay exact
        rng = np.random.default_rng(11)
        t = 24
        q, k = rng.normal(size=(2, t, 3))
        v = rng.normal(size=(t, 3))
        alpha = rng.uniform(1e-9, 1e-6, size=(t, 3))
        o_ref, _ = gla_recurrent(q, k, v, alpha)
        o, _ = gla_chunkwise(q, k, v, alpha, chunk=t)
        assert np.isfinite(o).all()
        assert rel_err(o_ref, o) < 1e-9

    def test_bad_chunk_rejected(self):
        with pytest.raises(ValueError):
            gla_chunkwise(np.ones((2, 2)), np.ones((2, 2)), np.ones((2, 2)),
                          np.ones((2, 2)), chunk=0)


class TestMultiHead:
    def test_single_head_equals_manual_path(self):
        rng = np.random.default_rng(12)
        d = 8
        p = init_multihead_gla_params(rng, d, heads=1)
        x = rng.normal(size=(6, d))
        out = multihead_gla(x, p, chunk=3)
        alpha = compute_gates(x, p.gate)
        o, _ = gla_chunkwise(x @ p.w_q, x @ p.w_k, x @ p.w_v, alpha, 3)
        assert rel_err(out, o @ p.w_o) < 1e-13

    def test_two_heads_block_diagonal_separability(self):
        rng = np.random.default_rng(13)
        d = 8
        p = init_multihead_gla_params(rng, d, heads=2)
        # block-diagonal output projection: each head's d_v slice maps to its
        # own half of the output
        p.w_o[:] = 0.0
        blocks = [rng.normal(size=(4, 4)) for _ in range(2)]
        p.w_o[0:4, 0:4] = blocks[0]
        p.w_o[4:8, 4:8] = blocks[1]
        x = rng.normal(size=(5, d))
        out = multihead_gla(x, p, chunk=2)
        for h in range(2):
            alpha = compute_gates(x, p.gate)[:, 2 * h : 2 * h + 2]
            q = (x @ p.w_q)[:, 2 * h : 2 * h + 2]
            k = (x @ p.w_k)[:, 2 * h : 2 * h + 2]
            v = (x @ p.w_v)[:, 4 * h : 4 * h + 4]
            o, _ = gla_chunkwise(q, k, v, alpha, 2)
            assert rel_err(out[:, 4 * h : 4 * h + 4], o @ blocks[h]) < 1e-12

    def test_vig_t_shape(self):
        rng = np.random.default_rng(14)
        d, heads, t = 192, 3, 196
        p = init_multihead_gla_params(rng, d, heads)
        out = multihead_gla(rng.normal(size=(t, d)), p)
        assert out.shape == (t, d)

    def test_divisibility_enforced(self):
        rng = np.random.default_rng(15)
        with pytest.raises(Exception):
            init_multihead_gla_params(rng, 10, heads=2)  # 10 % 4 != 0
