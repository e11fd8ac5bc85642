"""Pooling layer: forward values against a straight-line oracle, structural
invariants, and analytic gradients against finite differences."""

import numpy as np
import pytest

from miniasv import backend
from miniasv.errors import ConfigError, DimensionError, InputError
from miniasv.gradcheck import NAMED_POOLING_CONFIGS, check_pooling_config
from miniasv.pooling import (
    PoolingConfig,
    PoolingParams,
    attention_weights,
    init_pooling_params,
    mqmha_backward,
    mqmha_forward,
    statistics_pool,
)


def oracle_pool(O, params, config):
    """Independent reimplementation: dumb loops per head and query, no shared
    code with the library kernels."""
    T, _ = O.shape
    H, Q = config.heads, config.queries
    dh, ds = config.head_dim, config.weight_dim
    mus, sigmas = [], []
    for h in range(H):
        Xh = O[:, h * dh:(h + 1) * dh]
        scores = np.zeros((T, Q * ds))
        for t in range(T):
            if config.attn_layers == 1:
                scores[t] = Xh[t] @ params.w_out[h]
            else:
                hidden = np.maximum(Xh[t] @ params.w_hidden[h], 0.0)
                scores[t] = hidden @ params.w_out[h]
        for q in range(Q):
            cols = scores[:, q * ds:(q + 1) * ds]
            w = np.exp(cols - cols.max(axis=0)) / np.exp(cols - cols.max(axis=0)).sum(axis=0)
            if ds == 1:
                w = np.repeat(w, dh, axis=1)
            mu = (w * Xh).sum(axis=0)
            var = (w * Xh * Xh).sum(axis=0) - mu * mu
            mus.append(mu)
            sigmas.append(np.sqrt(np.maximum(var, config.epsilon)))
    return np.concatenate(mus + sigmas)


# pooling grid of the head/query ablation: every point must run and
# produce a 2 * dim * queries vector through the same code path
GRID_POINTS = (
    [(1, 1), (2, 1), (4, 1), (8, 1), (16, 1), (32, 1)]
    + [(1, 2), (1, 4), (1, 8)]
    + [(16, 2), (16, 4), (16, 8)]
)


class TestInit:
    def test_one_layer_shapes(self):
        cfg = PoolingConfig(dim=4, heads=2, queries=1, attn_layers=1)
        p = init_pooling_params(cfg, 0)
        assert p.w_out.shape == (2, 2, 1)  # one 2x1 matrix per head
        assert p.w_hidden is None

    def test_two_layer_shapes(self):
        cfg = PoolingConfig(dim=4, heads=1, queries=2, attn_layers=2, hidden_dim=8)
        p = init_pooling_params(cfg, 0)
        assert p.w_hidden.shape == (1, 4, 8)
        assert p.w_out.shape == (1, 8, 2)

    def test_same_seed_bit_identical(self):
        cfg = PoolingConfig(dim=6, heads=3, queries=2, attn_layers=2, hidden_dim=4)
        a = init_pooling_params(cfg, 99)
        b = init_pooling_params(cfg, 99)
        assert np.array_equal(a.w_out, b.w_out)
        assert np.array_equal(a.w_hidden, b.w_hidden)

    def test_heads_must_divide_dim(self):
        with pytest.raises(ConfigError):
            PoolingConfig(dim=10, heads=3)

    def test_bad_weight_mode(self):
        with pytest.raises(ConfigError):
            PoolingConfig(dim=4, weight_mode="both")


class TestAttentionWeights:
    def test_zero_params_give_uniform_weights(self):
        cfg = PoolingConfig(dim=6, heads=2, queries=2, attn_layers=1)
        p = init_pooling_params(cfg, 0)
        p.w_out[:] = 0.0
        w = attention_weights(np.random.default_rng(0).standard_normal((5, 6)), p, cfg)
        assert w.shape == (5, 2, 2, 1)
        np.testing.assert_allclose(w, 0.2, atol=1e-15)

    def test_single_frame_weight_is_one(self):
        cfg = PoolingConfig(dim=4, heads=2)
        p = init_pooling_params(cfg, 1)
        w = attention_weights(np.random.default_rng(1).standard_normal((1, 4)), p, cfg)
        np.testing.assert_allclose(w, 1.0, atol=0)

    def test_hand_computed_two_frame_case(self):
        # one head, one query, one linear layer with weights [1, 0]:
        # frame scores are 1 and 0, so the weights are softmax([1, 0])
        cfg = PoolingConfig(dim=2, heads=1, queries=1, attn_layers=1)
        p = PoolingParams(w_out=np.array([[[1.0], [0.0]]]))
        O = np.array([[1.0, 0.0], [0.0, 1.0]])
        w = attention_weights(O, p, cfg).ravel()
        e = np.e
        np.testing.assert_allclose(w, [e / (e + 1), 1 / (e + 1)], atol=1e-15)

    def test_weights_sum_to_one_per_column(self):
        rng = np.random.default_rng(5)
        for cfg in NAMED_POOLING_CONFIGS.values():
            p = init_pooling_params(cfg, 3)
            w = attention_weights(rng.standard_normal((7, cfg.dim)), p, cfg)
            np.testing.assert_allclose(w.sum(axis=0), 1.0, atol=1e-12)


class TestForward:
    @pytest.mark.parametrize("name", list(NAMED_POOLING_CONFIGS))
    def test_matches_straight_line_oracle(self, name):
        cfg = NAMED_POOLING_CONFIGS[name]
        rng = np.random.default_rng(17)
        for _ in range(10):
            O = rng.standard_normal((int(rng.integers(2, 9)), cfg.dim))
            p = init_pooling_params(cfg, int(rng.integers(0, 1000)))
            out, _ = mqmha_forward(O, p, cfg)
            np.testing.assert_allclose(out, oracle_pool(O, p, cfg), atol=1e-12)

    def test_desk_scale_best_point_matches_oracle(self):
        # the strongest grid point (16 heads, 4 queries) at desk scale
        cfg = PoolingConfig(dim=32, heads=16, queries=4, attn_layers=1)
        rng = np.random.default_rng(99)
        O = rng.standard_normal((30, 32))
        p = init_pooling_params(cfg, 7)
        out, _ = mqmha_forward(O, p, cfg)
        assert out.shape == (2 * 32 * 4,)
        np.testing.assert_allclose(out, oracle_pool(O, p, cfg), atol=1e-12)

    def test_zero_params_reduce_to_statistics_pool(self):
        cfg = PoolingConfig(dim=6, heads=2, queries=3, attn_layers=1)
        p = init_pooling_params(cfg, 0)
        p.w_out[:] = 0.0
        O = np.random.default_rng(2).standard_normal((9, 6))
        out, _ = mqmha_forward(O, p, cfg)
        mu_parts, sd_parts = [], []
        for h in range(2):
            sp, _ = statistics_pool(O[:, 3 * h:3 * h + 3], epsilon=cfg.epsilon)
            mu_parts.append(np.tile(sp[:3], 3))
            sd_parts.append(np.tile(sp[3:], 3))
        np.testing.assert_allclose(out, np.concatenate(mu_parts + sd_parts), atol=1e-12)

    def test_single_frame_degenerates(self):
        cfg = PoolingConfig(dim=4, heads=2, queries=2)
        p = init_pooling_params(cfg, 4)
        frame = np.array([[1.0, -2.0, 0.5, 3.0]])
        out, _ = mqmha_forward(frame, p, cfg)
        half = cfg.dim * cfg.queries
        np.testing.assert_allclose(out[:half], np.tile(frame.reshape(2, 2), (1, 2)).ravel())
        np.testing.assert_allclose(out[half:], np.sqrt(cfg.epsilon))

    def test_permutation_invariance(self):
        rng = np.random.default_rng(8)
        for cfg in NAMED_POOLING_CONFIGS.values():
            O = rng.standard_normal((10, cfg.dim))
            p = init_pooling_params(cfg, 5)
            base, _ = mqmha_forward(O, p, cfg)
            perm, _ = mqmha_forward(O[rng.permutation(10)], p, cfg)
            np.testing.assert_allclose(perm, base, atol=1e-12)

    @pytest.mark.parametrize("heads,queries", GRID_POINTS)
    def test_grid_output_lengths(self, heads, queries):
        cfg = PoolingConfig(dim=32, heads=heads, queries=queries, attn_layers=1)
        p = init_pooling_params(cfg, 0)
        out, _ = mqmha_forward(np.random.default_rng(0).standard_normal((6, 32)), p, cfg)
        assert out.shape == (2 * 32 * queries,)

    def test_sigma_floor(self):
        rng = np.random.default_rng(10)
        for cfg in NAMED_POOLING_CONFIGS.values():
            O = rng.standard_normal((5, cfg.dim)) * 1e-6  # tiny variance everywhere
            p = init_pooling_params(cfg, 1)
            out, _ = mqmha_forward(O, p, cfg)
            half = cfg.dim * cfg.queries
            assert np.all(out[half:] >= np.sqrt(cfg.epsilon) - 1e-15)

    def test_empty_input_rejected(self):
        cfg = PoolingConfig(dim=4, heads=2)
        p = init_pooling_params(cfg, 0)
        with pytest.raises(InputError):
            mqmha_forward(np.zeros((0, 4)), p, cfg)

    def test_wrong_width_rejected(self):
        cfg = PoolingConfig(dim=4, heads=2)
        p = init_pooling_params(cfg, 0)
        with pytest.raises(DimensionError):
            mqmha_forward(np.zeros((3, 5)), p, cfg)

    def test_deterministic(self):
        cfg = PoolingConfig(dim=8, heads=4, queries=2)
        p = init_pooling_params(cfg, 3)
        O = np.random.default_rng(3).standard_normal((7, 8))
        assert np.array_equal(mqmha_forward(O, p, cfg)[0], mqmha_forward(O, p, cfg)[0])


class TestBackward:
    def test_zero_gradient_in_zero_gradient_out(self):
        cfg = PoolingConfig(dim=6, heads=2, queries=2, attn_layers=2, hidden_dim=4)
        p = init_pooling_params(cfg, 0)
        _, cache = mqmha_forward(np.random.default_rng(0).standard_normal((5, 6)), p, cfg)
        gO, gp = mqmha_backward(np.zeros(cfg.out_dim), cache)
        assert not gO.any()
        assert not gp.w_out.any()
        assert not gp.w_hidden.any()

    @pytest.mark.parametrize("name", list(NAMED_POOLING_CONFIGS))
    def test_gradients_match_finite_differences(self, name):
        assert check_pooling_config(NAMED_POOLING_CONFIGS[name], seed=23, instances=10) <= 1e-6

    def test_clamped_variance_blocks_gradient(self):
        # constant frames: variance 0 < epsilon, so sigma gradients vanish
        cfg = PoolingConfig(dim=4, heads=2, queries=1)
        p = init_pooling_params(cfg, 6)
        O = np.ones((5, 4)) * 1.5
        _, cache = mqmha_forward(O, p, cfg)
        g = np.zeros(cfg.out_dim)
        g[cfg.dim * cfg.queries:] = 1.0  # only sigma entries
        gO, gp = mqmha_backward(g, cache)
        np.testing.assert_array_equal(gO, 0.0)
        np.testing.assert_array_equal(gp.w_out, 0.0)

    def test_gradient_shape_validated(self):
        cfg = PoolingConfig(dim=4, heads=2)
        p = init_pooling_params(cfg, 0)
        _, cache = mqmha_forward(np.ones((3, 4)), p, cfg)
        with pytest.raises(DimensionError):
            mqmha_backward(np.zeros(5), cache)


class TestStatisticsPool:
    def test_hand_case(self):
        out, _ = statistics_pool(np.array([[1.0, 3.0], [3.0, 1.0]]))
        np.testing.assert_allclose(out, [2.0, 2.0, 1.0, 1.0], atol=1e-12)

    def test_constant_frames(self):
        out, _ = statistics_pool(np.full((4, 3), 2.0), epsilon=1e-8)
        np.testing.assert_allclose(out[3:], np.sqrt(1e-8))

    def test_single_frame(self):
        out, _ = statistics_pool(np.array([[5.0, -1.0]]), epsilon=1e-8)
        np.testing.assert_allclose(out, [5.0, -1.0, 1e-4, 1e-4])

    def test_empty_rejected(self):
        with pytest.raises(InputError):
            statistics_pool(np.zeros((0, 3)))

    def test_vjp_matches_finite_differences(self):
        from miniasv.tensor import finite_diff_check

        rng = np.random.default_rng(31)
        O = rng.standard_normal((6, 3))
        probe = rng.standard_normal(6)

        def f(vec):
            out, vjp = statistics_pool(vec.reshape(6, 3))
            return float(probe @ out), vjp(probe).ravel()

        assert finite_diff_check(f, O.ravel()) <= 1e-6


@pytest.mark.skipif(not backend.numba_available(), reason="numba not installed")
class TestBackendAgreement:
    """The numba twins must agree with the numpy kernels to roundoff."""

    @pytest.mark.parametrize("name", list(NAMED_POOLING_CONFIGS))
    def test_forward_and_backward_agree(self, name):
        from miniasv import _pool_nb, _pool_np

        cfg = NAMED_POOLING_CONFIGS[name]
        rng = np.random.default_rng(77)
        T = 8
        X = rng.standard_normal((T, cfg.heads, cfg.head_dim))
        p = init_pooling_params(cfg, 13)
        stat = (cfg.heads, cfg.queries, cfg.head_dim)
        gmu, gsig = rng.standard_normal(stat), rng.standard_normal(stat)
        q, ds, eps = cfg.queries, cfg.weight_dim, cfg.epsilon

        if cfg.attn_layers == 1:
            ref = _pool_np.forward_n1(X, p.w_out, q, ds, eps)
            got = _pool_nb.forward_n1(X, p.w_out, q, ds, eps)
            for r, g in zip(ref, got):
                np.testing.assert_allclose(g, r, atol=1e-12)
            ref_b = _pool_np.backward_n1(X, p.w_out, ref[3], *ref[:3], gmu, gsig, q, ds, eps)
            got_b = _pool_nb.backward_n1(X, p.w_out, got[3], *got[:3], gmu, gsig, q, ds, eps)
        else:
            ref = _pool_np.forward_n2(X, p.w_hidden, p.w_out, q, ds, eps)
            got = _pool_nb.forward_n2(X, p.w_hidden, p.w_out, q, ds, eps)
            for r, g in zip(ref, got):
                np.testing.assert_allclose(g, r, atol=1e-12)
            ref_b = _pool_np.backward_n2(X, p.w_hidden, p.w_out, ref[3], ref[4],
                                         *ref[:3], gmu, gsig, q, ds, eps)
            got_b = _pool_nb.backward_n2(X, p.w_hidden, p.w_out, got[3], got[4],
                                         *got[:3], gmu, gsig, q, ds, eps)
        for r, g in zip(ref_b, got_b):
            np.testing.assert_allclose(g, r, atol=1e-12)
