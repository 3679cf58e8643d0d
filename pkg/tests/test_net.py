import numpy as np
import pytest

from sigformer.net import (
    ModelConfig,
    attention_forward,
    attention_ops,
    init_model_params,
    load_checkpoint,
    loss,
    model_backward,
    model_forward,
    reset_attention_ops,
    save_checkpoint,
    sinusoidal_position_table,
)


def tiny_params(input_dim=5, output_dim=3, max_len=6, d_model=8, seed=0, **kw):
    config = ModelConfig(d_model=d_model, **kw)
    return init_model_params(input_dim, output_dim, max_len, config, seed=seed)


def central_difference(tokens, params, targets, task, name, arr, eps=1e-5):
    grad = np.empty_like(arr)
    flat = arr.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        lp, _ = loss(model_forward(tokens, params, task)[0], targets, task)
        flat[i] = orig - eps
        lm, _ = loss(model_forward(tokens, params, task)[0], targets, task)
        flat[i] = orig
        gflat[i] = (lp - lm) / (2 * eps)
    return grad


class TestAttention:
    def test_zero_queries_give_uniform_attention(self):
        params = tiny_params()
        blk = params.blocks[0]
        blk.wq[:] = 0.0
        blk.wk[:] = 0.0
        blk.wo[:] = np.eye(8)
        rng = np.random.default_rng(0)
        tokens = rng.normal(size=(4, 8))
        out, cache = attention_forward(tokens, blk)
        v = cache["v"][0]
        assert np.allclose(cache["attn"][0], 0.25)
        assert np.allclose(out, np.broadcast_to(v.mean(axis=0), (4, 8)))

    def test_single_token(self):
        params = tiny_params()
        blk = params.blocks[0]
        rng = np.random.default_rng(1)
        tokens = rng.normal(size=(1, 8))
        out, cache = attention_forward(tokens, blk)
        assert np.allclose(cache["attn"], 1.0)
        assert np.allclose(out, (tokens @ blk.wv) @ blk.wo)

    def test_rows_sum_to_one(self):
        params = tiny_params()
        rng = np.random.default_rng(2)
        tokens = rng.normal(size=(3, 4, 8)) * 5.0
        _, cache = attention_forward(tokens, params.blocks[0])
        sums = cache["attn"].sum(axis=-1)
        assert np.max(np.abs(sums - 1.0)) < 1e-12

    def test_op_counter_tracks_length_not_samples(self):
        params = tiny_params()
        rng = np.random.default_rng(3)
        reset_attention_ops()
        attention_forward(rng.normal(size=(2, 5, 8)), params.blocks[0])
        assert attention_ops() == 4 * 2 * 5 * 5 * 8


class TestForward:
    def test_zero_model_emits_head_bias(self):
        params = tiny_params()
        for name, arr in params.named_parameters():
            arr[:] = 0.0
        params.head_b[:] = [1.0, -2.0, 3.0]
        # layer norm needs nonzero scale to stay well-defined
        for blk in params.blocks:
            blk.ln1_g[:] = 1.0
            blk.ln2_g[:] = 1.0
        logits, _ = model_forward(np.zeros((4, 5)), params)
        assert np.allclose(logits, [1.0, -2.0, 3.0])

    def test_permutation_invariance_without_positions(self):
        params = tiny_params(use_positional=False)
        rng = np.random.default_rng(4)
        tokens = rng.normal(size=(6, 5))
        logits, _ = model_forward(tokens, params)
        perm = rng.permutation(6)
        logits_p, _ = model_forward(tokens[perm], params)
        assert np.max(np.abs(logits - logits_p)) < 1e-10

    def test_forward_is_deterministic(self):
        params = tiny_params(seed=9)
        rng = np.random.default_rng(5)
        tokens = rng.normal(size=(2, 6, 5))
        a, _ = model_forward(tokens, params)
        b, _ = model_forward(tokens, params)
        assert np.array_equal(a, b)

    def test_batched_matches_single(self):
        params = tiny_params()
        rng = np.random.default_rng(6)
        tokens = rng.normal(size=(3, 4, 5))
        batched, _ = model_forward(tokens, params)
        for i in range(3):
            single, _ = model_forward(tokens[i], params)
            assert np.allclose(single, batched[i], atol=1e-12)

    def test_nan_input_aborts(self):
        params = tiny_params()
        tokens = np.full((4, 5), np.nan)
        with pytest.raises(FloatingPointError):
            model_forward(tokens, params)

    def test_positions_extend_past_table(self):
        params = tiny_params(max_len=4)
        rng = np.random.default_rng(7)
        logits, _ = model_forward(rng.normal(size=(9, 5)), params)
        assert np.all(np.isfinite(logits))


class TestLoss:
    def test_uniform_logits_cross_entropy(self):
        value, _ = loss(np.zeros(5), 2, "classify")
        assert np.isclose(value, np.log(5))

    def test_two_class_closed_form(self):
        value, _ = loss(np.array([1.0, 0.0]), 0, "classify")
        assert np.isclose(value, np.log(1 + np.exp(-1.0)))

    def test_mse_zero_at_target(self):
        value, grad = loss(np.array([1.0, 2.0]), np.array([1.0, 2.0]), "regress")
        assert value == 0.0
        assert np.allclose(grad, 0.0)

    def test_logit_shift_invariance(self):
        rng = np.random.default_rng(8)
        z = rng.normal(size=(4, 6))
        t = rng.integers(0, 6, size=4)
        v0, g0 = loss(z, t, "classify")
        v1, g1 = loss(z + 117.3, t, "classify")
        assert abs(v0 - v1) < 1e-12
        assert np.max(np.abs(g0 - g1)) < 1e-12

    def test_class_out_of_range(self):
        with pytest.raises(ValueError):
            loss(np.zeros(3), 3, "classify")

    def test_ce_gradient_matches_finite_difference(self):
        rng = np.random.default_rng(9)
        z = rng.normal(size=6)
        _, grad = loss(z, 4, "classify")
        eps = 1e-6
        for i in range(6):
            zp, zm = z.copy(), z.copy()
            zp[i] += eps
            zm[i] -= eps
            fd = (loss(zp, 4, "classify")[0] - loss(zm, 4, "classify")[0]) / (2 * eps)
            assert abs(fd - grad[i]) < 1e-8


class TestBackward:
    @pytest.mark.parametrize("task", ["classify", "regress"])
    @pytest.mark.parametrize("seed", range(5))
    def test_gradients_match_central_differences(self, task, seed):
        rng = np.random.default_rng(seed)
        params = tiny_params(input_dim=4, output_dim=3, max_len=5, d_model=6, seed=seed)
        tokens = rng.normal(size=(2, 5, 4))
        targets = (
            rng.integers(0, 3, size=2) if task == "classify" else rng.normal(size=(2, 3))
        )
        logits, cache = model_forward(tokens, params, task)
        _, dlogits = loss(logits, targets, task)
        grads = model_backward(params, cache, dlogits)
        for name, arr in params.named_parameters():
            fd = central_difference(tokens, params, targets, task, name, arr)
            denom = np.maximum(1.0, np.abs(grads[name]))
            rel = np.max(np.abs(grads[name] - fd) / denom)
            assert rel <= 1e-4, f"{name}: rel err {rel:.2e}"

    def test_zero_upstream_gradient(self):
        params = tiny_params()
        rng = np.random.default_rng(11)
        tokens = rng.normal(size=(3, 5))
        _, cache = model_forward(tokens, params)
        grads = model_backward(params, cache, np.zeros(3))
        for name, _ in params.named_parameters():
            assert np.all(grads[name] == 0.0), name

    def test_duplicated_sample_matches_single(self):
        params = tiny_params()
        rng = np.random.default_rng(12)
        tokens = rng.normal(size=(4, 5))
        logits, cache = model_forward(tokens, params)
        _, dl = loss(logits, 1, "classify")
        single = model_backward(params, cache, dl)

        pair = np.stack([tokens, tokens])
        logits2, cache2 = model_forward(pair, params)
        _, dl2 = loss(logits2, np.array([1, 1]), "classify")
        double = model_backward(params, cache2, dl2)
        for name, _ in params.named_parameters():
            assert np.allclose(single[name], double[name], atol=1e-12), name

    def test_padded_batch_matches_per_sample(self):
        params = tiny_params(seed=31)
        rng = np.random.default_rng(14)
        samples = [rng.normal(size=(n, 5)) for n in (3, 6, 4)]
        lengths = np.array([3, 6, 4])
        padded = np.zeros((3, 6, 5))
        for i, s in enumerate(samples):
            padded[i, : s.shape[0]] = s
        batched, cache = model_forward(padded, params, lengths=lengths)
        for i, s in enumerate(samples):
            single, _ = model_forward(s, params)
            assert np.max(np.abs(single - batched[i])) < 1e-12, i

        # gradients of the padded batch equal the mean of per-sample gradients
        targets = np.array([0, 2, 1])
        _, dl = loss(batched, targets, "classify")
        logits2, cache = model_forward(padded, params, lengths=lengths)
        grads = model_backward(params, cache, dl)
        accum = None
        for i, s in enumerate(samples):
            logits, c = model_forward(s, params)
            _, dli = loss(logits, targets[i], "classify")
            gi = model_backward(params, c, dli)
            accum = (
                {k: v / 3 for k, v in gi.items()}
                if accum is None
                else {k: accum[k] + gi[k] / 3 for k, v in gi.items()}
            )
        for name, _ in params.named_parameters():
            assert np.max(np.abs(grads[name] - accum[name])) < 1e-12, name

    def test_padding_values_are_irrelevant(self):
        params = tiny_params(seed=32)
        rng = np.random.default_rng(15)
        sample = rng.normal(size=(4, 5))
        lengths = np.array([4, 4])
        a = np.zeros((2, 7, 5))
        b = np.full((2, 7, 5), 123.0)
        for buf in (a, b):
            buf[0, :4] = sample
            buf[1, :4] = sample
        la, _ = model_forward(a, params, lengths=lengths)
        lb, _ = model_forward(b, params, lengths=lengths)
        assert np.array_equal(la, lb)

    def test_stale_cache_rejected(self):
        params = tiny_params()
        rng = np.random.default_rng(13)
        tokens = rng.normal(size=(3, 5))
        _, cache = model_forward(tokens, params)
        model_forward(tokens, params)
        with pytest.raises(ValueError, match="stale"):
            model_backward(params, cache, np.zeros(3))


class TestPositions:
    def test_table_shape_and_range(self):
        table = sinusoidal_position_table(10, 8)
        assert table.shape == (10, 8)
        assert np.all(np.abs(table) <= 1.0)
        assert np.allclose(table[0, 0::2], 0.0)
        assert np.allclose(table[0, 1::2], 1.0)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        params = tiny_params(seed=21, num_blocks=2)
        echo = {"note": "round trip", "seed": 21}
        rng_state = {"state": [1, 2, 3]}
        path = tmp_path / "model.npz"
        save_checkpoint(path, params, echo, rng_state)
        loaded, echo2, rng2 = load_checkpoint(path)
        assert echo2 == echo
        assert rng2 == rng_state
        for (na, a), (nb, b) in zip(
            params.named_parameters(), loaded.named_parameters()
        ):
            assert na == nb
            assert np.array_equal(a, b), na
        rng = np.random.default_rng(1)
        tokens = rng.normal(size=(4, 5))
        la, _ = model_forward(tokens, params)
        lb, _ = model_forward(tokens, loaded)
        assert np.array_equal(la, lb)
