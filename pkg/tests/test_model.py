"""Model behavior: per-op examples, identity anchors, structural invariants."""

import numpy as np
import pytest

from wearec.errors import ConfigError, InvalidInputError
from wearec.model import ForwardTrace, ModelConfig, WEARec, merge_heads, split_heads
from wearec.tape import Node, Tape

from conftest import tiny_config
from oracles import circular_convolve


def make_model(**overrides) -> WEARec:
    return WEARec(tiny_config(**overrides), seed=1)


def rand_sequences(model, batch=4, seed=0, pad=3):
    rng = np.random.default_rng(seed)
    cfg = model.config
    items = rng.integers(1, cfg.vocab_size, size=(batch, cfg.max_len))
    items[:, :pad] = 0
    targets = rng.integers(1, cfg.vocab_size, size=batch)
    return items, targets


class TestModelConfig:
    def test_m_bins_contract(self):
        cfg = ModelConfig(vocab_size=100, max_len=50)
        assert cfg.m_bins == 26
        assert cfg.k_half == 25

    @pytest.mark.parametrize(
        "bad",
        [
            dict(max_len=7),  # odd
            dict(embed_dim=10, heads=4),  # not divisible
            dict(alpha=1.5),
            dict(vocab_size=1),
            dict(dropout=1.0),
            dict(wavelet_level=2),
        ],
    )
    def test_invalid_configs_rejected(self, bad):
        base = dict(vocab_size=20, max_len=8, embed_dim=8, heads=2)
        base.update(bad)
        with pytest.raises(ConfigError):
            ModelConfig(**base)


class TestHeads:
    def test_single_head_is_whole_block(self):
        h = np.arange(12.0).reshape(3, 4)
        assert len(split_heads(h, 1)) == 1
        np.testing.assert_array_equal(split_heads(h, 1)[0], h)

    def test_merge_inverts_split(self):
        h = np.random.default_rng(0).standard_normal((5, 8))
        np.testing.assert_array_equal(merge_heads(split_heads(h, 4)), h)

    def test_contiguous_column_slices(self):
        h = np.arange(8.0).reshape(2, 4)
        b1, b2 = split_heads(h, 2)
        np.testing.assert_array_equal(b1, h[:, 0:2])
        np.testing.assert_array_equal(b2, h[:, 2:4])

    def test_indivisible_rejected(self):
        with pytest.raises(InvalidInputError):
            split_heads(np.zeros((2, 4)), 3)


class TestEmbed:
    def test_rows_standardized(self):
        model = make_model()
        items, _ = rand_sequences(model)
        h = model.embed(Tape(grad_enabled=False), items).value
        assert h.shape == (4, 8, 8)
        np.testing.assert_allclose(h.mean(axis=-1), 0.0, atol=1e-9)

    def test_padding_prefix_is_local(self):
        # Same suffix under different pad lengths: non-pad rows match.
        model = make_model()
        a = np.array([[0, 0, 0, 0, 1, 2, 3, 4]])
        b = np.array([[0, 0, 5, 6, 1, 2, 3, 4]])
        ha = model.embed(Tape(grad_enabled=False), a).value
        hb = model.embed(Tape(grad_enabled=False), b).value
        np.testing.assert_allclose(ha[0, 4:], hb[0, 4:], atol=1e-12)
        assert np.max(np.abs(ha[0, 2:4] - hb[0, 2:4])) > 1e-3

    def test_out_of_range_ids(self):
        model = make_model()
        items = np.zeros((1, 8), dtype=int)
        items[0, -1] = model.config.vocab_size
        with pytest.raises(InvalidInputError):
            model.embed(Tape(grad_enabled=False), items)


class TestContextVector:
    def test_equal_rows_pass_through(self):
        model = make_model()
        v = np.arange(8.0)
        h = Node(np.tile(v, (2, 8, 1)))
        c = model.context_vector(Tape(grad_enabled=False), h).value
        np.testing.assert_allclose(c, np.tile(v, (2, 1, 1)), atol=1e-12)

    def test_zero_input(self):
        model = make_model()
        c = model.context_vector(Tape(grad_enabled=False), Node(np.zeros((1, 8, 8))))
        np.testing.assert_array_equal(c.value, 0.0)

    def test_arithmetic_mean(self):
        model = WEARec(tiny_config(max_len=2, embed_dim=2, heads=1, blocks=1), seed=0)
        h = Node(np.array([[[1.0, 0.0], [3.0, 2.0]]]))
        c = model.context_vector(Tape(grad_enabled=False), h).value
        np.testing.assert_allclose(c, [[[2.0, 1.0]]])

    def test_masked_mean_excludes_padding(self):
        model = WEARec(
            tiny_config(max_len=4, embed_dim=2, heads=1, blocks=1,
                        context_excludes_padding=True),
            seed=0,
        )
        h = Node(np.array([[[9.0, 9.0], [9.0, 9.0], [1.0, 2.0], [3.0, 4.0]]]))
        items = np.array([[0, 0, 5, 6]])
        c = model.context_vector(Tape(grad_enabled=False), h, items).value
        np.testing.assert_allclose(c, [[[2.0, 3.0]]])


class TestModulateFilter:
    def test_zero_init_modulation_is_base(self):
        model = make_model()
        base_w = model.params["block0_filter_weight"].value
        base_b = model.params["block0_filter_bias"].value
        tp = Tape(grad_enabled=False)
        h = Node(np.random.default_rng(0).standard_normal((3, 8, 8)))
        mods = model.modulate_filter(tp, model.context_vector(tp, h), 0)
        for i, (w_hat, b_hat) in enumerate(mods.per_head):
            np.testing.assert_allclose(w_hat.value, np.tile(base_w[i][:, None], (3, 1, 1)))
            np.testing.assert_allclose(b_hat.value, np.tile(base_b[i][:, None], (3, 1, 1)))

    @pytest.mark.parametrize("delta,factor", [(1.0, 2.0), (-1.0, 0.0)])
    def test_forced_scale_delta(self, delta, factor):
        model = make_model()
        for mlp in ("scale_mlp",):
            model.params[f"block0_{mlp}_b2"].value[...] = delta
        tp = Tape(grad_enabled=False)
        h = Node(np.random.default_rng(0).standard_normal((2, 8, 8)))
        mods = model.modulate_filter(tp, model.context_vector(tp, h), 0)
        base_w = model.params["block0_filter_weight"].value
        for i, (w_hat, _) in enumerate(mods.per_head):
            np.testing.assert_allclose(
                w_hat.value, factor * np.tile(base_w[i][:, None], (2, 1, 1)), atol=1e-12
            )


class TestDffForward:
    def test_identity_filter_round_trips(self):
        model = make_model()
        model.set_identity_filters()
        h = Node(np.random.default_rng(1).standard_normal((3, 8, 8)))
        x = model.dff_forward(Tape(grad_enabled=False), h, 0)
        np.testing.assert_allclose(x.value, h.value, atol=1e-12)

    def test_zero_filter_annihilates(self):
        model = make_model()
        model.set_identity_filters()
        model.params["block0_filter_weight"].value[...] = 0.0
        h = Node(np.random.default_rng(1).standard_normal((3, 8, 8)))
        x = model.dff_forward(Tape(grad_enabled=False), h, 0)
        np.testing.assert_allclose(x.value, 0.0, atol=1e-12)

    def test_zeroed_dc_bin_subtracts_column_mean(self):
        model = make_model()
        override = np.ones(model.config.m_bins)
        override[0] = 0.0
        h_val = np.random.default_rng(2).standard_normal((2, 8, 8))
        x = model.dff_forward(
            Tape(grad_enabled=False), Node(h_val), 0, filter_override=override
        )
        expected = h_val - h_val.mean(axis=1, keepdims=True)
        np.testing.assert_allclose(x.value, expected, atol=1e-12)

    def test_head_count_consistency(self):
        # Identical per-head filter rows make the output independent of k.
        h_val = np.random.default_rng(3).standard_normal((2, 8, 8))
        row = np.random.default_rng(4).standard_normal(5)
        outs = []
        for k in (1, 2, 4):
            model = WEARec(tiny_config(heads=k), seed=k)
            model.set_identity_filters()
            model.params["block0_filter_weight"].value[...] = row
            outs.append(
                model.dff_forward(Tape(grad_enabled=False), Node(h_val), 0).value
            )
        np.testing.assert_allclose(outs[0], outs[1], atol=1e-5)
        np.testing.assert_allclose(outs[0], outs[2], atol=1e-5)

    def test_matches_circular_convolution(self):
        # Fixed real response with zero bias equals circular convolution
        # with the kernel given by its inverse transform.
        model = WEARec(tiny_config(max_len=16, embed_dim=4, heads=2), seed=0)
        rng = np.random.default_rng(5)
        response = rng.standard_normal(model.config.m_bins)
        h_val = rng.standard_normal((1, 16, 4))
        x = model.dff_forward(
            Tape(grad_enabled=False), Node(h_val), 0, filter_override=response
        ).value
        kernel = np.fft.irfft(response, 16)
        for ch in range(4):
            expected = circular_convolve(kernel, h_val[0, :, ch])
            np.testing.assert_allclose(x[0, :, ch], expected, atol=1e-10)


class TestWfeForward:
    def test_unit_enhancer_reconstructs(self):
        model = make_model()
        h = Node(np.random.default_rng(6).standard_normal((3, 8, 8)))
        y = model.wfe_forward(Tape(grad_enabled=False), h, 0)
        np.testing.assert_allclose(y.value, h.value, atol=1e-12)

    def test_zero_enhancer_is_pairwise_average(self):
        model = make_model()
        model.params["block0_enhancer"].value[...] = 0.0
        h_val = np.random.default_rng(7).standard_normal((2, 8, 8))
        y = model.wfe_forward(Tape(grad_enabled=False), Node(h_val), 0).value
        pair_mean = (h_val[:, 0::2] + h_val[:, 1::2]) / 2.0
        np.testing.assert_allclose(y[:, 0::2], pair_mean, atol=1e-12)
        np.testing.assert_allclose(y[:, 1::2], pair_mean, atol=1e-12)

    def test_doubled_enhancer_doubles_detail(self):
        model = make_model()
        model.params["block0_enhancer"].value[...] = 2.0
        h_val = np.random.default_rng(8).standard_normal((2, 8, 8))
        y = model.wfe_forward(Tape(grad_enabled=False), Node(h_val), 0).value
        got = y[:, 0::2] - y[:, 1::2]
        expected = 2.0 * (h_val[:, 0::2] - h_val[:, 1::2])
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_identity_flag_ignores_learned_enhancer(self):
        model = make_model()
        model.params["block0_enhancer"].value[...] = -3.0
        h = Node(np.random.default_rng(9).standard_normal((2, 8, 8)))
        y = model.wfe_forward(Tape(grad_enabled=False), h, 0, identity=True)
        np.testing.assert_allclose(y.value, h.value, atol=1e-12)


class TestMixAndFfn:
    @pytest.mark.parametrize("alpha", [0.0, 0.3, 1.0])
    def test_identity_config_premix_equals_input(self, alpha):
        model = WEARec(tiny_config(alpha=alpha, dtype="float32"), seed=2)
        model.set_identity_filters()
        items, _ = rand_sequences(model)
        trace = ForwardTrace()
        model.forward(Tape(grad_enabled=False), items, trace=trace)
        for h_in, mixed in zip(trace.block_inputs, trace.mixed):
            assert np.max(np.abs(mixed - h_in)) <= 1e-5

    def test_identity_config_block_is_norm_of_double(self):
        model = make_model()
        model.set_identity_filters()
        h_val = np.random.default_rng(10).standard_normal((2, 8, 8))
        tp = Tape(grad_enabled=False)
        out = model.mix_block(tp, Node(h_val), 0).value
        expected = (
            Tape(grad_enabled=False)
            .layer_norm(
                Node(2.0 * h_val),
                model.params["block0_mix_norm_gamma"],
                model.params["block0_mix_norm_beta"],
            )
            .value
        )
        np.testing.assert_allclose(out, expected, atol=1e-10)

    def test_zeroed_ffn_is_plain_norm(self):
        model = make_model()
        model.params["block0_ffn_w1"].value[...] = 0.0
        model.params["block0_ffn_w2"].value[...] = 0.0
        h_val = np.random.default_rng(11).standard_normal((2, 8, 8))
        out = model.ffn_block(Tape(grad_enabled=False), Node(h_val), 0).value
        expected = (
            Tape(grad_enabled=False)
            .layer_norm(
                Node(h_val),
                model.params["block0_ffn_norm_gamma"],
                model.params["block0_ffn_norm_beta"],
            )
            .value
        )
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_shape_preserved(self):
        model = make_model()
        h = Node(np.random.default_rng(12).standard_normal((3, 8, 8)))
        assert model.ffn_block(Tape(grad_enabled=False), h, 0).value.shape == (3, 8, 8)

    def test_degenerate_single_channel_model_runs(self):
        model = WEARec(
            ModelConfig(vocab_size=5, max_len=4, embed_dim=1, blocks=1, heads=1,
                        alpha=0.5, dropout=0.0),
            seed=0,
        )
        logits = model.predict_logits(np.array([[0, 1, 2, 3]]))
        assert logits.shape == (1, 5)


class TestForwardAndLoss:
    def test_logits_cover_vocabulary(self):
        model = make_model()
        items, _ = rand_sequences(model)
        assert model.predict_logits(items).shape == (4, model.config.vocab_size)

    def test_padding_never_in_topk(self):
        model = make_model()
        items, _ = rand_sequences(model)
        logits = model.predict_logits(items)
        top = np.argsort(-logits, axis=1)[:, :10]
        assert not np.any(top == 0)

    def test_weight_tying_gradient(self):
        # Perturbing one embedding row moves the loss through both the
        # encoder input and that item's logit; finite differences agree.
        model = make_model()
        items = np.array([[0, 0, 1, 2, 3, 4, 5, 6]])
        targets = np.array([7])
        table = model.params["item_embedding"]
        tp = Tape()
        loss = model.loss(tp, items, targets, train=False)
        model.zero_grad()
        tp.backward(loss)
        rng = np.random.default_rng(13)
        for row in (3, 7):  # 3 only in the input, 7 only the target
            direction = rng.standard_normal(8)
            h = 1e-6
            table.value[row] += h * direction
            up = float(model.loss(Tape(grad_enabled=False), items, targets, train=False).value)
            table.value[row] -= 2 * h * direction
            down = float(model.loss(Tape(grad_enabled=False), items, targets, train=False).value)
            table.value[row] += h * direction
            numeric = (up - down) / (2 * h)
            analytic = float(table.grad[row] @ direction)
            assert abs(numeric - analytic) <= 1e-6 * max(1.0, abs(analytic))
            assert abs(analytic) > 1e-12

    def test_untrained_loss_near_uniform_baseline(self):
        model = WEARec(
            ModelConfig(vocab_size=100, max_len=8, embed_dim=8, blocks=2, heads=2,
                        alpha=0.3, dropout=0.0),
            seed=4,
        )
        items, _ = rand_sequences(model, batch=16, seed=5)
        targets = np.full(16, 42)
        loss = float(model.loss(Tape(grad_enabled=False), items, targets, train=False).value)
        assert abs(loss - np.log(99.0)) <= 0.1 * np.log(99.0)

    def test_loss_nonnegative_and_confident_limit(self):
        model = make_model()
        items, targets = rand_sequences(model)
        loss = float(model.loss(Tape(grad_enabled=False), items, targets, train=False).value)
        assert loss >= 0.0
        # Drive the target logit up by aligning its embedding with h^L.
        tp = Tape(grad_enabled=False)
        items1, target1 = items[:1], targets[:1]
        logits = model.predict_logits(items1)
        boosted = logits.copy()
        boosted[0, target1[0]] += 100.0
        direct = Tape(grad_enabled=False).softmax_cross_entropy(Node(boosted[0]), int(target1[0]))
        assert float(direct.value) <= 1e-10

    def test_padding_target_rejected(self):
        model = make_model()
        items, _ = rand_sequences(model)
        with pytest.raises(InvalidInputError):
            model.loss(Tape(grad_enabled=False), items, np.zeros(4, dtype=int))

    def test_fixed_seed_reproduces_logits(self):
        items, _ = rand_sequences(make_model())
        a = make_model().predict_logits(items)
        b = make_model().predict_logits(items)
        np.testing.assert_array_equal(a, b)


class TestTrainingDeterminism:
    def test_ten_steps_bit_identical(self):
        from wearec.optim import AdamState, adam_step

        def run():
            model = WEARec(tiny_config(dropout=0.2), seed=9)
            items, targets = rand_sequences(model, batch=8, seed=11)
            state = AdamState(lr=0.01)
            for _ in range(10):
                tp = Tape()
                loss = model.loss(tp, items, targets, train=True)
                model.zero_grad()
                tp.backward(loss)
                adam_step(model.parameters(), state)
            return model.state_dict()

        a, b = run(), run()
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])


class TestFullModelGradients:
    def test_identity_config_grad_check(self):
        from wearec.gradcheck import grad_check

        model = make_model()
        model.set_identity_filters()
        items, targets = rand_sequences(model)
        err = grad_check(
            lambda tp: model.loss(tp, items, targets, train=False),
            model.parameters(),
            rng=np.random.default_rng(0),
        )
        assert err <= 1e-6
