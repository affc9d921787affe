import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cain.errors import ConfigError
from cain.tcn import (
    TcnLayerConfig,
    build_stack,
    filter_size_for,
    receptive_field,
    stack_forward,
    tcn_forward,
)
from cain.tensor import Tensor

from tests.oracles import naive_tcn, random_gapfree_stack, sensitivity, sensitivity_mismatches


def random_layer(rng, length=None):
    fs = int(rng.choice([1, 3, 5, 7, 9]))
    cfg = TcnLayerConfig(fs, int(rng.integers(1, 5)), int(rng.integers(1, 5)), int(rng.integers(1, 5)))
    length = length or int(rng.integers(1, 21))
    x = rng.normal(size=(length, cfg.in_dim))
    return cfg, x, rng.normal(size=cfg.filter_shape()), rng.normal(size=cfg.out_dim)


class TestLayer:
    def test_filter_size_one_is_per_item_fc(self):
        rng = np.random.default_rng(0)
        x, w, b = rng.normal(size=(6, 3)), rng.normal(size=(3, 2)), rng.normal(size=2)
        out = tcn_forward(Tensor(x), TcnLayerConfig(1, 1, 3, 2), Tensor(w[None]), Tensor(b))
        np.testing.assert_allclose(out.data, x @ w + b, atol=1e-14)

    def test_first_row_sees_zero_pad(self):
        # fs=3 on rows e1..e4: row 1 sees [0, e1, e2]
        x = np.array([[1.0], [2.0], [3.0], [4.0]])
        filt = np.array([[[100.0]], [[10.0]], [[1.0]]])
        out = tcn_forward(Tensor(x), TcnLayerConfig(3, 1, 1, 1), Tensor(filt), Tensor(np.zeros(1)))
        assert out.data[0, 0] == 0 * 100 + 1 * 10 + 2 * 1
        assert out.data[3, 0] == 3 * 100 + 4 * 10 + 0 * 1

    def test_stride_two_centers(self):
        cfg = TcnLayerConfig(1, 2, 1, 1)
        x = np.arange(7.0)[:, None]
        out = tcn_forward(Tensor(x), cfg, Tensor(np.ones((1, 1, 1))), Tensor(np.zeros(1)))
        assert out.shape == (4, 1)
        assert out.data[:, 0].tolist() == [0, 2, 4, 6]

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_naive_loop(self, seed):
        rng = np.random.default_rng(seed)
        cfg, x, f, b = random_layer(rng)
        out = tcn_forward(Tensor(x), cfg, Tensor(f), Tensor(b))
        np.testing.assert_allclose(out.data, naive_tcn(x, cfg, f, b), rtol=0, atol=1e-12)

    def test_per_row_filters(self):
        rng = np.random.default_rng(3)
        cfg = TcnLayerConfig(3, 2, 2, 3)
        x = rng.normal(size=(4, 9, 2))
        f, b = rng.normal(size=(4,) + cfg.filter_shape()), rng.normal(size=(4, 3))
        out = tcn_forward(Tensor(x), cfg, Tensor(f), Tensor(b)).data
        for i in range(4):
            np.testing.assert_allclose(out[i], naive_tcn(x[i], cfg, f[i], b[i]), atol=1e-12)

    def test_wrong_input_dim(self):
        with pytest.raises(ConfigError):
            tcn_forward(Tensor(np.zeros((4, 3))), TcnLayerConfig(3, 1, 2, 2),
                        Tensor(np.zeros((3, 2, 2))), Tensor(np.zeros(2)))

    @pytest.mark.parametrize("fs,stride", [(2, 1), (0, 1), (3, 0), (3, -2)])
    def test_invalid_layer(self, fs, stride):
        with pytest.raises(ConfigError):
            TcnLayerConfig(fs, stride, 1, 1)

    def test_filter_size_for(self):
        assert [filter_size_for(c) for c in (0, 1, 7)] == [1, 3, 15]
        with pytest.raises(ConfigError):
            filter_size_for(-1)


class TestStack:
    def test_receptive_field_single(self):
        assert receptive_field(build_stack([15], [1], [4], 4)) == [7]

    def test_receptive_field_two_layers(self):
        assert receptive_field(build_stack([15, 3], [1, 1], [4, 4], 4)) == [7, 8]

    def test_default_stack_lengths(self):
        stack = build_stack([15, 3, 3, 3], [1, 4, 4, 4], [4] * 4, 4)
        assert stack.output_lengths(256) == [256, 64, 16, 4]
        assert receptive_field(stack) == [7, 8, 12, 28]

    def test_one_layer_stack_equals_layer(self):
        rng = np.random.default_rng(1)
        cfg, x, f, b = random_layer(rng, length=9)
        stack = build_stack([cfg.filter_size], [cfg.stride], [cfg.out_dim], cfg.in_dim)
        outs, _ = stack_forward(Tensor(x), stack, [Tensor(f)], [Tensor(b)])
        np.testing.assert_array_equal(outs[0].data,
                                      tcn_forward(Tensor(x), cfg, Tensor(f), Tensor(b)).data)

    def test_zero_filters_propagate_bias(self):
        stack = build_stack([3, 3], [1, 2], [2, 2], 3, activation="identity")
        filters = [Tensor(np.zeros((3, 3, 2))), Tensor(np.zeros((3, 2, 2)))]
        b1, b2 = np.array([1.0, -1.0]), np.array([0.5, 2.0])
        # layer 2 sees the constant b1 rows (zero padding at its edges)
        x = Tensor(np.random.default_rng(0).normal(size=(6, 3)))
        outs, _ = stack_forward(x, stack, filters, [Tensor(b1), Tensor(b2)])
        np.testing.assert_array_equal(outs[0].data, np.tile(b1, (6, 1)))
        np.testing.assert_array_equal(outs[1].data, np.tile(b2, (3, 1)))

    def test_dim_chain_mismatch(self):
        stack = build_stack([3, 3], [1, 1], [2, 2], 3)
        with pytest.raises(ConfigError):
            build_stack([3], [1, 1], [2], 3)
        bad = [Tensor(np.zeros((3, 3, 4))), Tensor(np.zeros((3, 2, 2)))]
        with pytest.raises(ConfigError):
            stack_forward(Tensor(np.zeros((5, 3))), stack, bad, [Tensor(np.zeros(4)),
                                                                Tensor(np.zeros(2))])

    def test_masked_rows_act_like_padding(self):
        rng = np.random.default_rng(2)
        stack = build_stack([3, 3], [1, 2], [2, 2], 2)
        filters = [Tensor(rng.normal(size=(3, 2, 2))), Tensor(rng.normal(size=(3, 2, 2)))]
        biases = [Tensor(rng.normal(size=2)), Tensor(rng.normal(size=2))]
        x = rng.normal(size=(5, 2))
        padded = np.vstack([np.zeros((3, 2)), x])
        mask = np.array([False] * 3 + [True] * 5)
        outs, masks = stack_forward(Tensor(padded), stack, filters, biases, mask)
        ref, _ = stack_forward(Tensor(x), stack, filters, biases)
        # right-anchored grid: the newest rows agree regardless of left padding
        np.testing.assert_allclose(outs[1].data[masks[1]], ref[1].data, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**20))
def test_sensitivity_matches_receptive_field(seed):
    rng = np.random.default_rng(seed)
    stack = random_gapfree_stack(rng)
    filters = [Tensor(rng.normal(size=c.filter_shape())) for c in stack.layers]
    biases = [Tensor(rng.normal(size=c.out_dim)) for c in stack.layers]
    forward = lambda inp: stack_forward(Tensor(inp), stack, filters, biases)[0][-1].data
    bad, interior = sensitivity_mismatches(stack, receptive_field(stack)[-1], forward, rng)
    assert interior > 0 and bad == 0


def test_gapped_stack_leaves_holes():
    # stride 4 then fs=3: taps 4 apart over 1-wide windows
    stack = build_stack([1, 3], [4, 1], [1, 1], 1, activation="identity")
    forward = lambda inp: stack_forward(Tensor(inp), stack, [Tensor(np.ones((1, 1, 1))),
                                                              Tensor(np.ones((3, 1, 1)))],
                                        [Tensor(np.zeros(1))] * 2)[0][-1].data
    seen = sensitivity(forward, np.ones((13, 1)))
    # the last row (center 12) taps inputs 8 and 12 plus right padding: cl = 4, with holes
    assert np.flatnonzero(seen[-1]).tolist() == [8, 12]
