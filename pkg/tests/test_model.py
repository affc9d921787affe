import math
from dataclasses import replace

import numpy as np
import pytest

from cain.checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from cain.config import variant_preset
from cain.data.batching import make_batch
from cain.errors import CheckpointError, ConfigDriftError, GradientError, UsageError
from cain.gradcheck import generic_point, tiny_batch, tiny_config
from cain.model import CainModel, train_step
from cain.optim import Adam
from cain.tensor import Graph

from tests.conftest import small_model_config


@pytest.fixture
def batch(small_data):
    return make_batch(small_data.samples[:16])


@pytest.fixture
def model(small_data):
    return CainModel(small_model_config(small_data.vocab), seed=1)


def zero_head(model):
    w, b = model.mlp[-1]
    w.data[...] = 0.0
    b.data[...] = 0.0


class TestPredict:
    def test_zero_final_layer_gives_half(self, model, batch):
        zero_head(model)
        assert np.all(model.predict(batch) == 0.5)

    def test_deterministic(self, model, batch):
        assert np.array_equal(model.predict(batch), model.predict(batch))

    def test_probabilities_in_open_interval(self, model, batch):
        p = model.predict(batch)
        assert np.all((p > 0) & (p < 1))

    @pytest.mark.parametrize("variant", ["baseline", "tcn", "msia", "cain"])
    def test_batch_equals_per_sample(self, small_data, variant):
        cfg = replace(small_model_config(small_data.vocab), **variant_preset(variant))
        m = CainModel(cfg, seed=2)
        samples = small_data.samples[:6]
        # ragged lengths force real padding inside the batch
        samples = [replace(s, lifelong=s.lifelong[i:], short_idx=[j - i for j in s.short_idx])
                   for i, s in enumerate(samples)]
        batched = m.predict(make_batch(samples))
        single = np.array([m.predict(make_batch([s]))[0] for s in samples])
        np.testing.assert_allclose(batched, single, rtol=0, atol=1e-12)

    def test_baseline_has_no_tcn(self, small_data):
        cfg = replace(small_model_config(small_data.vocab), **variant_preset("baseline"))
        names = set(CainModel(cfg).params)
        assert not any(n.startswith(("tcn.", "peg.")) for n in names)
        assert "attn.0.w_q" in names and "short.w_q" in names

    def test_invalid_ids(self, model, small_data):
        s = small_data.samples[0]
        bad = replace(s, candidate=replace(s.candidate, item_id=10**6))
        with pytest.raises(IndexError):
            model.predict(make_batch([bad]))


class TestLoss:
    def test_half_probability(self, model, batch):
        zero_head(model)
        assert float(model.loss(batch).data) == pytest.approx(math.log(2), abs=1e-15)

    def test_perfect_fit_is_clamp_scale(self, model, batch):
        w, b = model.mlp[-1]
        w.data[...] = 0.0
        labels = batch.labels.copy()
        batch.labels[...] = 1.0
        b.data[...] = 60.0
        loss = float(model.loss(batch).data)
        assert 0 < loss < 2e-7
        batch.labels[...] = labels

    def test_label_flip_symmetry(self, model, batch):
        before = float(model.loss(batch).data)
        w, b = model.mlp[-1]
        w.data *= -1
        b.data *= -1
        batch.labels[...] = 1.0 - batch.labels
        assert float(model.loss(batch).data) == pytest.approx(before, abs=1e-13)

    def test_empty_batch(self, model):
        with pytest.raises(UsageError):
            model.loss(make_batch([]))


class TestTraining:
    def test_zero_lr_leaves_params_unchanged(self, model, batch):
        before = {k: p.data.copy() for k, p in model.params.items()}
        train_step(model, Adam(model.params, lr=0.0), batch)
        for k, p in model.params.items():
            assert np.array_equal(p.data, before[k]), k

    def test_step_touches_every_parameter(self, small_data, batch):
        m = CainModel(small_model_config(small_data.vocab, peg_mode="sum"), seed=4)
        generic_point(m, 4, batch, scale=0.5)
        before = {k: p.data.copy() for k, p in m.params.items()}
        train_step(m, Adam(m.params, lr=1e-3), batch)
        for k, p in m.params.items():
            assert not np.array_equal(p.data, before[k]), k

    def test_repeated_batch_loss_decreases(self, model, batch):
        opt = Adam(model.params, lr=0.01)
        losses = [train_step(model, opt, batch) for _ in range(200)]
        assert losses[-1] < 0.5 * losses[0]
        assert np.mean(losses[-20:]) < np.mean(losses[20:40])

    def test_same_seed_same_trace(self, small_data, batch):
        traces = []
        for _ in range(2):
            m = CainModel(small_model_config(small_data.vocab), seed=5)
            opt = Adam(m.params, lr=0.01)
            traces.append([train_step(m, opt, batch) for _ in range(10)])
        assert traces[0] == traces[1]

    def test_nan_loss_aborts_with_tensor_name(self, model, batch):
        model.params["mlp.2.b"].data[0] = np.nan
        before = model.params["mlp.0.w"].data.copy()
        with pytest.raises(GradientError, match="loss is nan; first non-finite tensor: .*add"):
            train_step(model, Adam(model.params), batch)
        assert np.array_equal(model.params["mlp.0.w"].data, before)

    def test_nan_gradient_aborts(self, model, batch):
        # the ReLU hides this NaN from the forward pass; backward catches it
        model.params["mlp.0.w"].data[0, 0] = np.nan
        with pytest.raises(GradientError, match="non-finite gradient produced by op 'matmul'"):
            train_step(model, Adam(model.params), batch)

    def test_adam_matches_closed_form_first_step(self, model, batch):
        p = model.params["mlp.1.b"]
        before = p.data.copy()
        opt = Adam(model.params, lr=0.1)
        train_step(model, opt, batch)
        # first step of Adam moves every coordinate with nonzero gradient by lr (up to eps)
        moved = np.abs(p.data - before)
        np.testing.assert_allclose(moved[moved > 0], 0.1, rtol=1e-6)
        assert opt.step_count == 1


class TestInit:
    def test_xavier_bound(self, small_data):
        cfg = small_model_config(small_data.vocab, mlp_hidden=(4,), inner_dim=4)
        m = CainModel(cfg, seed=0)
        # the head maps 4 -> 1; the attention query maps 12 -> 4
        assert m.init_specs["attn.0.w_q"] == ("weight", 12, 4)
        a = math.sqrt(6 / (4 + 4))
        assert a == pytest.approx(0.866, abs=5e-4)

    def test_values_in_bounds_and_variance(self, small_data):
        m = CainModel(small_model_config(small_data.vocab, mlp_hidden=(256, 8)), seed=0)
        for name, spec in m.init_specs.items():
            data = m.params[name].data
            if spec[0] == "weight":
                a = math.sqrt(6 / (spec[1] + spec[2]))
                assert np.all(np.abs(data) < a), name
            elif spec[0] == "bias":
                assert not data.any(), name
            elif spec[0] == "embedding":
                assert np.all(np.abs(data) <= 0.05), name
        w = m.params["mlp.1.w"].data  # 256 x 8
        a = math.sqrt(6 / (256 + 8))
        assert abs(w.var() / (a * a / 3) - 1) < 0.2

    def test_peg_output_layer(self, small_data):
        m = CainModel(small_model_config(small_data.vocab), seed=0)
        assert not m.params["peg.0.w2"].data.any()
        assert m.params["peg.0.b2"].data.any()


class TestCheckpoint:
    def test_round_trip_is_bit_exact(self, model, batch, tmp_path):
        opt = Adam(model.params, lr=0.01)
        for _ in range(3):
            train_step(model, opt, batch)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model, opt)
        restored, ropt, _ = load_checkpoint(path)
        assert np.array_equal(restored.predict(batch), model.predict(batch))
        assert ropt.step_count == 3
        for k in model.params:
            assert np.array_equal(ropt.m[k], opt.m[k]) and np.array_equal(ropt.v[k], opt.v[k])

    def test_every_parameter_stored(self, model, tmp_path):
        save_checkpoint(tmp_path / "m.ckpt", model)
        _, _, tensors = read_checkpoint(tmp_path / "m.ckpt")
        assert set(tensors) == set(model.params)

    def test_truncated_file(self, model, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model)
        path.write_bytes(path.read_bytes()[:-100])
        with pytest.raises(CheckpointError, match="integrity"):
            load_checkpoint(path)

    def test_changed_stack_refused(self, model, small_data, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model)
        other = CainModel(small_model_config(small_data.vocab, layers=3))
        with pytest.raises(ConfigDriftError):
            load_checkpoint(path, other)


def test_tiny_variants_build_and_run():
    batch = tiny_batch(0)
    for variant in ("baseline", "tcn", "msia", "cain"):
        m = CainModel(tiny_config(variant))
        with Graph() as g:
            loss = m.loss(batch)
        g.backward(loss)
        assert math.isfinite(float(loss.data))
