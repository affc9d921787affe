"""End-to-end acceptance checks, one test and one PASS/FAIL line per criterion.

The experiment criteria train real models on the default planted-context
dataset (50k train / 10k test); the whole module takes roughly a quarter of
an hour on one core.
"""

import tempfile
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from cain.checkpoint import load_checkpoint, save_checkpoint
from cain.config import ModelConfig, TrainConfig, variant_preset
from cain.data.batching import make_batch
from cain.data.synthetic import GeneratorConfig, bayes_oracle, generate_synthetic, temporal_split
from cain.errors import ConfigDriftError
from cain.gradcheck import TOLERANCE, run_suite
from cain.metrics import auc, gauc, logloss
from cain.model import CainModel, train_step
from cain.optim import Adam
from cain.peg import generate_filters, profile_representation
from cain.embeddings import candidate_representation
from cain.tcn import TcnLayerConfig, receptive_field, stack_forward, tcn_forward
from cain.tensor import Tensor
from cain.train import build, evaluate_model, fit

from tests.oracles import (
    loop_logloss,
    naive_tcn,
    pair_auc,
    random_gapfree_stack,
    sensitivity_mismatches,
)

TEST_FRACTION = 1 / 6
# fixed budget: test AUC peaks around epoch 5 on this data and then slowly overfits
EXPERIMENT = TrainConfig(epochs=5, lr=0.003, batch_size=256, log_every=0, seed=0)
SINGLE_LAYER = dict(layers=1, peg_layers="none")
# two PEG layers at default dims; the four-layer default does not converge in the budget
CAIN = dict(context_length=1, layers=2, peg_layers="all")


class Planted:
    """A generated split plus lazily trained, memoized test AUCs."""

    def __init__(self, gen: GeneratorConfig):
        t0 = time.perf_counter()
        self.train, self.test = temporal_split(generate_synthetic(gen), TEST_FRACTION)
        self.pointwise = bayes_oracle(self.test, "point-wise")
        self.context = bayes_oracle(self.test, "context")
        self.seconds = {"data": time.perf_counter() - t0}
        self._auc = {}

    @staticmethod
    def key(model: dict) -> tuple:
        return tuple(sorted(model.items()))

    def auc(self, **model) -> float:
        key = self.key(model)
        if key not in self._auc:
            t0 = time.perf_counter()
            m, opt = build(ModelConfig(vocab=self.train.vocab, **model), EXPERIMENT)
            fit(m, opt, self.train, EXPERIMENT)
            self._auc[key] = evaluate_model(m, self.test)["auc"]
            self.seconds[key] = time.perf_counter() - t0
        return self._auc[key]


@pytest.fixture(scope="module")
def planted():
    return Planted(GeneratorConfig())


def test_criterion_1_gradient_suite(verdict):
    t0 = time.perf_counter()
    results = run_suite(seed=0, eps=1e-5)
    seconds = time.perf_counter() - t0
    worst = max(results, key=lambda r: r.max_rel_err)
    failed = [r.name for r in results if not r.ok]
    variants = {r.name for r in results if r.name.startswith("model_")}
    ok = not failed and seconds < 60 and len(variants) == 4
    assert verdict("1", ok, f"{len(results)} checks, worst {worst.name} rel err "
                   f"{worst.max_rel_err:.2e} (< {TOLERANCE:g}), failed={failed}, {seconds:.1f}s")


def test_criterion_2_convolution_and_receptive_field(verdict):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        fs = int(rng.choice([1, 3, 5, 7, 9]))
        cfg = TcnLayerConfig(fs, int(rng.integers(1, 5)), int(rng.integers(1, 6)),
                             int(rng.integers(1, 6)))
        x = rng.normal(size=(int(rng.integers(1, 25)), cfg.in_dim))
        f, b = rng.normal(size=cfg.filter_shape()), rng.normal(size=cfg.out_dim)
        out = tcn_forward(Tensor(x), cfg, Tensor(f), Tensor(b)).data
        worst = max(worst, float(np.max(np.abs(out - naive_tcn(x, cfg, f, b)))))
    stacks_bad = 0
    for _ in range(20):
        stack = random_gapfree_stack(rng)
        filters = [Tensor(rng.normal(size=c.filter_shape())) for c in stack.layers]
        biases = [Tensor(rng.normal(size=c.out_dim)) for c in stack.layers]
        forward = lambda inp: stack_forward(Tensor(inp), stack, filters, biases)[0][-1].data
        bad, interior = sensitivity_mismatches(stack, receptive_field(stack)[-1], forward, rng)
        stacks_bad += bad > 0 or interior == 0
    ok = worst <= 1e-12 and stacks_bad == 0
    assert verdict("2", ok, f"naive-loop max abs diff {worst:.1e} over 100 configs (<= 1e-12); "
                   f"{20 - stacks_bad}/20 stacks match the receptive field")


def test_criterion_3_metric_oracles(verdict):
    rng = np.random.default_rng(3)
    auc_mismatch = 0
    for _ in range(200):
        n = int(rng.integers(2, 40))
        labels = rng.integers(0, 2, n)
        labels[:2] = [0, 1]
        scores = rng.integers(0, int(rng.integers(1, 8)) + 1, n) / 4  # heavy ties
        auc_mismatch += auc(scores, labels) != pair_auc(scores, labels)
    fixture_auc = auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    fixture_gauc = gauc([0.1, 0.2, 0.8, 0.9, 0.5, 0.5], [0, 0, 1, 1, 0, 1], [1, 1, 1, 1, 2, 2])
    ll_worst = 0.0
    for _ in range(50):
        p, y = rng.random(30), rng.integers(0, 2, 30)
        ll_worst = max(ll_worst, abs(logloss(p, y) - loop_logloss(p, y)))
    ok = auc_mismatch == 0 and fixture_auc == 0.75 and fixture_gauc == 5 / 6 and ll_worst < 1e-12
    assert verdict("3", ok, f"AUC vs pair count: {200 - auc_mismatch}/200 exact; "
                   f"fixtures auc={fixture_auc} gauc={fixture_gauc!r}; logloss diff {ll_worst:.1e}")


def test_criterion_4_planted_context(planted, verdict):
    baseline_cfg = dict(context_length=-1, **SINGLE_LAYER)
    baseline, cain = planted.auc(**baseline_cfg), planted.auc(**CAIN)
    timed = ("data", Planted.key(baseline_cfg), Planted.key(CAIN))
    seconds = sum(planted.seconds[k] for k in timed)
    ok = (cain - baseline >= 0.05 and abs(cain - planted.context) <= 0.03
          and abs(baseline - planted.pointwise) <= 0.03 and seconds < 600)
    assert verdict("4", ok, f"CAIN AUC {cain:.4f} vs context oracle {planted.context:.4f}; "
                   f"baseline {baseline:.4f} vs point-wise oracle {planted.pointwise:.4f}; "
                   f"lift {cain - baseline:+.4f}; {seconds:.0f}s")


def test_criterion_5_ablation_directions(planted, verdict):
    sweep = {cl: planted.auc(context_length=cl, **SINGLE_LAYER) for cl in (-1, 0, 1, 3, 7)}
    flat = max(sweep[-1], sweep[0])
    ok_a = all(sweep[cl] > flat for cl in (1, 3, 7)) and abs(sweep[-1] - sweep[0]) <= 0.005

    # long-range signal only: the trigger collapses the item two steps later, which
    # a cl=0 first layer cannot see but a second fs=3 layer can
    deep = Planted(GeneratorConfig(long_range=True, long_range_offset=2, trigger_drop=0.0))
    one = deep.auc(context_length=0, layers=1, deep_stride=1, peg_layers="none")
    two = deep.auc(context_length=0, layers=2, deep_stride=1, peg_layers="none")
    ok_b = two >= one

    strided = planted.auc(context_length=1, first_stride=3, **SINGLE_LAYER)
    ok_c = strided < sweep[1]

    cells = " ".join(f"{cl}:{v:.4f}" for cl, v in sweep.items())
    assert verdict("5", ok_a and ok_b and ok_c,
                   f"(a) cl sweep {cells} [{'ok' if ok_a else 'bad'}]; "
                   f"(b) depth 1:{one:.4f} 2:{two:.4f} [{'ok' if ok_b else 'bad'}]; "
                   f"(c) first stride 1:{sweep[1]:.4f} 3:{strided:.4f} [{'ok' if ok_c else 'bad'}]")


def test_criterion_6_peg(verdict):
    data = Planted(GeneratorConfig(group_offsets=(1, -1)))

    # degeneracy: zero hypernetwork output weights, identical sequences, different profiles
    model = CainModel(ModelConfig(vocab=data.train.vocab, context_length=1, layers=2), seed=0)
    for name, p in model.params.items():
        if name.startswith("peg.") and name.endswith(".w2"):
            p.data[...] = 0.0
    by_profile = {}
    for o in data.train.samples:
        by_profile.setdefault(o.profile, o)
        if len(by_profile) == 4:
            break
    s, *others = by_profile.values()
    twins = [s] + [replace(o, lifelong=s.lifelong, short_idx=s.short_idx, candidate=s.candidate)
                   for o in others]
    batch = make_batch(twins)
    ve = candidate_representation(model.tables, batch.cand_item, batch.cand_category,
                                  batch.cand_author)
    prof = profile_representation(model.tables, batch.demographics, batch.stats, batch.authors,
                                  batch.authors_mask)
    interest = model._lifelong_interest(batch, ve, prof).data
    distinct_profiles = len({t.profile for t in twins})
    generated = [t.data for net in model.peg.values() for t in generate_filters(prof, net)]
    shared = [interest] + generated
    bit_equal = all(np.array_equal(a[0], row) for a in shared for row in a[1:])

    common = dict(context_length=1, layers=1, tcn_dim=8, inner_dim=8)
    with_peg = data.auc(peg_layers="all", **common)
    without = data.auc(peg_layers="none", **common)
    ok = bit_equal and distinct_profiles == len(twins) > 1 and with_peg - without >= 0.02
    assert verdict("6", ok, f"constant hypernetwork: {len(twins)} users, filters and "
                   f"outputs bit-equal={bit_equal}; "
                   f"group-dependent trigger: PEG {with_peg:.4f} vs none {without:.4f} "
                   f"(lift {with_peg - without:+.4f})")


def test_criterion_7_determinism_and_persistence(verdict):
    data = generate_synthetic(GeneratorConfig(n_users=60, samples_per_user=8))
    cfg = ModelConfig(vocab=data.vocab, emb_dim=8, layers=2, tcn_dim=8, inner_dim=8,
                      mlp_hidden=(16,))
    train = TrainConfig(epochs=1, batch_size=32, lr=0.003, log_every=0, seed=7)
    traces, models = [], []
    for _ in range(2):
        m, opt = build(cfg, train)
        traces.append(fit(m, opt, data, train)["losses"])
        models.append((m, opt))
    same_trace = traces[0] == traces[1] and len(traces[0]) == 15

    m, opt = models[0]
    batch = make_batch(data.samples[:64])
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "m.ckpt"
        save_checkpoint(path, m, opt)
        restored, ropt, _ = load_checkpoint(path)
        round_trip = (np.array_equal(restored.predict(batch), m.predict(batch))
                      and all(np.array_equal(restored.params[k].data, p.data)
                              for k, p in m.params.items())
                      and all(np.array_equal(ropt.m[k], opt.m[k]) and
                              np.array_equal(ropt.v[k], opt.v[k]) for k in m.params)
                      and ropt.step_count == opt.step_count)
        try:
            load_checkpoint(path, CainModel(replace(cfg, layers=3)))
            guarded = False
        except ConfigDriftError:
            guarded = True
    ok = same_trace and round_trip and guarded
    assert verdict("7", ok, f"identical loss traces={same_trace} ({len(traces[0])} steps); "
                   f"checkpoint bit-exact={round_trip}; mismatched config refused={guarded}")


def test_criterion_8_overfit_one_batch(verdict):
    data = generate_synthetic(GeneratorConfig(n_users=20, samples_per_user=4))
    batch = make_batch(data.samples[:32])
    report, ok = [], True
    for variant in ("baseline", "tcn", "msia", "cain"):
        model = CainModel(ModelConfig(vocab=data.vocab, **variant_preset(variant)), seed=0)
        opt = Adam(model.params, lr=0.003)
        step, loss = 0, float("inf")
        while step < 500 and loss >= 0.05:
            loss = train_step(model, opt, batch)
            step += 1
        ok &= loss < 0.05
        report.append(f"{variant} {loss:.4f}@{step}")
    assert verdict("8", ok, "loss below 0.05 within 500 steps: " + ", ".join(report))
