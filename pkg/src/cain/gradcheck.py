"""Finite-difference verification of every differentiable op and model variant."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from cain import tensor as T
from cain.config import ModelConfig, variant_preset
from cain.data.batching import Batch, make_batch
from cain.data.records import BehaviorItem, Sample, UserProfile, Vocab
from cain.model import CainModel
from cain.tensor import Tensor, grad_check

TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    seconds: float

    @property
    def ok(self) -> bool:
        return self.max_rel_err < TOLERANCE


def _t(rng, *shape, lo=-1.0, hi=1.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def op_cases(seed: int = 0) -> list[tuple[str, Callable[[], Tensor], list[Tensor]]]:
    """(name, scalar function, inputs) for every registered op."""
    rng = np.random.default_rng(seed)
    cases = []

    def case(name, build, inputs):
        # a random linear functional turns any output into a scalar with generic gradients
        w = rng.normal(size=build().shape)
        cases.append((name, lambda: T.sum_(T.mul(build(), w)), inputs))

    a, b = _t(rng, 3, 4), _t(rng, 3, 4)
    case("add", lambda: T.add(a, b), [a, b])
    row = _t(rng, 4)
    case("add_broadcast", lambda: T.add(a, row), [a, row])
    case("mul", lambda: T.mul(a, b), [a, b])
    case("scale", lambda: T.scale(a, -2.5), [a])
    r = Tensor(rng.choice([-1.0, 1.0], size=(3, 4)) * rng.uniform(0.1, 1.0, size=(3, 4)), True)
    case("relu", lambda: T.relu(r), [r])
    case("sigmoid", lambda: T.sigmoid(a), [a])
    pos = _t(rng, 3, 4, lo=0.5, hi=2.0)
    case("log", lambda: T.log(pos), [pos])
    case("clip", lambda: T.clip(a, -0.5, 0.5), [a])
    case("sum", lambda: T.sum_(a, axis=0), [a])
    case("mean", lambda: T.mean(a, axis=1), [a])
    case("reshape", lambda: T.reshape(a, (2, 6)), [a])
    case("transpose", lambda: T.transpose(a), [a])
    case("slice", lambda: T.slice_(a, (slice(1, 3), slice(0, 2))), [a])
    case("concat", lambda: T.concat([a, b], axis=1), [a, b])
    case("stack", lambda: T.stack([a, b], axis=0), [a, b])
    m1, m2 = _t(rng, 3, 4), _t(rng, 4, 2)
    case("matmul", lambda: T.matmul(m1, m2), [m1, m2])
    bm1, bm2 = _t(rng, 2, 3, 4), _t(rng, 2, 4, 2)
    case("matmul_batched", lambda: T.matmul(bm1, bm2), [bm1, bm2])
    s = _t(rng, 2, 5, lo=-2.0, hi=2.0)
    mask = np.array([[1, 1, 0, 1, 1], [1, 1, 1, 1, 1]], dtype=bool)
    case("softmax", lambda: T.softmax(s, mask), [s])
    table = _t(rng, 6, 3)
    ids = np.array([[0, 2, 2], [5, 1, 0]])
    case("gather_rows", lambda: T.gather_rows(table, ids), [table])
    seq = _t(rng, 2, 5, 3)
    idx = np.array([[0, 2, 4], [1, 1, 3]])
    case("take_rows", lambda: T.take_rows(seq, idx), [seq])
    case("unfold", lambda: T.unfold(seq, 3, 2, 1, 2), [seq])
    x = _t(rng, 6, 3)
    filt, bias = _t(rng, 3, 3, 2), _t(rng, 2)
    case("conv1d", lambda: T.conv1d_temporal(x, filt, bias, stride=1, pad=1), [x, filt, bias])
    xb = _t(rng, 2, 7, 3)
    pf, pb = _t(rng, 2, 3, 3, 2), _t(rng, 2, 2)
    case("conv1d_per_row_filters",
         lambda: T.conv1d_temporal(xb, pf, pb, stride=2, pad=(0, 1)), [xb, pf, pb])
    return cases


TINY_VOCAB = Vocab(n_users=4, n_items=10, n_categories=3, n_authors=5, n_age=3, n_gender=2,
                   n_location=3, n_education=2, n_stat_buckets=4, top_k_authors=2)


def tiny_batch(seed: int = 0, batch: int = 3, length: int = 7) -> Batch:
    rng = np.random.default_rng(seed)
    v = TINY_VOCAB
    samples = []
    for u in range(batch):
        n = length - u  # ragged lengths exercise the masks
        events = [BehaviorItem(int(rng.integers(v.n_items)), int(rng.integers(v.n_categories)),
                               int(rng.integers(v.n_authors)), float(rng.uniform(0, 80)))
                  for _ in range(n)]
        authors = tuple(int(a) for a in rng.choice(v.n_authors, size=u % 3, replace=False))
        profile = UserProfile(int(rng.integers(v.n_age)), int(rng.integers(v.n_gender)),
                              int(rng.integers(v.n_location)), int(rng.integers(v.n_education)),
                              int(rng.integers(v.n_stat_buckets)),
                              int(rng.integers(v.n_stat_buckets)), authors)
        cand = BehaviorItem(int(rng.integers(v.n_items)), int(rng.integers(v.n_categories)),
                            int(rng.integers(v.n_authors)))
        samples.append(Sample(u, profile, events, list(range(max(n - 3, 0), n)), cand, u % 2))
    return make_batch(samples)


def tiny_config(variant: str, **overrides) -> ModelConfig:
    """Smallest dims that still exercise every path of a variant."""
    kw = dict(vocab=TINY_VOCAB, emb_dim=2, context_length=1, layers=2, deep_filter_size=3,
              deep_stride=2, tcn_dim=3, peg_hidden=3, top_k=4, inner_dim=3, mlp_hidden=(4,))
    kw.update(variant_preset(variant))
    kw.update(overrides)
    return ModelConfig(**kw)


def generic_point(model: CainModel, seed: int, batch: Batch, scale: float = 1.0) -> CainModel:
    """Redraw every parameter from U(-scale, scale), then shrink the output
    layer until every logit on ``batch`` lies in [-2, 2].

    The real init is a poor place to check gradients: small embeddings give
    near-flat attention (gradients ~1e-8, below finite-difference resolution)
    and the zeroed hypernetwork output layer blocks the PEG path entirely.
    Saturated sigmoids would shrink every gradient the same way.
    """
    rng = np.random.default_rng(seed)
    for p in model.params.values():
        p.data[...] = rng.uniform(-scale, scale, size=p.shape)
    peak = float(np.max(np.abs(model.forward(batch).data)))
    if peak > 2.0:
        w, b = model.mlp[-1]
        w.data *= 2.0 / peak
        b.data *= 2.0 / peak
    return model


def model_cases(seed: int = 0):
    batch = tiny_batch(seed)
    cases = []
    for variant in ("baseline", "tcn", "msia", "cain"):
        model = generic_point(CainModel(tiny_config(variant), seed=seed), seed, batch)
        cases.append((f"model_{variant}", lambda m=model: m.loss(batch), list(model.params.values())))
    return cases


def run_suite(seed: int = 0, eps: float = 1e-5, include_models: bool = True) -> list[CheckResult]:
    cases = op_cases(seed) + (model_cases(seed) if include_models else [])
    results = []
    for name, f, inputs in cases:
        t0 = time.perf_counter()
        err = grad_check(f, inputs, eps)
        results.append(CheckResult(name, err, time.perf_counter() - t0))
    return results
