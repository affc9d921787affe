"""End-to-end CTR model: features -> MSIA / short-term attention -> MLP -> sigmoid."""

from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np

from cain import tensor as T
from cain.attention import AttnParams, major_attention, short_term_attention
from cain.config import ModelConfig
from cain.data.batching import Batch
from cain.embeddings import FeatureTables, candidate_representation, item_representation
from cain.errors import GradientError, UsageError
from cain.metrics import PROB_CLAMP
from cain.msia import layer_output_dims, msia_forward
from cain.peg import FEATURE_GROUPS, PegLayer, filter_numel, profile_representation
from cain.tcn import TcnLayerConfig, TcnStack
from cain.tensor import Graph, Tensor


class CainModel:
    """All trainable state of one model variant.

    ``params`` is the exhaustive, ordered registry used by the optimizer and
    the checkpointer. ``init_specs`` records how each tensor is initialized.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        self.tables = FeatureTables(cfg.vocab, cfg.emb_dim)
        self.params: OrderedDict[str, Tensor] = OrderedDict()
        self.init_specs: dict[str, tuple] = {}
        d_item = self.tables.item_dim
        d_cand = self.tables.candidate_dim
        d_prof = self.tables.profile_dim
        inner = cfg.inner_dim

        for name, w in self.tables.parameters():
            self._register(name, w, ("embedding",))

        self.stack: TcnStack | None = None
        self.filters: list[Tensor | None] = []
        self.biases: list[Tensor | None] = []
        self.peg: dict[int, PegLayer] = {}
        self.attn: list[AttnParams] = []
        if cfg.uses_tcn:
            peg_idx = set(cfg.peg_layer_indices())
            layers, in_dim = [], d_item
            for n, (fs, stride) in enumerate(zip(cfg.filter_sizes(), cfg.strides())):
                layers.append(TcnLayerConfig(fs, stride, in_dim, cfg.tcn_dim))
                widen = n in peg_idx and cfg.peg_mode == "concat"
                in_dim = cfg.tcn_dim * (2 if widen else 1)
            self.stack = TcnStack(tuple(layers), cfg.activation)
            for n, layer in enumerate(self.stack.layers):
                if n in peg_idx and cfg.peg_mode == "replace":
                    self.filters.append(None)
                    self.biases.append(None)
                else:
                    f = self._register(f"tcn.{n}.filter", Tensor(np.zeros(layer.filter_shape()), True),
                                       ("weight", layer.filter_size * layer.in_dim, layer.out_dim))
                    b = self._register(f"tcn.{n}.bias", Tensor(np.zeros(layer.out_dim), True),
                                       ("bias",))
                    self.filters.append(f)
                    self.biases.append(b)
                if n in peg_idx:
                    net = PegLayer.zeros(d_prof, cfg.peg_hidden, layer, f"peg.{n}")
                    self.peg[n] = net
                    conv_fan = (layer.filter_size * layer.in_dim, layer.out_dim)
                    self._register(f"peg.{n}.w1", net.w1, ("weight", d_prof, cfg.peg_hidden))
                    self._register(f"peg.{n}.b1", net.b1, ("bias",))
                    self._register(f"peg.{n}.w2", net.w2, ("zeros",))
                    self._register(f"peg.{n}.b2", net.b2, ("peg_bias", filter_numel(layer), *conv_fan))
            out_dims = layer_output_dims(self.stack, self.peg, cfg.peg_mode)
            for n, width in enumerate(out_dims):
                self.attn.append(self._attn(AttnParams.zeros(d_cand, width, inner, f"attn.{n}"),
                                            f"attn.{n}"))
        else:
            self.attn.append(self._attn(AttnParams.zeros(d_cand, d_item, inner, "attn.0"), "attn.0"))

        self.short_attn = None
        if cfg.short_enabled:
            self.short_attn = self._attn(AttnParams.zeros(d_cand, d_item, inner, "short"), "short")

        width = d_prof + d_cand + len(self.attn) * inner + (inner if cfg.short_enabled else 0)
        self.mlp: list[tuple[Tensor, Tensor]] = []
        for i, h in enumerate(list(cfg.mlp_hidden) + [1]):
            w = self._register(f"mlp.{i}.w", Tensor(np.zeros((width, h)), True), ("weight", width, h))
            b = self._register(f"mlp.{i}.b", Tensor(np.zeros(h), True), ("bias",))
            self.mlp.append((w, b))
            width = h
        init_xavier(self, seed)

    def _register(self, name: str, tensor: Tensor, spec: tuple) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        tensor.name = name
        tensor.requires_grad = True
        self.params[name] = tensor
        self.init_specs[name] = spec
        return tensor

    def _attn(self, params: AttnParams, prefix: str) -> AttnParams:
        d_query, inner = params.w_q.shape
        d_key = params.w_k.shape[0]
        self._register(f"{prefix}.w_q", params.w_q, ("weight", d_query, inner))
        self._register(f"{prefix}.w_k", params.w_k, ("weight", d_key, inner))
        self._register(f"{prefix}.w_v", params.w_v, ("weight", d_key, inner))
        return params

    # ------------------------------------------------------------------

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def forward(self, batch: Batch) -> Tensor:
        """Logits ``[B]``."""
        cfg, tables = self.cfg, self.tables
        B = len(batch)
        if B == 0:
            raise UsageError("empty batch")
        ve = candidate_representation(tables, batch.cand_item, batch.cand_category,
                                      batch.cand_author)
        profile = profile_representation(tables, batch.demographics, batch.stats,
                                         batch.authors, batch.authors_mask)
        parts = [profile, ve]
        if self.short_attn is not None:
            st = item_representation(tables, batch.st_item, batch.st_category, batch.st_author,
                                     batch.st_watch, batch.st_mask)
            parts.append(short_term_attention(ve, st, self.short_attn, batch.st_mask,
                                              cfg.normalize))
        parts.append(self._lifelong_interest(batch, ve, profile))
        h = T.concat(parts, axis=-1)
        for i, (w, b) in enumerate(self.mlp):
            h = T.add(T.matmul(h, w), b)
            if i + 1 < len(self.mlp):
                h = T.relu(h)
        return T.reshape(h, (B,))

    def _lifelong_interest(self, batch: Batch, ve: Tensor, profile: Tensor) -> Tensor:
        cfg = self.cfg
        B = len(batch)
        if batch.lh_item.shape[1] == 0:
            return Tensor(np.zeros((B, len(self.attn) * cfg.inner_dim)))
        lh = item_representation(self.tables, batch.lh_item, batch.lh_category, batch.lh_author,
                                 batch.lh_watch, batch.lh_mask)
        if self.stack is None:
            return major_attention(ve, lh, self.attn[0], cfg.top_k, batch.lh_mask, cfg.normalize)
        peg_input = None
        if self.peg:
            if tuple(cfg.peg_groups) == FEATURE_GROUPS:
                peg_input = profile
            else:
                peg_input = profile_representation(self.tables, batch.demographics, batch.stats,
                                                   batch.authors, batch.authors_mask,
                                                   cfg.peg_groups)
        out = msia_forward(lh, ve, self.stack, self.filters, self.biases, self.attn, cfg.top_k,
                           batch.lh_mask, self.peg or None, peg_input, cfg.peg_mode,
                           cfg.normalize)
        return out.integrated

    def predict(self, batch: Batch) -> np.ndarray:
        """Click probabilities ``[B]`` (no graph recorded)."""
        return T.sigmoid(self.forward(batch)).data.copy()

    def loss(self, batch: Batch) -> Tensor:
        """Mean binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7]."""
        y = np.asarray(batch.labels, dtype=np.float64)
        if y.size == 0:
            raise UsageError("empty batch")
        p = T.clip(T.sigmoid(self.forward(batch)), PROB_CLAMP, 1.0 - PROB_CLAMP)
        ll = T.add(T.mul(T.log(p), y), T.mul(T.log(T.add(1.0, T.scale(p, -1.0))), 1.0 - y))
        return T.scale(T.mean(ll), -1.0)


def init_xavier(model: CainModel, seed: int) -> CainModel:
    """Xavier-uniform weights, zero biases, U(-0.05, 0.05) embeddings.

    Hypernetwork output layers start with zero weights and a Xavier-scale bias,
    so every user initially receives the same sensible filter.
    """
    rng = np.random.default_rng(seed)
    for name, p in model.params.items():
        spec = model.init_specs[name]
        kind = spec[0]
        if kind == "weight":
            a = math.sqrt(6.0 / (spec[1] + spec[2]))
            p.data[...] = rng.uniform(-a, a, size=p.shape)
        elif kind == "embedding":
            p.data[...] = rng.uniform(-0.05, 0.05, size=p.shape)
        elif kind == "peg_bias":
            n_filter, fan_in, fan_out = spec[1:]
            a = math.sqrt(6.0 / (fan_in + fan_out))
            p.data[...] = 0.0
            p.data[:n_filter] = rng.uniform(-a, a, size=n_filter)
        else:
            p.data[...] = 0.0
    return model


def train_step(model: CainModel, opt, batch: Batch) -> float:
    """One forward/backward/Adam update; returns the pre-update batch loss."""
    model.zero_grad()
    with Graph() as graph:
        loss = model.loss(batch)
        value = float(loss.data)
        if not math.isfinite(value):
            raise GradientError(
                f"loss is {value}; first non-finite tensor: {graph.first_nonfinite()}"
            )
        graph.backward(loss)
    opt.step()
    return value
