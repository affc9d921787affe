"""Per-user convolution filters generated from profile features.

A two-layer hypernetwork maps the profile representation ``I`` to a flat
vector that is reshaped into one layer's filter and bias::

    hidden = relu(I @ W1 + b1)
    flat   = hidden @ W2 + b2  ->  filter [fs, Din, Dout], bias [Dout]
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cain import tensor as T
from cain.embeddings import FeatureTables
from cain.errors import ConfigError
from cain.tcn import TcnLayerConfig, tcn_forward
from cain.tensor import Tensor

MODES = ("replace", "sum", "concat")
FEATURE_GROUPS = ("demographic", "statistics", "authors")


@dataclass
class PegLayer:
    """Hypernetwork for one TCN layer."""

    w1: Tensor  # [d_I, hidden]
    b1: Tensor  # [hidden]
    w2: Tensor  # [hidden, fs*Din*Dout + Dout]
    b2: Tensor
    cfg: TcnLayerConfig

    @classmethod
    def zeros(cls, d_profile: int, hidden: int, cfg: TcnLayerConfig, name: str) -> "PegLayer":
        n_out = filter_numel(cfg) + cfg.out_dim
        return cls(
            Tensor(np.zeros((d_profile, hidden)), True, f"{name}.w1"),
            Tensor(np.zeros(hidden), True, f"{name}.b1"),
            Tensor(np.zeros((hidden, n_out)), True, f"{name}.w2"),
            Tensor(np.zeros(n_out), True, f"{name}.b2"),
            cfg,
        )

    def parameters(self, prefix: str):
        yield f"{prefix}.w1", self.w1
        yield f"{prefix}.b1", self.b1
        yield f"{prefix}.w2", self.w2
        yield f"{prefix}.b2", self.b2


def filter_numel(cfg: TcnLayerConfig) -> int:
    return cfg.filter_size * cfg.in_dim * cfg.out_dim


def generate_filters(profile_repr: Tensor, net: PegLayer) -> tuple[Tensor, Tensor]:
    """``[d_I]`` or ``[B, d_I]`` -> filter ``[(B,) fs, Din, Dout]`` and bias ``[(B,) Dout]``."""
    cfg = net.cfg
    single = profile_repr.ndim == 1
    x = T.reshape(profile_repr, (1, -1)) if single else profile_repr
    hidden = T.relu(T.add(T.matmul(x, net.w1), net.b1))
    flat = T.add(T.matmul(hidden, net.w2), net.b2)
    n_filter = filter_numel(cfg)
    batch = x.shape[0]
    filt = T.reshape(T.slice_(flat, (slice(None), slice(0, n_filter))),
                     (batch,) + cfg.filter_shape())
    bias = T.slice_(flat, (slice(None), slice(n_filter, None)))
    if single:
        filt = T.reshape(filt, cfg.filter_shape())
        bias = T.reshape(bias, (cfg.out_dim,))
    return filt, bias


def personalized_conv(seq: Tensor, cfg: TcnLayerConfig, profile_repr: Tensor, net: PegLayer,
                      mode: str = "replace", global_filter: Tensor | None = None,
                      global_bias: Tensor | None = None) -> Tensor:
    """Convolution with generated filters, optionally combined with the global one.

    replace: generated filters only; sum: global + personalized outputs;
    concat: both outputs side by side on the feature axis (width ``2 * Dout``).
    """
    if mode not in MODES:
        raise ConfigError(f"unknown aggregation mode {mode!r}")
    if net.cfg.filter_shape() != cfg.filter_shape():
        raise ConfigError(f"hypernetwork emits {net.cfg.filter_shape()}, layer needs "
                          f"{cfg.filter_shape()}")
    filt, bias = generate_filters(profile_repr, net)
    personal = tcn_forward(seq, cfg, filt, bias)
    if mode == "replace":
        return personal
    if global_filter is None or global_bias is None:
        raise ConfigError(f"mode {mode!r} needs the global filter and bias")
    shared = tcn_forward(seq, cfg, global_filter, global_bias)
    if mode == "sum":
        return T.add(shared, personal)
    return T.concat([shared, personal], axis=-1)


def profile_representation(tables: FeatureTables, demographics, stats, authors, authors_mask,
                           groups=FEATURE_GROUPS) -> Tensor:
    """Concatenate demographic, behavioral-statistics and top-author embeddings.

    Author embeddings are averaged over the present authors only. Feature
    groups not listed in ``groups`` are replaced by zeros of the same width.
    Inputs are batched: ``demographics [B, 4]``, ``stats [B, 2]``, ``authors [B, k]``.
    """
    unknown = set(groups) - set(FEATURE_GROUPS)
    if unknown:
        raise ConfigError(f"unknown profile feature groups {sorted(unknown)}")
    demographics = np.asarray(demographics, dtype=np.int64)
    stats = np.asarray(stats, dtype=np.int64)
    authors_mask = np.asarray(authors_mask, dtype=bool)
    B, dim = demographics.shape[0], tables.dim

    parts = []
    if "demographic" in groups:
        for j, name in enumerate(FeatureTables.DEMOGRAPHIC_FIELDS):
            parts.append(tables[name].lookup(demographics[:, j]))
    else:
        parts.append(Tensor(np.zeros((B, 4 * dim))))
    if "statistics" in groups:
        for j, name in enumerate(FeatureTables.STAT_FIELDS):
            parts.append(tables[name].lookup(stats[:, j]))
    else:
        parts.append(Tensor(np.zeros((B, 2 * dim))))
    if "authors" in groups:
        emb = tables["author"].lookup(np.where(authors_mask, authors, 0))
        count = authors_mask.sum(axis=1, keepdims=True)
        weights = np.divide(authors_mask, count, out=np.zeros(authors_mask.shape), where=count > 0)
        parts.append(T.reshape(T.matmul(T.reshape(Tensor(weights), (B, 1, -1)), emb), (B, dim)))
    else:
        parts.append(Tensor(np.zeros((B, dim))))
    return T.concat(parts, axis=-1)
