"""Target attention of a candidate item over sequence representations.

Scores are ``(ve @ W_Q) . (row @ W_K) / sqrt(d)``; weights are the softmax of
the scores over valid rows (or the raw scores, ``normalize="raw"``); the
output is the weighted sum of ``row @ W_V``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from cain import tensor as T
from cain.errors import ConfigError
from cain.tensor import Tensor


@dataclass
class AttnParams:
    w_q: Tensor  # [d_query, d]
    w_k: Tensor  # [d_key, d]
    w_v: Tensor  # [d_key, d]

    @classmethod
    def zeros(cls, d_query: int, d_key: int, inner: int, name: str) -> "AttnParams":
        return cls(
            Tensor(np.zeros((d_query, inner)), True, f"{name}.w_q"),
            Tensor(np.zeros((d_key, inner)), True, f"{name}.w_k"),
            Tensor(np.zeros((d_key, inner)), True, f"{name}.w_v"),
        )

    @property
    def inner_dim(self) -> int:
        return self.w_q.shape[1]

    def parameters(self, prefix: str):
        yield f"{prefix}.w_q", self.w_q
        yield f"{prefix}.w_k", self.w_k
        yield f"{prefix}.w_v", self.w_v


def _batched(ve: Tensor, seq: Tensor, mask):
    single = ve.ndim == 1
    if single:
        ve = T.reshape(ve, (1,) + ve.shape)
        seq = T.reshape(seq, (1,) + seq.shape)
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)[None]
    if mask is None:
        mask = np.ones(seq.shape[:2], dtype=bool)
    return single, ve, seq, np.asarray(mask, dtype=bool)


def auxiliary_attention(ve: Tensor, seq: Tensor, params: AttnParams, mask=None,
                        normalize: str = "softmax") -> Tensor:
    """Interest vector ``[d]`` (or ``[B, d]``) of ``ve`` over ``seq [(B,) T, d_key]``.

    Masked rows get exactly zero weight; a sequence with no valid row yields
    the zero vector.
    """
    if normalize not in ("softmax", "raw"):
        raise ConfigError(f"unknown attention normalization {normalize!r}")
    single, ve, seq, mask = _batched(ve, seq, mask)
    B, length = seq.shape[0], seq.shape[1]
    d = params.inner_dim
    if length == 0:
        out = Tensor(np.zeros((B, d)))
        return T.reshape(out, (d,)) if single else out
    q = T.reshape(T.matmul(ve, params.w_q), (B, d, 1))
    k = T.matmul(seq, params.w_k)  # [B, T, d]
    v = T.matmul(seq, params.w_v)
    scores = T.scale(T.reshape(T.matmul(k, q), (B, 1, length)), 1.0 / math.sqrt(d))
    if normalize == "softmax":
        weights = T.softmax(scores, mask[:, None, :])
    else:
        weights = T.mul(scores, mask[:, None, :].astype(np.float64))
    out = T.reshape(T.matmul(weights, v), (B, d))
    return T.reshape(out, (d,)) if single else out


def retrieval_scores(ve: Tensor, seq: Tensor, params: AttnParams, mask=None) -> np.ndarray:
    """Stage-1 relevance scores (no gradient); masked rows score ``-inf``."""
    _, ve, seq, mask = _batched(ve, seq, mask)
    q = ve.data @ params.w_q.data
    k = seq.data @ params.w_k.data
    scores = np.einsum("bd,btd->bt", q, k)
    return np.where(mask, scores, -np.inf)


def top_k_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Per-row indices of the ``k`` largest scores, ties to the lower index, sorted ascending."""
    order = np.argsort(-scores, axis=-1, kind="stable")[..., :k]
    return np.sort(order, axis=-1)


def major_attention(ve: Tensor, cr1: Tensor, params: AttnParams, top_k: int, mask=None,
                    normalize: str = "softmax") -> Tensor:
    """Retrieve-then-attend over the first layer's representations.

    Stage 1 ranks all rows by the same query/key projections the exact stage
    uses and keeps the top ``top_k``; stage 2 is exact target attention over
    the kept rows. With ``top_k >= T`` stage 1 keeps everything.
    """
    if top_k <= 0:
        raise ConfigError(f"top_k must be positive, got {top_k}")
    single, ve_b, seq_b, mask_b = _batched(ve, cr1, mask)
    length = seq_b.shape[1]
    if top_k < length:
        idx = top_k_indices(retrieval_scores(ve_b, seq_b, params, mask_b), top_k)
        T.select_kink(idx)
        seq_b = T.take_rows(seq_b, idx)
        mask_b = np.take_along_axis(mask_b, idx, axis=1)
    out = auxiliary_attention(ve_b, seq_b, params, mask_b, normalize)
    return T.reshape(out, (params.inner_dim,)) if single else out


def short_term_attention(ve: Tensor, short_reps: Tensor, params: AttnParams, mask=None,
                         normalize: str = "softmax") -> Tensor:
    """Target attention over the short-term sequence (own parameters)."""
    return auxiliary_attention(ve, short_reps, params, mask, normalize)
