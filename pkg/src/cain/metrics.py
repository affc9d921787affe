"""AUC, GAUC and logloss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from cain.errors import MetricUndefinedError, UsageError

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class EvalRecord:
    user_id: int
    score: float
    label: int


def _arrays(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise UsageError(f"{scores.size} scores but {labels.size} labels")
    if not np.all(np.isfinite(scores)):
        raise UsageError("scores must be finite")
    if not np.all((labels == 0) | (labels == 1)):
        raise UsageError("labels must be 0 or 1")
    return scores, labels.astype(bool)


def auc(scores, labels) -> float:
    """P(random positive outranks random negative), ties counting one half.

    Mann-Whitney rank-sum with mid-ranks, O(n log n).
    """
    scores, pos = _arrays(scores, labels)
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError("AUC needs at least one positive and one negative")
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def gauc(scores, labels, user_ids) -> float:
    """Impression-weighted mean of per-user AUC over users having both classes."""
    scores, pos = _arrays(scores, labels)
    user_ids = np.asarray(user_ids).reshape(-1)
    if user_ids.size != scores.size:
        raise UsageError("user_ids must align with scores")
    order = np.argsort(user_ids, kind="stable")
    users, starts = np.unique(user_ids[order], return_index=True)
    bounds = list(starts[1:]) + [order.size]
    total, weight = 0.0, 0
    for lo, hi in zip(starts, bounds):
        idx = order[lo:hi]
        k = int(pos[idx].sum())
        if 0 < k < idx.size:
            total += idx.size * auc(scores[idx], pos[idx])
            weight += idx.size
    if weight == 0:
        raise MetricUndefinedError("GAUC needs at least one user with both classes")
    return total / weight


def logloss(scores, labels) -> float:
    """Mean negative log-likelihood with probabilities clamped to [1e-7, 1 - 1e-7]."""
    scores, pos = _arrays(scores, labels)
    if scores.size == 0:
        raise UsageError("logloss of an empty set")
    p = np.clip(scores, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-np.mean(np.where(pos, np.log(p), np.log1p(-p))))


def evaluate(scores, labels, user_ids) -> dict[str, float]:
    return {
        "auc": auc(scores, labels),
        "gauc": gauc(scores, labels, user_ids),
        "logloss": logloss(scores, labels),
    }


def evaluate_records(records) -> dict[str, float]:
    records = list(records)
    return evaluate(
        [r.score for r in records], [r.label for r in records], [r.user_id for r in records]
    )


def format_record(metrics: dict, **extra) -> str:
    """Single machine-readable line: ``key=value`` pairs separated by spaces."""
    items = list(extra.items()) + list(metrics.items())
    return " ".join(f"{k}={v:.6f}" if isinstance(v, float) else f"{k}={v}" for k, v in items)


def format_table(rows: list[dict], columns: list[str]) -> str:
    cells = [[f"{r[c]:.5f}" if isinstance(r[c], float) else str(r[c]) for c in columns]
             for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(columns)]
    lines = [" | ".join(c.ljust(w) for c, w in zip(columns, widths)),
             "-+-".join("-" * w for w in widths)]
    lines += [" | ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)
