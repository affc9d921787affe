"""Padded mini-batches.

Sequences are right-aligned: the most recent event always sits in the last
column and shorter sequences are zero-padded on the left, with a boolean
validity mask.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from cain.data.records import Dataset, Sample
from cain.embeddings import watch_time_bucket
from cain.errors import ConfigError


@dataclass
class Batch:
    user_ids: np.ndarray  # [B]
    labels: np.ndarray  # [B] float
    lh_item: np.ndarray  # [B, T]
    lh_category: np.ndarray
    lh_author: np.ndarray
    lh_watch: np.ndarray  # watch-time bucket ids
    lh_mask: np.ndarray  # [B, T] bool
    st_item: np.ndarray  # [B, H]
    st_category: np.ndarray
    st_author: np.ndarray
    st_watch: np.ndarray
    st_mask: np.ndarray
    cand_item: np.ndarray  # [B]
    cand_category: np.ndarray
    cand_author: np.ndarray
    demographics: np.ndarray  # [B, 4] age, gender, location, education
    stats: np.ndarray  # [B, 2] presented, clicked buckets
    authors: np.ndarray  # [B, k]
    authors_mask: np.ndarray  # [B, k] bool

    def __len__(self) -> int:
        return len(self.labels)


def _pad_events(seqs: list[list], width: int):
    B = len(seqs)
    out = np.zeros((4, B, width), dtype=np.int64)
    watch = np.zeros((B, width))
    mask = np.zeros((B, width), dtype=bool)
    for b, seq in enumerate(seqs):
        n = len(seq)
        if n == 0:
            continue
        start = width - n
        out[0, b, start:] = [e.item_id for e in seq]
        out[1, b, start:] = [e.category_id for e in seq]
        out[2, b, start:] = [e.author_id for e in seq]
        watch[b, start:] = [e.watch_time for e in seq]
        mask[b, start:] = True
    out[3] = np.where(mask, watch_time_bucket(watch), 0)
    return out, mask


def make_batch(samples: Sequence[Sample], min_length: int = 0) -> Batch:
    """Assemble samples into arrays; ``min_length`` pads sequences further if larger."""
    samples = list(samples)
    lh = [s.lifelong for s in samples]
    st = [s.short for s in samples]
    lh_width = max([len(x) for x in lh] + [min_length, 0])
    st_width = max([len(x) for x in st] + [0])
    lh_ids, lh_mask = _pad_events(lh, lh_width)
    st_ids, st_mask = _pad_events(st, st_width)
    k = max([len(s.profile.top_authors) for s in samples] + [1])
    authors = np.zeros((len(samples), k), dtype=np.int64)
    authors_mask = np.zeros((len(samples), k), dtype=bool)
    for b, s in enumerate(samples):
        n = len(s.profile.top_authors)
        authors[b, :n] = s.profile.top_authors
        authors_mask[b, :n] = True
    return Batch(
        user_ids=np.array([s.user_id for s in samples], dtype=np.int64),
        labels=np.array([s.label for s in samples], dtype=np.float64),
        lh_item=lh_ids[0], lh_category=lh_ids[1], lh_author=lh_ids[2], lh_watch=lh_ids[3],
        lh_mask=lh_mask,
        st_item=st_ids[0], st_category=st_ids[1], st_author=st_ids[2], st_watch=st_ids[3],
        st_mask=st_mask,
        cand_item=np.array([s.candidate.item_id for s in samples], dtype=np.int64),
        cand_category=np.array([s.candidate.category_id for s in samples], dtype=np.int64),
        cand_author=np.array([s.candidate.author_id for s in samples], dtype=np.int64),
        demographics=np.array(
            [[s.profile.age, s.profile.gender, s.profile.location, s.profile.education]
             for s in samples], dtype=np.int64).reshape(-1, 4),
        stats=np.array([[s.profile.presented, s.profile.clicked] for s in samples],
                       dtype=np.int64).reshape(-1, 2),
        authors=authors,
        authors_mask=authors_mask,
    )


def batch_iterator(dataset: Dataset | Sequence[Sample], batch_size: int, seed: int | None = 0,
                   epoch: int = 0) -> Iterator[Batch]:
    """Yield padded batches; the order is a deterministic shuffle of (seed, epoch).

    ``seed=None`` keeps the stored order.
    """
    if batch_size <= 0:
        raise ConfigError(f"batch size must be positive, got {batch_size}")
    samples = dataset.samples if isinstance(dataset, Dataset) else list(dataset)
    order = np.arange(len(samples))
    if seed is not None:
        order = np.random.default_rng([seed, epoch]).permutation(len(samples))
    for start in range(0, len(samples), batch_size):
        yield make_batch([samples[i] for i in order[start:start + batch_size]])
