"""Id-to-vector lookup tables and the feature representations built from them."""

from __future__ import annotations

import numpy as np

from cain import tensor as T
from cain.errors import LookupRangeError
from cain.tensor import Tensor

# Upper edges (seconds) of the log-4 watch-time buckets; 0 s is bucket 0 and
# anything above the last edge falls into bucket 7.
WATCH_TIME_EDGES = (0.0, 1.0, 4.0, 16.0, 64.0, 256.0, 1024.0)
N_WATCH_BUCKETS = len(WATCH_TIME_EDGES) + 1


def watch_time_bucket(seconds):
    """Map watch time(s) to bucket indices 0..7 (0 s -> 0, (0,1] -> 1, (1,4] -> 2, ...)."""
    return np.searchsorted(WATCH_TIME_EDGES, np.asarray(seconds, dtype=np.float64), side="left")


def count_bucket(count, n_buckets: int):
    """log2 bucketing for behavioral counters."""
    count = np.asarray(count)
    return np.minimum(np.floor(np.log2(count + 1.0)).astype(np.int64), n_buckets - 1)


class EmbeddingTable:
    def __init__(self, name: str, vocab_size: int, dim: int):
        if vocab_size <= 0 or dim <= 0:
            raise ValueError(f"table {name!r}: vocab_size and dim must be positive")
        self.name = name
        self.vocab_size = vocab_size
        self.dim = dim
        self.weights = Tensor(np.zeros((vocab_size, dim)), requires_grad=True, name=f"emb.{name}")

    def lookup(self, ids) -> Tensor:
        """Gather rows for ``ids`` (any integer array shape) -> ``ids.shape + (dim,)``."""
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size:
            bad = ids[(ids < 0) | (ids >= self.vocab_size)]
            if bad.size:
                raise LookupRangeError(
                    f"table {self.name!r}: id {int(bad[0])} out of range [0, {self.vocab_size})"
                )
        return T.gather_rows(self.weights, ids)

    def __repr__(self) -> str:
        return f"EmbeddingTable({self.name!r}, vocab={self.vocab_size}, dim={self.dim})"


class FeatureTables:
    """All lookup tables of the model.

    Sequence items and candidates share the item/category/author tables.
    """

    ITEM_FIELDS = ("item", "category", "author", "watch")
    DEMOGRAPHIC_FIELDS = ("age", "gender", "location", "education")
    STAT_FIELDS = ("presented", "clicked")

    def __init__(self, vocab, dim: int):
        self.dim = dim
        sizes = {
            "item": vocab.n_items,
            "category": vocab.n_categories,
            "author": vocab.n_authors,
            "watch": N_WATCH_BUCKETS,
            "age": vocab.n_age,
            "gender": vocab.n_gender,
            "location": vocab.n_location,
            "education": vocab.n_education,
            "presented": vocab.n_stat_buckets,
            "clicked": vocab.n_stat_buckets,
        }
        self.tables = {name: EmbeddingTable(name, n, dim) for name, n in sizes.items()}

    def __getitem__(self, name: str) -> EmbeddingTable:
        return self.tables[name]

    def parameters(self):
        for name, table in self.tables.items():
            yield f"emb.{name}", table.weights

    @property
    def item_dim(self) -> int:
        return 4 * self.dim

    @property
    def candidate_dim(self) -> int:
        return 3 * self.dim

    @property
    def profile_dim(self) -> int:
        return 7 * self.dim


def item_representation(tables: FeatureTables, item_ids, category_ids, author_ids, watch_buckets,
                        mask=None) -> Tensor:
    """Concatenate item, category, author and watch-bucket embeddings.

    Works on scalars or arrays of ids; rows where ``mask`` is False become zero
    vectors so convolutions see them exactly like zero padding.
    """
    parts = [
        tables["item"].lookup(item_ids),
        tables["category"].lookup(category_ids),
        tables["author"].lookup(author_ids),
        tables["watch"].lookup(watch_buckets),
    ]
    rep = T.concat(parts, axis=-1)
    if mask is not None:
        rep = T.mul(rep, np.asarray(mask, dtype=np.float64)[..., None])
    return rep


def candidate_representation(tables: FeatureTables, item_ids, category_ids, author_ids) -> Tensor:
    """Candidate items carry no watch time, so only three segments."""
    return T.concat(
        [
            tables["item"].lookup(item_ids),
            tables["category"].lookup(category_ids),
            tables["author"].lookup(author_ids),
        ],
        axis=-1,
    )
