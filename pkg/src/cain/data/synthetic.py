"""Synthetic lifelong-sequence data with a planted context-only signal.

Each user has a latent like/dislike per category and a latent "trigger" flag
per category. Watching an item from a trigger category makes the watch time of
the item at a fixed offset collapse, so whether a category is a trigger can
only be read from a *neighbouring* item, never from the item itself. The
label is positive (up to noise) iff the user likes the candidate's category
and that category is not a trigger.

Every user has exactly ``round(drop * n_categories)`` trigger categories and
events are drawn i.i.d. over categories. Under both choices the bag of
(category, watch time) pairs has the same distribution whichever category is
the trigger, so counting collapsed items tells a point-wise model nothing.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from cain.data.records import BehaviorItem, Dataset, Sample, UserProfile, Vocab
from cain.embeddings import count_bucket
from cain.errors import ConfigError, UsageError

# watch-time ranges (seconds); chosen so liked / disliked / collapsed items land
# in four distinct buckets of the log-4 bucketizer
LIKED_WATCH = (24.0, 60.0)
DISLIKED_WATCH = (5.0, 15.0)
COLLAPSE_FACTOR = 0.05


@dataclass
class GeneratorConfig:
    n_users: int = 2500
    n_items: int = 2000
    n_categories: int = 8
    n_authors: int = 200
    seq_length: int = 32
    samples_per_user: int = 24
    short_length: int = 10
    label_noise: float = 0.1
    trigger_drop: float = 0.5
    # second, longer-range trigger: collapses the item `long_range_offset` steps later
    long_range: bool = False
    long_range_offset: int = 2
    long_range_drop: float = 0.5
    # collapse offset of the short-range trigger, one entry per user group;
    # a user's group is their age bucket modulo the number of groups
    group_offsets: tuple[int, ...] = (1,)
    n_age: int = 8
    top_k_authors: int = 5
    seed: int = 0

    def validate(self) -> None:
        for name in ("n_users", "n_items", "n_categories", "n_authors", "seq_length",
                     "samples_per_user", "n_age", "top_k_authors"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if min(self.n_items, self.n_categories, self.n_authors) < 2:
            raise ConfigError("n_items, n_categories and n_authors must be >= 2")
        if self.n_categories > self.n_items:
            raise ConfigError(
                f"infeasible config: {self.n_categories} categories but only {self.n_items} items"
            )
        if not 0.0 <= self.label_noise < 0.5:
            raise ConfigError(f"label_noise must lie in [0, 0.5), got {self.label_noise}")
        for name in ("trigger_drop", "long_range_drop"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if not self.group_offsets or 0 in self.group_offsets:
            raise ConfigError("group_offsets must be non-empty and non-zero")
        if self.long_range and self.long_range_offset == 0:
            raise ConfigError("long_range_offset must be non-zero")
        if not 0 <= self.short_length <= self.seq_length:
            raise ConfigError("short_length must lie in [0, seq_length]")

    def vocab(self) -> Vocab:
        return Vocab(
            n_users=self.n_users,
            n_items=self.n_items,
            n_categories=self.n_categories,
            n_authors=self.n_authors,
            n_age=self.n_age,
            top_k_authors=self.top_k_authors,
        )

    def to_meta(self) -> dict:
        meta = asdict(self)
        meta["group_offsets"] = list(self.group_offsets)
        return meta

    @classmethod
    def from_meta(cls, meta: dict) -> "GeneratorConfig":
        meta = dict(meta)
        meta["group_offsets"] = tuple(meta.get("group_offsets", (1,)))
        return cls(**meta)


def _exact_subset(rng: np.random.Generator, n: int, rate: float) -> np.ndarray:
    flags = np.zeros(n, dtype=bool)
    flags[rng.permutation(n)[: int(round(rate * n))]] = True
    return flags


def generate_synthetic(cfg: GeneratorConfig) -> Dataset:
    """Generate users, histories and labeled candidate events (deterministic in ``cfg.seed``).

    Each user's samples are temporally ordered: sample ``s`` sees the
    ``seq_length`` events ending right before event ``seq_length + s``.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    vocab = cfg.vocab()
    C, N, S = cfg.n_categories, cfg.seq_length, cfg.samples_per_user

    item_category = rng.permutation(np.arange(cfg.n_items) % C)
    item_author = rng.integers(0, cfg.n_authors, size=cfg.n_items)
    items_of = [np.flatnonzero(item_category == c) for c in range(C)]

    samples: list[Sample] = []
    for user in range(cfg.n_users):
        liked = rng.random(C) < 0.5
        trigger = _exact_subset(rng, C, cfg.trigger_drop)
        late = _exact_subset(rng, C, cfg.long_range_drop) if cfg.long_range else np.zeros(C, bool)
        age = int(rng.integers(cfg.n_age))
        group = age % len(cfg.group_offsets)
        offset = cfg.group_offsets[group]

        L = N + S
        cats = rng.integers(0, C, size=L)
        picks = rng.random(L)
        items = np.array([items_of[c][int(u * len(items_of[c]))] for c, u in zip(cats, picks)])
        base = np.where(
            liked[cats],
            rng.uniform(*LIKED_WATCH, size=L),
            rng.uniform(*DISLIKED_WATCH, size=L),
        )
        collapsed = np.zeros(L, dtype=bool)
        src = np.arange(L) - offset
        ok = (src >= 0) & (src < L)
        collapsed[ok] |= trigger[cats[src[ok]]]
        if cfg.long_range:
            src = np.arange(L) - cfg.long_range_offset
            ok = (src >= 0) & (src < L)
            collapsed[ok] |= late[cats[src[ok]]]
        watch = np.round(np.where(collapsed, base * COLLAPSE_FACTOR, base), 2)
        history = [
            BehaviorItem(int(i), int(c), int(item_author[i]), float(w))
            for i, c, w in zip(items, cats, watch)
        ]

        author_time = np.zeros(cfg.n_authors)
        np.add.at(author_time, item_author[items], watch)
        order = np.lexsort((np.arange(cfg.n_authors), -author_time))
        top = tuple(int(a) for a in order[: cfg.top_k_authors] if author_time[a] > 0)
        profile = UserProfile(
            age=age,
            gender=int(rng.integers(2)),
            location=int(rng.integers(16)),
            education=int(rng.integers(5)),
            presented=int(count_bucket(L + rng.integers(0, 500), vocab.n_stat_buckets)),
            clicked=int(count_bucket(int(liked[cats].sum()) + rng.integers(0, 20),
                                     vocab.n_stat_buckets)),
            top_authors=top,
        )

        for s in range(S):
            window = history[s:s + N]
            present = np.unique(cats[s:s + N])
            c = int(present[rng.integers(len(present))])
            cand_item = int(items_of[c][rng.integers(len(items_of[c]))])
            rule = bool(liked[c] and not trigger[c] and not late[c])
            flip = rng.random() < cfg.label_noise
            label = int(rule != flip)
            samples.append(
                Sample(
                    user_id=user,
                    profile=profile,
                    lifelong=list(window),
                    short_idx=list(range(N - cfg.short_length, N)),
                    candidate=BehaviorItem(cand_item, c, int(item_author[cand_item])),
                    label=label,
                    truth={"liked": int(liked[c]), "trigger": int(trigger[c]),
                           "late": int(late[c]), "group": group},
                )
            )
    return Dataset(vocab=vocab, samples=samples, meta=cfg.to_meta())


def oracle_probabilities(dataset: Dataset, mode: str) -> np.ndarray:
    """True P(y=1) per sample given point-wise-visible facts or the full context."""
    if mode not in ("point-wise", "context"):
        raise UsageError(f"unknown oracle mode {mode!r}")
    if not dataset.meta or any(s.truth is None for s in dataset.samples):
        raise UsageError("bayes_oracle needs a dataset produced by generate_synthetic")
    cfg = GeneratorConfig.from_meta(dataset.meta)
    eps = cfg.label_noise
    liked = np.array([s.truth["liked"] for s in dataset.samples], dtype=bool)
    if mode == "context":
        blocked = np.array([s.truth["trigger"] or s.truth["late"] for s in dataset.samples], bool)
        return np.where(liked & ~blocked, 1.0 - eps, eps)
    C = cfg.n_categories
    trigger_rate = round(cfg.trigger_drop * C) / C
    late_rate = round(cfg.long_range_drop * C) / C if cfg.long_range else 0.0
    blocked_rate = 1.0 - (1.0 - trigger_rate) * (1.0 - late_rate)
    p_liked = (1.0 - blocked_rate) * (1.0 - eps) + blocked_rate * eps
    return np.where(liked, p_liked, eps)


def bayes_oracle(dataset: Dataset, mode: str) -> float:
    """AUC of the Bayes-optimal scorer restricted to the given information set."""
    from cain.metrics import auc

    probs = oracle_probabilities(dataset, mode)
    labels = np.array([s.label for s in dataset.samples])
    return auc(probs, labels)


def temporal_split(dataset: Dataset, test_fraction: float) -> tuple[Dataset, Dataset]:
    """Last ``test_fraction`` of each user's samples (in generation order) go to test."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    by_user: dict[int, list[Sample]] = {}
    for s in dataset.samples:
        by_user.setdefault(s.user_id, []).append(s)
    train, test = [], []
    for user_samples in by_user.values():
        n_test = int(round(len(user_samples) * test_fraction))
        cut = len(user_samples) - n_test
        train.extend(user_samples[:cut])
        test.extend(user_samples[cut:])
    return (
        Dataset(dataset.vocab, train, dict(dataset.meta)),
        Dataset(dataset.vocab, test, dict(dataset.meta)),
    )
