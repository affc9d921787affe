"""Record types for behavior sequences and labeled samples."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from cain.errors import ConfigError


@dataclass(frozen=True)
class BehaviorItem:
    item_id: int
    category_id: int
    author_id: int
    watch_time: float = 0.0


@dataclass(frozen=True)
class UserProfile:
    age: int
    gender: int
    location: int
    education: int
    presented: int  # bucketized count of items presented
    clicked: int  # bucketized count of items clicked
    top_authors: tuple[int, ...] = ()


@dataclass
class Sample:
    user_id: int
    profile: UserProfile
    lifelong: list[BehaviorItem]
    short_idx: list[int]  # positions in `lifelong`, oldest first
    candidate: BehaviorItem
    label: int
    # latent generative facts, present only for synthetic data
    truth: dict[str, int] | None = None

    @property
    def short(self) -> list[BehaviorItem]:
        return [self.lifelong[i] for i in self.short_idx]


@dataclass(frozen=True)
class Vocab:
    n_users: int = 1000
    n_items: int = 2000
    n_categories: int = 8
    n_authors: int = 200
    n_age: int = 8
    n_gender: int = 2
    n_location: int = 16
    n_education: int = 5
    n_stat_buckets: int = 16
    top_k_authors: int = 5

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) <= 0:
                raise ConfigError(f"vocab.{f.name} must be positive")

    def as_dict(self) -> dict[str, int]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class Dataset:
    vocab: Vocab
    samples: list[Sample] = field(default_factory=list)
    # generator settings the Bayes oracle needs; empty for external data
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)
