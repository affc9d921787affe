"""Newline-delimited dataset files.

Layout (tab-separated, one sample per line)::

    #cain-dataset<TAB>v1<TAB>{"vocab": {...}, "meta": {...}}
    user_id  profile  top_authors  lifelong  short_idx  candidate  label  truth

* ``profile``     ``age,gender,location,education,presented,clicked``
* ``top_authors`` comma list of author ids (may be empty)
* ``lifelong``    ``item:category:author:watch_time`` events joined by ``;``, oldest first
* ``short_idx``   comma list of positions into ``lifelong``
* ``candidate``   ``item:category:author``
* ``label``       ``0`` or ``1``
* ``truth``       ``liked=..,trigger=..,late=..,group=..`` for synthetic data, ``-`` otherwise
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Iterator

from cain.data.records import BehaviorItem, Dataset, Sample, UserProfile, Vocab
from cain.errors import DataFormatError

MAGIC = "#cain-dataset"
VERSION = "v1"
FIELDS = ("user_id", "profile", "top_authors", "lifelong", "short_idx", "candidate", "label",
          "truth")


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",")] if text else []


def format_sample(s: Sample) -> str:
    p = s.profile
    profile = f"{p.age},{p.gender},{p.location},{p.education},{p.presented},{p.clicked}"
    lifelong = ";".join(
        f"{e.item_id}:{e.category_id}:{e.author_id}:{e.watch_time!r}" for e in s.lifelong
    )
    c = s.candidate
    truth = "-" if s.truth is None else ",".join(f"{k}={v}" for k, v in s.truth.items())
    return "\t".join([
        str(s.user_id),
        profile,
        ",".join(map(str, p.top_authors)),
        lifelong,
        ",".join(map(str, s.short_idx)),
        f"{c.item_id}:{c.category_id}:{c.author_id}",
        str(s.label),
        truth,
    ])


def save_dataset(dataset: Dataset, path) -> None:
    header = json.dumps({"vocab": dataset.vocab.as_dict(), "meta": dataset.meta}, sort_keys=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{MAGIC}\t{VERSION}\t{header}\n")
        for s in dataset.samples:
            fh.write(format_sample(s))
            fh.write("\n")


def _parse_header(line: str) -> tuple[Vocab, dict]:
    parts = line.rstrip("\n").split("\t", 2)
    if len(parts) != 3 or parts[0] != MAGIC:
        raise DataFormatError("missing dataset header", line=1, field="header")
    if parts[1] != VERSION:
        raise DataFormatError(f"unsupported version {parts[1]!r}", line=1, field="header")
    try:
        blob = json.loads(parts[2])
        return Vocab(**blob["vocab"]), blob.get("meta", {})
    except (ValueError, KeyError, TypeError) as exc:
        raise DataFormatError(f"bad header: {exc}", line=1, field="header") from None


def _check_range(value: int, upper: int, lineno: int, name: str) -> int:
    if not 0 <= value < upper:
        raise DataFormatError(f"id {value} out of vocabulary [0, {upper})", line=lineno, field=name)
    return value


def parse_sample(line: str, vocab: Vocab, lineno: int) -> Sample:
    cols = line.rstrip("\n").split("\t")
    if len(cols) != len(FIELDS):
        raise DataFormatError(f"expected {len(FIELDS)} fields, got {len(cols)}", line=lineno)
    current = FIELDS[0]
    try:
        user_id = _check_range(int(cols[0]), vocab.n_users, lineno, "user_id")

        current = "profile"
        prof = _ints(cols[1])
        if len(prof) != 6:
            raise ValueError("profile needs 6 values")
        limits = (vocab.n_age, vocab.n_gender, vocab.n_location, vocab.n_education,
                  vocab.n_stat_buckets, vocab.n_stat_buckets)
        for v, n in zip(prof, limits):
            _check_range(v, n, lineno, "profile")

        current = "top_authors"
        authors = tuple(_check_range(a, vocab.n_authors, lineno, current) for a in _ints(cols[2]))
        if len(authors) > vocab.top_k_authors:
            raise ValueError(f"more than {vocab.top_k_authors} authors")

        current = "lifelong"
        lifelong = []
        for chunk in cols[3].split(";") if cols[3] else []:
            i, c, a, w = chunk.split(":")
            w = float(w)
            if not math.isfinite(w) or w < 0:
                raise ValueError(f"bad watch time {w}")
            lifelong.append(BehaviorItem(
                _check_range(int(i), vocab.n_items, lineno, current),
                _check_range(int(c), vocab.n_categories, lineno, current),
                _check_range(int(a), vocab.n_authors, lineno, current),
                w,
            ))

        current = "short_idx"
        short_idx = _ints(cols[4])
        if any(not 0 <= i < len(lifelong) for i in short_idx):
            raise ValueError("short-term index outside the lifelong sequence")

        current = "candidate"
        i, c, a = (int(x) for x in cols[5].split(":"))
        candidate = BehaviorItem(
            _check_range(i, vocab.n_items, lineno, current),
            _check_range(c, vocab.n_categories, lineno, current),
            _check_range(a, vocab.n_authors, lineno, current),
        )

        current = "label"
        label = int(cols[6])
        if label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {label}")

        current = "truth"
        truth = None
        if cols[7] != "-":
            truth = {k: int(v) for k, v in (kv.split("=") for kv in cols[7].split(","))}
    except DataFormatError:
        raise
    except ValueError as exc:
        raise DataFormatError(str(exc), line=lineno, field=current) from None

    return Sample(user_id, UserProfile(*prof, top_authors=authors), lifelong, short_idx,
                  candidate, label, truth)


def iter_records(path) -> Iterator[Sample]:
    """Stream samples one line at a time (header is validated first)."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        if not first:
            return
        vocab, _ = _parse_header(first)
        for lineno, line in enumerate(fh, start=2):
            if line.strip():
                yield parse_sample(line, vocab, lineno)


def load_dataset(path) -> Dataset:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    if not first:
        return Dataset(Vocab())
    vocab, meta = _parse_header(first)
    return Dataset(vocab, list(iter_records(path)), meta)
