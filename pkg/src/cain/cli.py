"""Command-line entry point: ``cain generate | train | eval | sweep | gradcheck``.

Every command prints machine-readable ``key=value`` lines on stdout.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from cain.checkpoint import load_checkpoint, save_checkpoint
from cain.config import (
    KEYS,
    PEG_PLACEMENTS,
    RunConfig,
    build_run_config,
    parse_text,
)
from cain.data.io import load_dataset, save_dataset
from cain.data.synthetic import GeneratorConfig, bayes_oracle, generate_synthetic, temporal_split
from cain.errors import CainError, UsageError
from cain.metrics import evaluate, format_record, format_table
from cain.train import build, evaluate_model, fit

SWEEP_AXES = {
    # axis -> (default values, parser, function applying one value to a RunConfig)
    "context_length": ("-1,0,1,3,7", int, lambda rc, v: _model(rc, context_length=v)),
    "depth": ("1,2,3,4", int, lambda rc, v: _model(rc, layers=v)),
    "stride": ("1,2,3,4", int, lambda rc, v: _model(rc, first_stride=v)),
    "peg_placement": (",".join(PEG_PLACEMENTS), str, lambda rc, v: _model(rc, peg_layers=v)),
    "peg_inputs": ("demographic,statistics,authors,demographic+statistics+authors", str,
                   lambda rc, v: _model(rc, peg_groups=tuple(v.split("+")))),
    "peg_agg": ("replace,sum,concat", str, lambda rc, v: _model(rc, peg_mode=v)),
}


def _model(rc: RunConfig, **changes) -> RunConfig:
    return replace(rc, model=replace(rc.model, **changes))


def _out(line: str) -> None:
    print(line, flush=True)


# ---------------------------------------------------------------------------
# generate


def cmd_generate(args) -> int:
    offsets = tuple(int(x) for x in args.group_offsets.split(","))
    cfg = GeneratorConfig(
        n_users=args.users, n_items=args.items, n_categories=args.categories,
        n_authors=args.authors, seq_length=args.seq_length,
        samples_per_user=args.samples_per_user, short_length=args.short_length,
        label_noise=args.label_noise, trigger_drop=args.trigger_drop,
        long_range=args.long_range, long_range_offset=args.long_range_offset,
        long_range_drop=args.long_range_drop, group_offsets=offsets, seed=args.seed,
    )
    dataset = generate_synthetic(cfg)
    train, test = temporal_split(dataset, args.test_fraction)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(train, out / "train.tsv")
    save_dataset(test, out / "test.tsv")
    labels = np.array([s.label for s in dataset.samples])
    _out(format_record({
        "positive_rate": float(labels.mean()),
        "oracle_pointwise_auc": bayes_oracle(test, "point-wise"),
        "oracle_context_auc": bayes_oracle(test, "context"),
    }, users=cfg.n_users, samples=len(dataset), train=len(train), test=len(test)))
    return 0


# ---------------------------------------------------------------------------
# train / eval


def _load_run(path: str, overrides: list[str]) -> tuple[RunConfig, object, object]:
    raw = parse_text(Path(path).read_text())
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = (p.strip() for p in item.split("=", 1))
        raw[key] = value
    run = build_run_config(raw)
    train = load_dataset(run.train_path)
    test = load_dataset(run.test_path)
    return replace(run, model=replace(run.model, vocab=train.vocab)), train, test


def train_run(run: RunConfig, train, test, emit=_out):
    """Build (or resume) and train one model; returns ``(model, opt, result)``."""
    model, opt = build(run.model, run.train)
    if run.train.resume:
        model, opt, _ = load_checkpoint(run.train.resume, model, opt)
        emit(format_record({}, resumed_from=run.train.resume, step=opt.step_count))
    result = fit(model, opt, train, run.train, test, emit)
    return model, opt, result


def cmd_train(args) -> int:
    run, train, test = _load_run(args.config, args.set)
    t0 = time.perf_counter()
    model, opt, _ = train_run(run, train, test)
    if run.train.checkpoint:
        save_checkpoint(run.train.checkpoint, model, opt, extra={"variant": run.variant})
    metrics = evaluate_model(model, test)
    _out(format_record(metrics, final=1, step=opt.step_count,
                       seconds=round(time.perf_counter() - t0, 2)))
    return 0


def read_scores(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Whitespace-separated ``user_id score label`` rows; ``#`` starts a comment."""
    users, scores, labels = [], [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise UsageError(f"{path}:{lineno}: expected 'user_id score label'")
        users.append(int(parts[0]))
        scores.append(float(parts[1]))
        labels.append(int(parts[2]))
    return np.array(scores), np.array(labels), np.array(users)


def cmd_eval(args) -> int:
    if args.scores:
        scores, labels, users = read_scores(args.scores)
        metrics = evaluate(scores, labels, users)
        n = len(scores)
    else:
        if not (args.checkpoint and args.data):
            raise UsageError("eval needs --scores FILE or both --checkpoint and --data")
        model, _, _ = load_checkpoint(args.checkpoint)
        dataset = load_dataset(args.data)
        metrics = evaluate_model(model, dataset)
        n = len(dataset)
    _out(format_record(metrics, n=n))
    if args.table:
        _out(format_table([metrics], ["auc", "gauc", "logloss"]))
    return 0


# ---------------------------------------------------------------------------
# sweep


def _sweep_point(job):
    run, train, test = job
    model, opt, _ = train_run(run, train, test, emit=lambda line: None)
    return evaluate_model(model, test), opt.step_count


def run_sweep(run: RunConfig, train, test, axis: str, values: list, jobs: int = 1) -> list[dict]:
    if axis not in SWEEP_AXES:
        raise UsageError(f"unknown sweep axis {axis!r}; choose from {sorted(SWEEP_AXES)}")
    apply = SWEEP_AXES[axis][2]
    points = [(apply(run, v), train, test) for v in values]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_point, points))
    else:
        results = [_sweep_point(p) for p in points]
    return [{"axis": axis, "value": v, "steps": steps, **m}
            for v, (m, steps) in zip(values, results)]


def cmd_sweep(args) -> int:
    if args.axis not in SWEEP_AXES:
        raise UsageError(f"unknown sweep axis {args.axis!r}; choose from {sorted(SWEEP_AXES)}")
    default, cast, _ = SWEEP_AXES[args.axis]
    values = [cast(v) for v in (args.values or default).split(",")]
    run, train, test = _load_run(args.config, args.set)
    rows = run_sweep(run, train, test, args.axis, values, args.jobs)
    columns = ["axis", "value", "steps", "auc", "gauc", "logloss"]
    for row in rows:
        _out(format_record({k: row[k] for k in ("auc", "gauc", "logloss")},
                           axis=row["axis"], value=row["value"], steps=row["steps"]))
    _out(format_table(rows, columns))
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=columns)
            writer.writeheader()
            writer.writerows(rows)
    return 0


# ---------------------------------------------------------------------------
# gradcheck


def cmd_gradcheck(args) -> int:
    from cain.gradcheck import run_suite

    t0 = time.perf_counter()
    results = run_suite(seed=args.seed, eps=args.eps, include_models=not args.ops_only)
    for r in results:
        _out(format_record({"max_rel_err": r.max_rel_err}, check=r.name,
                           status="ok" if r.ok else "FAIL"))
    failed = sum(not r.ok for r in results)
    _out(format_record({}, checks=len(results), failed=failed,
                       seconds=round(time.perf_counter() - t0, 2)))
    return 1 if failed else 0


# ---------------------------------------------------------------------------


def _config_help() -> str:
    return "config keys:\n" + "\n".join(f"  {k:<22} {v[3]}" for k, v in KEYS.items())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cain", description=__doc__.splitlines()[0],
                                     epilog=_config_help(),
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic train/test split")
    d = GeneratorConfig()
    g.add_argument("--out-dir", default="data")
    g.add_argument("--users", type=int, default=d.n_users)
    g.add_argument("--items", type=int, default=d.n_items)
    g.add_argument("--categories", type=int, default=d.n_categories)
    g.add_argument("--authors", type=int, default=d.n_authors)
    g.add_argument("--seq-length", type=int, default=d.seq_length)
    g.add_argument("--samples-per-user", type=int, default=d.samples_per_user)
    g.add_argument("--short-length", type=int, default=d.short_length)
    g.add_argument("--label-noise", type=float, default=d.label_noise)
    g.add_argument("--trigger-drop", type=float, default=d.trigger_drop)
    g.add_argument("--long-range", action="store_true",
                   help="plant a second trigger that collapses a farther item")
    g.add_argument("--long-range-offset", type=int, default=d.long_range_offset)
    g.add_argument("--long-range-drop", type=float, default=d.long_range_drop)
    g.add_argument("--group-offsets", default="1",
                   help="comma-separated collapse offset per user group (group = age %% count)")
    g.add_argument("--test-fraction", type=float, default=1 / 6)
    g.add_argument("--seed", type=int, default=d.seed)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one model from a config file")
    t.add_argument("config")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="metrics for a checkpoint on a dataset, or for a scores file")
    e.add_argument("--checkpoint")
    e.add_argument("--data")
    e.add_argument("--scores", help="file of 'user_id score label' rows")
    e.add_argument("--table", action="store_true", help="also print a human-readable table")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="train one model per value of an ablation axis")
    s.add_argument("axis", help=" | ".join(SWEEP_AXES))
    s.add_argument("config")
    s.add_argument("--values", help="comma-separated grid (default: the axis' standard grid)")
    s.add_argument("--csv", help="also write the result table to this CSV file")
    s.add_argument("--jobs", type=int, default=1, help="train points in parallel processes")
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("gradcheck", help="finite-difference check of all ops and model variants")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--eps", type=float, default=1e-5)
    c.add_argument("--ops-only", action="store_true")
    c.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
