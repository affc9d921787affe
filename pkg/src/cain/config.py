"""Run configuration: a flat ``key = value`` text file.

Lines starting with ``#`` are comments. Lists are comma separated. Every key
is listed in :data:`KEYS` together with its default.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from cain.data.records import Vocab
from cain.errors import ConfigError

PEG_PLACEMENTS = ("none", "first", "latter", "all")
VARIANTS = ("baseline", "tcn", "msia", "cain")


@dataclass(frozen=True)
class ModelConfig:
    vocab: Vocab = field(default_factory=Vocab)
    emb_dim: int = 16
    context_length: int = 7  # -1 bypasses the TCN entirely
    layers: int = 4
    first_stride: int = 1
    deep_filter_size: int = 3
    deep_stride: int = 4
    tcn_dim: int = 32
    activation: str = "relu"
    peg_layers: str = "all"
    peg_mode: str = "replace"
    peg_hidden: int = 32
    peg_groups: tuple[str, ...] = ("demographic", "statistics", "authors")
    top_k: int = 32
    inner_dim: int = 32
    normalize: str = "softmax"
    short_enabled: bool = True
    mlp_hidden: tuple[int, ...] = (128, 64)

    def __post_init__(self):
        if self.context_length < -1:
            raise ConfigError("tcn.context_length must be >= -1")
        if self.layers < 1:
            raise ConfigError("tcn.layers must be >= 1")
        if self.peg_layers not in PEG_PLACEMENTS:
            raise ConfigError(f"peg.enabled_layers must be one of {PEG_PLACEMENTS}")
        if self.peg_mode not in ("replace", "sum", "concat"):
            raise ConfigError("peg.mode must be replace, sum or concat")
        if self.normalize not in ("softmax", "raw"):
            raise ConfigError("attn.normalize must be softmax or raw")
        for name in ("emb_dim", "first_stride", "deep_stride", "tcn_dim", "peg_hidden",
                     "top_k", "inner_dim"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.deep_filter_size <= 0 or self.deep_filter_size % 2 == 0:
            raise ConfigError("tcn.deep_filter_size must be odd and positive")

    @property
    def uses_tcn(self) -> bool:
        return self.context_length >= 0

    def filter_sizes(self) -> list[int]:
        return [2 * self.context_length + 1] + [self.deep_filter_size] * (self.layers - 1)

    def strides(self) -> list[int]:
        return [self.first_stride] + [self.deep_stride] * (self.layers - 1)

    def peg_layer_indices(self) -> list[int]:
        if not self.uses_tcn:
            return []
        return {
            "none": [],
            "first": [0],
            "latter": list(range(1, self.layers)),
            "all": list(range(self.layers)),
        }[self.peg_layers]

    def as_dict(self) -> dict:
        d = asdict(self)
        d["peg_groups"] = list(self.peg_groups)
        d["mlp_hidden"] = list(self.mlp_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["vocab"] = Vocab(**d["vocab"])
        d["peg_groups"] = tuple(d["peg_groups"])
        d["mlp_hidden"] = tuple(d["mlp_hidden"])
        return cls(**d)

    def fingerprint(self) -> bytes:
        blob = json.dumps(self.as_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).digest()


def variant_preset(variant: str) -> dict:
    """Architecture overrides for the four model variants of the ablation table."""
    if variant not in VARIANTS:
        raise ConfigError(f"model.variant must be one of {VARIANTS}, got {variant!r}")
    return {
        "baseline": {"context_length": -1, "peg_layers": "none"},
        "tcn": {"layers": 1, "peg_layers": "none"},
        "msia": {"peg_layers": "none"},
        "cain": {},
    }[variant]


@dataclass
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 256
    epochs: int = 1
    max_steps: int = -1  # -1 = no cap; 0 = evaluate the initialized model
    seed: int = 0
    log_every: int = 50
    checkpoint: str = "run/model.ckpt"
    resume: str = ""


@dataclass
class RunConfig:
    train_path: str
    test_path: str
    model: ModelConfig
    train: TrainConfig
    variant: str = "cain"


def _list(cast):
    return lambda s: tuple(cast(x.strip()) for x in s.split(",") if x.strip())


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# key -> (section, attribute, parser, description)
KEYS: dict[str, tuple[str, str, object, str]] = {
    "data.train": ("run", "train_path", str, "training dataset file (required)"),
    "data.test": ("run", "test_path", str, "evaluation dataset file (required)"),
    "model.variant": ("run", "variant", str, "preset: baseline | tcn | msia | cain"),
    "emb.dim": ("model", "emb_dim", int, "embedding width of every table"),
    "tcn.context_length": ("model", "context_length", int,
                           "first-layer per-side context (filter 2*cl+1); -1 disables the TCN"),
    "tcn.layers": ("model", "layers", int, "number of TCN layers (MSIA depth)"),
    "tcn.first_stride": ("model", "first_stride", int, "stride of the first layer"),
    "tcn.deep_filter_size": ("model", "deep_filter_size", int, "filter size of layers 2..L"),
    "tcn.deep_stride": ("model", "deep_stride", int, "stride of layers 2..L"),
    "tcn.dim": ("model", "tcn_dim", int, "output width of every TCN layer"),
    "tcn.activation": ("model", "activation", str, "between-layer activation: relu | identity"),
    "peg.enabled_layers": ("model", "peg_layers", str, "none | first | latter | all"),
    "peg.mode": ("model", "peg_mode", str, "replace | sum | concat"),
    "peg.hidden": ("model", "peg_hidden", int, "hypernetwork hidden width"),
    "peg.feature_groups": ("model", "peg_groups", _list(str),
                           "profile groups fed to PEG: demographic,statistics,authors"),
    "attn.top_k": ("model", "top_k", int, "rows kept by the major attention's retrieval stage"),
    "attn.inner_dim": ("model", "inner_dim", int, "attention projection width"),
    "attn.normalize": ("model", "normalize", str, "softmax | raw"),
    "short.enabled": ("model", "short_enabled", _bool, "use the short-term sequence"),
    "mlp.hidden": ("model", "mlp_hidden", _list(int), "hidden widths of the prediction MLP"),
    "train.lr": ("train", "lr", float, "Adam learning rate"),
    "train.batch_size": ("train", "batch_size", int, "samples per step"),
    "train.epochs": ("train", "epochs", int, "passes over the training file"),
    "train.max_steps": ("train", "max_steps", int,
                        "stop after this many steps (-1 = no cap, 0 = no training)"),
    "train.seed": ("train", "seed", int, "initialization and shuffling seed"),
    "train.log_every": ("train", "log_every", int, "loss log interval in steps"),
    "train.checkpoint": ("train", "checkpoint", str, "where the final checkpoint is written"),
    "train.resume": ("train", "resume", str, "checkpoint to resume from (optional)"),
}
REQUIRED = ("data.train", "data.test")


def parse_text(text: str) -> dict[str, str]:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        raw[key] = value
    return raw


def build_run_config(raw: dict[str, str], vocab: Vocab | None = None) -> RunConfig:
    for key in raw:
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
    for key in REQUIRED:
        if key not in raw:
            raise ConfigError(f"missing required config key {key!r}")
    values = {"run": {}, "model": {}, "train": {}}
    for key, text in raw.items():
        section, attr, parse, _ = KEYS[key]
        try:
            values[section][attr] = parse(text)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from None
    variant = values["run"].get("variant", "cain")
    model_kwargs = {**variant_preset(variant), **values["model"]}
    if vocab is not None:
        model_kwargs["vocab"] = vocab
    return RunConfig(
        train_path=values["run"]["train_path"],
        test_path=values["run"]["test_path"],
        model=ModelConfig(**model_kwargs),
        train=TrainConfig(**values["train"]),
        variant=variant,
    )


def load_run_config(path, vocab: Vocab | None = None) -> RunConfig:
    return build_run_config(parse_text(Path(path).read_text()), vocab)


def with_overrides(cfg: ModelConfig, **changes) -> ModelConfig:
    return replace(cfg, **changes)


def model_field_names() -> list[str]:
    return [f.name for f in fields(ModelConfig)]
