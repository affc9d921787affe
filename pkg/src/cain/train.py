"""Training and evaluation loops."""

from __future__ import annotations

import logging
from typing import Callable

import numpy as np

from cain.config import ModelConfig, TrainConfig
from cain.data.batching import batch_iterator
from cain.data.records import Dataset
from cain.metrics import evaluate, format_record
from cain.model import CainModel, train_step
from cain.optim import Adam

logger = logging.getLogger(__name__)


def predict_dataset(model: CainModel, dataset: Dataset, batch_size: int = 1024) -> np.ndarray:
    scores = [model.predict(b) for b in batch_iterator(dataset, batch_size, seed=None)]
    return np.concatenate(scores) if scores else np.zeros(0)


def evaluate_model(model: CainModel, dataset: Dataset, batch_size: int = 1024) -> dict[str, float]:
    scores = predict_dataset(model, dataset, batch_size)
    labels = np.array([s.label for s in dataset.samples])
    users = np.array([s.user_id for s in dataset.samples])
    return evaluate(scores, labels, users)


def steps_per_epoch(n_samples: int, batch_size: int) -> int:
    return -(-n_samples // batch_size)


def fit(model: CainModel, opt: Adam, train: Dataset, cfg: TrainConfig,
        test: Dataset | None = None, emit: Callable[[str], None] | None = None) -> dict:
    """Train for ``cfg.epochs`` epochs (capped by ``cfg.max_steps`` when >= 0).

    Resumes from ``opt.step_count``: the shuffle of each epoch depends only on
    (seed, epoch), so a resumed run replays exactly the batches an
    uninterrupted run would have seen. Emits ``key=value`` lines through
    ``emit``. Returns the loss trace and per-epoch test metrics.
    """
    emit = emit or (lambda line: logger.info(line))
    per_epoch = steps_per_epoch(len(train), cfg.batch_size)
    total = cfg.epochs * per_epoch
    if cfg.max_steps >= 0:
        total = min(total, cfg.max_steps)
    losses: list[float] = []
    history: list[dict] = []
    step = opt.step_count
    while step < total:
        epoch, skip = divmod(step, per_epoch)
        for i, batch in enumerate(batch_iterator(train, cfg.batch_size, cfg.seed, epoch)):
            if i < skip:
                continue
            if step >= total:
                break
            loss = train_step(model, opt, batch)
            losses.append(loss)
            step += 1
            if cfg.log_every > 0 and step % cfg.log_every == 0:
                emit(format_record({"loss": loss}, step=step, epoch=epoch))
        if test is not None and len(test) and (step % per_epoch == 0 or step >= total):
            metrics = evaluate_model(model, test)
            history.append({"epoch": epoch, "step": step, **metrics})
            emit(format_record(metrics, epoch=epoch, step=step))
    return {"losses": losses, "history": history}


def build(model_cfg: ModelConfig, train_cfg: TrainConfig) -> tuple[CainModel, Adam]:
    model = CainModel(model_cfg, seed=train_cfg.seed)
    return model, Adam(model.params, lr=train_cfg.lr)
