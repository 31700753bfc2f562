"""Training loop: decoupled-weight-decay Adam, linear warmup into a constant
rate, per-epoch validation, best-by-validation-MAE checkpoint retention."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from emofuse import tensor as T
from emofuse.checkpoint import Checkpoint
from emofuse.config import TrainConfig, config_to_dict
from emofuse.data import Dataset, collate, iter_batches
from emofuse.metrics import MetricsReport, compute_metrics
from emofuse.model import ModelVariant, SentimentModel
from emofuse.tpf import compute_loss

log = logging.getLogger("emofuse.train")


class NumericError(Exception):
    """Loss went non-finite; carries the offending batch for diagnosis."""

    def __init__(self, message, batch_uids=None):
        super().__init__(message)
        self.batch_uids = batch_uids or []


class AdamW:
    """Adam with decoupled weight decay and bias-corrected moments."""

    def __init__(self, named_params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.named_params = list(named_params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.named_params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.named_params}

    def step(self, lr: float | None = None):
        lr = self.lr if lr is None else lr
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for name, p in self.named_params:
            if p.grad is None:
                continue
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = p.data - lr * (update + self.weight_decay * p.data)

    def zero_grad(self):
        for _, p in self.named_params:
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.m:
            out[f"m.{name}"] = self.m[name]
            out[f"v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step_count: int):
        for name in self.m:
            self.m[name] = arrays[f"m.{name}"].astype(self.m[name].dtype, copy=True)
            self.v[name] = arrays[f"v.{name}"].astype(self.v[name].dtype, copy=True)
        self.step_count = step_count


def lr_at(step: int, total_steps: int, base_lr: float, warmup_frac: float) -> float:
    """Linear warmup over the first warmup_frac of steps, then constant."""
    warmup_steps = int(round(warmup_frac * total_steps))
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    return base_lr


@dataclass
class TrainResult:
    history: list = field(default_factory=list)
    best: Checkpoint | None = None
    final: Checkpoint | None = None
    best_valid_mae: float = float("inf")


def evaluate(model: SentimentModel, utterances, batch_size=64) -> tuple[np.ndarray, np.ndarray]:
    """Forward a split without recording gradients; returns (scores, labels)."""
    was_training = model.training
    model.eval()
    preds = []
    labels = []
    with T.no_grad():
        for batch in iter_batches(utterances, batch_size, dtype=model.dtype):
            out = model(batch)
            preds.append(model.scores_from_preds(out))
            labels.append(batch.labels)
    if was_training:
        model.train()
    return np.concatenate(preds), np.concatenate(labels)


def evaluate_metrics(model: SentimentModel, utterances, label_range) -> MetricsReport:
    preds, labels = evaluate(model, utterances)
    return compute_metrics(preds, labels, label_range)


def _snapshot(model: SentimentModel, optimizer: AdamW, cfg: TrainConfig, epoch: int,
              train_rng: np.random.Generator, history: list) -> Checkpoint:
    return Checkpoint(
        config=config_to_dict(cfg),
        epoch=epoch,
        model_state={k: v.copy() for k, v in model.state_arrays().items()},
        opt_state={k: v.copy() for k, v in optimizer.state_arrays().items()},
        opt_meta={"step_count": optimizer.step_count},
        rng_state={
            "train": train_rng.bit_generator.state,
            "dropout": model.rng_src.state(),
        },
        history=list(history),
    )


def train(cfg: TrainConfig, dataset: Dataset, variant: ModelVariant | None = None,
          resume: Checkpoint | None = None, log_every: int = 0) -> TrainResult:
    """Train on dataset.train, validating per epoch on dataset.valid.

    A resume checkpoint restores parameters, optimizer moments, and both RNG
    streams, then continues from its stored epoch.
    """
    model = SentimentModel(cfg, variant)
    optimizer = AdamW(
        model.named_parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay
    )
    train_rng = np.random.default_rng(cfg.seed + 2)
    start_epoch = 0
    history: list = []
    if resume is not None:
        from emofuse.checkpoint import load_into

        load_into(model, resume)
        optimizer.load_state_arrays(resume.opt_state, resume.opt_meta["step_count"])
        train_rng.bit_generator.state = resume.rng_state["train"]
        model.rng_src.set_state(resume.rng_state["dropout"])
        start_epoch = resume.epoch
        history = list(resume.history)

    train_split = dataset.split("train")
    valid_split = dataset.split("valid")
    steps_per_epoch = max(1, (len(train_split) + cfg.batch_size - 1) // cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs

    result = TrainResult(history=history)
    for entry in history:
        if entry["valid"]["mae"] < result.best_valid_mae:
            result.best_valid_mae = entry["valid"]["mae"]

    tape = T.active_tape()
    model.train()
    for epoch in range(start_epoch, cfg.epochs):
        epoch_loss = 0.0
        n_batches = 0
        for i, batch in enumerate(iter_batches(train_split, cfg.batch_size, rng=train_rng, dtype=model.dtype)):
            tape.clear()
            optimizer.zero_grad()
            preds = model(batch)
            loss = compute_loss(preds, model.labels_for_loss(batch.labels), cfg.loss_mode)
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                raise NumericError(
                    f"non-finite loss at epoch {epoch} batch {i} (uids {batch.uids[:4]}...)",
                    batch_uids=batch.uids,
                )
            T.backward(loss)
            step = epoch * steps_per_epoch + i
            optimizer.step(lr_at(step, total_steps, cfg.learning_rate, cfg.warmup_frac))
            epoch_loss += loss_val
            n_batches += 1
        tape.clear()

        valid_report = evaluate_metrics(model, valid_split, cfg.label_range)
        entry = {
            "epoch": epoch,
            "train_loss": epoch_loss / n_batches,
            "valid": valid_report.to_dict(),
        }
        history.append(entry)
        if log_every and (epoch % log_every == 0 or epoch == cfg.epochs - 1):
            log.info(
                "epoch %d: train loss %.4f, valid mae %.4f",
                epoch, entry["train_loss"], valid_report.mae,
            )
        if valid_report.mae < result.best_valid_mae:
            result.best_valid_mae = valid_report.mae
            result.best = _snapshot(model, optimizer, cfg, epoch + 1, train_rng, history)

    result.history = history
    result.final = _snapshot(model, optimizer, cfg, cfg.epochs, train_rng, history)
    if result.best is None:
        result.best = result.final
    return result
