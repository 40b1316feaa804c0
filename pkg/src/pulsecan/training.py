"""Two-phase training: pulse-derivative pretraining, then frozen-trunk
fine-tuning of the fully-connected and output layers for fake detection.

Everything is deterministic for a given (config, dataset, seed): one RNG
drives epoch shuffles, batches are fixed-size slices of the shuffled order,
and gradient accumulation is a fixed reduction over the batch.  Batch
gradients are summed, not averaged (the learning rates are sized for that
convention); logged losses are per-sample means.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import model as can
from .evaluation import auc
from .preprocessing import sequence_to_inputs
from .tensor_ops import (
    NumericError,
    bce_loss,
    bce_loss_backward,
    mse_loss,
    mse_loss_backward,
    sgd_step,
)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate_pretrain: float = 1e-3
    learning_rate_finetune: float = 1e-2
    epochs_pretrain: int = 15
    epochs_finetune: int = 10
    batch_size: int = 32
    seed: int = 0
    early_stop_patience: int = 3

    def __post_init__(self):
        for name in ("learning_rate_pretrain", "learning_rate_finetune",
                     "batch_size", "early_stop_patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.epochs_pretrain < 0 or self.epochs_finetune < 0:
            raise ValueError("epoch counts must be >= 0")


@dataclass
class EpochRecord:
    epoch: int
    phase: str  # pretrain | finetune
    loss: float
    metric: float
    seconds: float


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def append(self, record):
        self.records.append(record)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "phase", "loss", "metric", "seconds"])
            for r in self.records:
                writer.writerow([r.epoch, r.phase, f"{r.loss:.12f}",
                                 f"{r.metric:.12f}", f"{r.seconds:.3f}"])


@dataclass
class SampleBank:
    """Preprocessed frame pairs for a clip set, flattened for batching.

    Inputs are stored float32 to bound memory and upcast per batch; compute
    stays float64.
    """

    motion: np.ndarray  # (S, 3, L, L) float32
    appearance: np.ndarray
    pulse_target: np.ndarray  # (S,) first difference of pulse truth (nan if absent)
    label_target: np.ndarray  # (S,) 1 real / 0 fake (nan if unlabeled)
    clip_index: np.ndarray  # (S,)
    clip_ids: list

    @property
    def n_samples(self):
        return self.motion.shape[0]

    def batch(self, idx):
        return (self.motion[idx].astype(np.float64),
                self.appearance[idx].astype(np.float64))


def build_sample_bank(clips, side, bboxes_per_clip=None):
    motions, appearances, pulse_t, label_t, clip_idx, clip_ids = [], [], [], [], [], []
    for ci, clip in enumerate(clips):
        bboxes = None if bboxes_per_clip is None else bboxes_per_clip[ci]
        pairs = sequence_to_inputs(clip, bboxes, side)
        clip_ids.append(f"{clip.identity_id}/{ci}")
        for pair in pairs:
            motions.append(pair.motion.astype(np.float32))
            appearances.append(pair.appearance.astype(np.float32))
            if clip.pulse_truth is not None:
                pulse_t.append(clip.pulse_truth[pair.frame_index]
                               - clip.pulse_truth[pair.frame_index - 1])
            else:
                pulse_t.append(np.nan)
            if clip.label == "real":
                label_t.append(1.0)
            elif clip.label == "fake":
                label_t.append(0.0)
            else:
                label_t.append(np.nan)
            clip_idx.append(ci)
    return SampleBank(
        motion=np.stack(motions),
        appearance=np.stack(appearances),
        pulse_target=np.array(pulse_t),
        label_target=np.array(label_t),
        clip_index=np.array(clip_idx),
        clip_ids=clip_ids,
    )


def train_step(weights, motion, appearance, targets, loss_kind, learning_rate):
    """One sum-reduced gradient step over a batch; returns the mean loss."""
    if motion.shape[0] == 0:
        raise ValueError("empty batch")
    scores, cache = can.forward_batch(motion, appearance, weights, want_cache=True)
    if loss_kind == "bce":
        losses = bce_loss(scores, targets)
        grad = bce_loss_backward(scores, targets)
    elif loss_kind == "mse":
        losses = mse_loss(scores, targets)
        grad = mse_loss_backward(scores, targets)
    else:
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    if not np.all(np.isfinite(losses)):
        bad = int(np.argmax(~np.isfinite(losses)))
        raise NumericError(f"non-finite loss at batch position {bad}")
    mean_loss = float(losses.mean())
    can.backward_batch(grad, cache, weights)
    sgd_step(weights.param_list(), learning_rate)
    return mean_loss


def _run_epochs(weights, bank, targets, loss_kind, lr, epochs, batch_size,
                rng, patience, metric_fn, phase, log, higher_is_better):
    """Shared epoch loop with early stopping on the epoch metric."""
    best_metric = None
    best_weights = weights.copy()
    since_best = 0
    order = np.arange(bank.n_samples)
    for epoch in range(epochs):
        t0 = time.perf_counter()
        rng.shuffle(order)
        losses = []
        for start in range(0, bank.n_samples, batch_size):
            idx = order[start : start + batch_size]
            motion, appearance = bank.batch(idx)
            losses.append(train_step(weights, motion, appearance,
                                     targets[idx], loss_kind, lr))
        metric = metric_fn(weights)
        log.append(EpochRecord(epoch, phase, float(np.mean(losses)), metric,
                               time.perf_counter() - t0))
        improved = best_metric is None or (
            metric > best_metric if higher_is_better else metric < best_metric)
        if improved:
            best_metric = metric
            best_weights = weights.copy()
            since_best = 0
        else:
            since_best += 1
            if since_best >= patience:
                break
    return best_weights if best_metric is not None else weights


def _mean_mse(weights, bank, targets, batch_size=256):
    total = 0.0
    for start in range(0, bank.n_samples, batch_size):
        idx = np.arange(start, min(start + batch_size, bank.n_samples))
        motion, appearance = bank.batch(idx)
        scores = can.forward_batch(motion, appearance, weights)
        total += float(mse_loss(scores, targets[idx]).sum())
    return total / bank.n_samples


def _dev_auc(weights, bank, batch_size=256):
    scores = np.empty(bank.n_samples)
    for start in range(0, bank.n_samples, batch_size):
        idx = np.arange(start, min(start + batch_size, bank.n_samples))
        motion, appearance = bank.batch(idx)
        scores[idx] = can.forward_batch(motion, appearance, weights)
    return auc(scores, bank.label_target.astype(int))


def pretrain_hr(config, dev_clips, can_config=None, bank=None):
    """Train a regression CAN on the pulse-truth first difference.

    Returns (weights with regression head, TrainLog).
    """
    can_config = can_config or can.CanConfig(head="regression")
    if can_config.head != "regression":
        raise ValueError("pretraining needs a regression head")
    for i, clip in enumerate(dev_clips):
        if clip.pulse_truth is None:
            raise ValueError(f"clip {i} ({clip.identity_id}) has no pulse_truth")
    if bank is None:
        bank = build_sample_bank(dev_clips, can_config.input_side)
    weights = can.init_weights(can_config, config.seed)
    log = TrainLog()
    rng = np.random.default_rng(config.seed)
    weights = _run_epochs(
        weights, bank, bank.pulse_target, "mse",
        config.learning_rate_pretrain, config.epochs_pretrain,
        config.batch_size, rng, config.early_stop_patience,
        lambda w: _mean_mse(w, bank, bank.pulse_target),
        "pretrain", log, higher_is_better=False)
    return weights, log


def finetune_detector(config, pretrained, dev_clips, bank=None):
    """Convert the head, freeze the trunk, and train the detector.

    Returns (weights with classification head, TrainLog).
    """
    if pretrained.head != "regression":
        raise ValueError("finetune_detector expects regression weights")
    for i, clip in enumerate(dev_clips):
        if clip.label not in ("real", "fake"):
            raise ValueError(f"clip {i} ({clip.identity_id}) is unlabeled")
    if bank is None:
        bank = build_sample_bank(dev_clips, pretrained.config.input_side)
    weights = can.freeze_for_transfer(can.convert_head(pretrained, config.seed))
    log = TrainLog()
    rng = np.random.default_rng(config.seed)
    # The trunk is frozen, so its features are constant: compute them once
    # and train only the fc + head layers on top.
    flat = _trunk_features_all(weights, bank)
    targets = bank.label_target
    best_auc = None
    best_weights = weights.copy()
    since_best = 0
    order = np.arange(bank.n_samples)
    for epoch in range(config.epochs_finetune):
        t0 = time.perf_counter()
        rng.shuffle(order)
        losses = []
        for start in range(0, bank.n_samples, config.batch_size):
            idx = order[start : start + config.batch_size]
            scores, cache = can.head_forward(flat[idx], weights, want_cache=True)
            batch_losses = bce_loss(scores, targets[idx])
            if not np.all(np.isfinite(batch_losses)):
                bad = bank.clip_ids[bank.clip_index[idx[int(
                    np.argmax(~np.isfinite(batch_losses)))]]]
                raise NumericError(f"non-finite loss on clip {bad}")
            losses.append(float(batch_losses.mean()))
            grad = bce_loss_backward(scores, targets[idx])
            can.head_backward(grad, cache, weights)
            sgd_step(weights.param_list(), config.learning_rate_finetune)
        metric = auc(can.head_forward(flat, weights), targets.astype(int))
        log.append(EpochRecord(epoch, "finetune", float(np.mean(losses)),
                               metric, time.perf_counter() - t0))
        if best_auc is None or metric > best_auc:
            best_auc = metric
            best_weights = weights.copy()
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.early_stop_patience:
                break
    return (best_weights if best_auc is not None else weights), log


def _trunk_features_all(weights, bank, batch_size=128):
    flat = np.empty((bank.n_samples, weights.config.flat_size))
    for start in range(0, bank.n_samples, batch_size):
        idx = np.arange(start, min(start + batch_size, bank.n_samples))
        motion, appearance = bank.batch(idx)
        flat[idx] = can.trunk_features(motion, appearance, weights)
    return flat
