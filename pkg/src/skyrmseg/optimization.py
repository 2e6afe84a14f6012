"""Loss, optimizer, callback schedule and the multi-run training protocol."""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import unet
from .checkpoint import Checkpoint, save_checkpoint
from .data.augment import AugmentSpec, augment_sample, random_crop
from .data.dataset import LabeledDataset, stack
from .errors import ConfigError, DataError, TrainingAborted
from .evaluation import ConfusionCounts, confusion_from_masks, mcc

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass
class LossConfig:
    smoothing_alpha: float = 0.2
    class_weights: tuple | None = None

    def __post_init__(self):
        if not 0 <= self.smoothing_alpha < 1:
            raise ConfigError(f"smoothing_alpha must be in [0, 1), got {self.smoothing_alpha}")
        if self.class_weights is not None:
            self.class_weights = tuple(float(w) for w in self.class_weights)
            if any(w <= 0 for w in self.class_weights):
                raise ConfigError("class weights must be > 0")


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 8
    learning_rate: float = 1e-3
    early_stop_patience: int = 10  # < 0 disables early stopping
    plateau_patience: int = 3  # < 0 disables LR reduction
    plateau_factor: float = 0.5
    min_lr: float = 1e-6
    runs: int = 5
    base_seed: int = 0
    crop_size: int = 0  # 0 trains on full frames
    min_delta: float = 1e-4

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0 < self.plateau_factor < 1:
            raise ConfigError("plateau_factor must be in (0, 1)")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.learning_rate < 0 or self.min_lr < 0:
            raise ConfigError("learning rates must be >= 0")


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def smoothed_targets(mask, num_classes, alpha):
    """(1 - alpha) * onehot + alpha / K, channels on axis 1.

    ``mask`` is (h, w) or (n, h, w); the result is (n, K, h, w).
    """
    mask = np.asarray(mask)
    if mask.ndim == 2:
        mask = mask[None]
    if mask.size and int(mask.max()) >= num_classes:
        raise DataError(f"mask class {int(mask.max())} >= num_classes {num_classes}")
    onehot = (mask[:, None] == np.arange(num_classes)[None, :, None, None]).astype(np.float32)
    return (1 - alpha) * onehot + np.float32(alpha / num_classes)


def cross_entropy_loss(probs, targets, weights=None):
    """Mean per-pixel weighted cross-entropy and its gradient w.r.t. the logits.

    The gradient is (p * sum_c w_c t_c - w * t) / n_pixels, the exact
    derivative through the softmax; for unit weights and targets summing to 1
    this is the familiar (p - t) / n_pixels.
    """
    if probs.shape != targets.shape:
        raise DataError(f"probabilities {probs.shape} vs targets {targets.shape}")
    n_pix = probs.shape[0] * probs.shape[2] * probs.shape[3]
    clamped = probs < PROB_FLOOR
    n_clamped = int(np.count_nonzero(clamped & (targets > 0)))
    if n_clamped:
        log.warning("cross-entropy: %d targeted probabilities clamped at %g", n_clamped, PROB_FLOOR)
    logp = np.log(np.maximum(probs, PROB_FLOOR))
    if weights is None:
        loss = -float(np.sum(targets * logp, dtype=np.float64)) / n_pix
        grad = (probs * targets.sum(axis=1, keepdims=True) - targets) / probs.dtype.type(n_pix)
    else:
        w = np.asarray(weights, dtype=probs.dtype)[None, :, None, None]
        if w.shape[1] != probs.shape[1]:
            raise ConfigError(f"{w.shape[1]} class weights for {probs.shape[1]} classes")
        wt = w * targets
        loss = -float(np.sum(wt * logp, dtype=np.float64)) / n_pix
        grad = (probs * wt.sum(axis=1, keepdims=True) - wt) / probs.dtype.type(n_pix)
    return loss, grad.astype(probs.dtype, copy=False)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params, grads, state: AdamState, lr):
    """In-place Adam update with bias correction. Returns (params, state)."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingAborted(f"non-finite gradient in {name!r}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.t
    c2 = 1 - b2 ** state.t
    for name, g in grads.items():
        p = params[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        step = (lr / c1) * m / (np.sqrt(v / c2) + state.eps)
        p -= step.astype(p.dtype, copy=False)
    return params, state


# ---------------------------------------------------------------------------
# Callbacks
# ---------------------------------------------------------------------------

class PlateauSchedule:
    """Early stopping and LR reduction on a validation score (higher is better).

    A score improves when it beats the best so far by at least ``min_delta``.
    After more than ``plateau_patience`` consecutive non-improving epochs the
    LR is multiplied by ``factor`` (floored at ``min_lr``) and the counter
    restarts; after more than ``early_stop_patience`` of them training stops.
    """

    def __init__(self, lr, early_stop_patience=10, plateau_patience=3, factor=0.5,
                 min_lr=1e-6, min_delta=1e-4):
        self.lr = lr
        self.early_stop_patience = early_stop_patience
        self.plateau_patience = plateau_patience
        self.factor = factor
        self.min_lr = min_lr
        self.min_delta = min_delta
        self.best = None
        self.stall = 0
        self.plateau_wait = 0

    def update(self, score):
        """Returns (improved, stop)."""
        if self.best is None or score >= self.best + self.min_delta:
            self.best = score
            self.stall = 0
            self.plateau_wait = 0
            return True, False
        self.stall += 1
        self.plateau_wait += 1
        if 0 <= self.plateau_patience < self.plateau_wait:
            self.lr = max(self.lr * self.factor, self.min_lr)
            self.plateau_wait = 0
        stop = 0 <= self.early_stop_patience < self.stall
        return False, stop


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class RunReport:
    seed: int
    epoch_losses: list = field(default_factory=list)
    val_mcc: list = field(default_factory=list)
    lrs: list = field(default_factory=list)
    best_epoch: int = -1
    best_mcc: float = float("nan")
    checkpoint_path: str | None = None
    aborted: str | None = None

    @property
    def epochs_run(self):
        return len(self.epoch_losses)


@dataclass
class TrainReport:
    runs: list
    mean_mcc: float
    sd_mcc: float
    partial: bool = False

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["run", "seed", "epoch", "loss", "val_mcc", "lr"])
            for i, r in enumerate(self.runs):
                for e, (loss, m, lr) in enumerate(zip(r.epoch_losses, r.val_mcc, r.lrs), start=1):
                    w.writerow([i, r.seed, e, f"{loss:.6f}", f"{m:.6f}", f"{lr:.3g}"])

    def summary(self):
        return {
            "runs": len(self.runs),
            "mean_mcc": self.mean_mcc,
            "sd_mcc": self.sd_mcc,
            "partial": self.partial,
            "per_run": [
                {"seed": r.seed, "best_mcc": r.best_mcc, "best_epoch": r.best_epoch,
                 "epochs_run": r.epochs_run, "checkpoint": r.checkpoint_path,
                 "aborted": r.aborted}
                for r in self.runs
            ],
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)


def pooled_mcc(params, config, samples, batch_size=8, positive=(unet.SKYRMION,)):
    total = ConfusionCounts()
    for s in range(0, len(samples), batch_size):
        images, masks = stack(samples[s:s + batch_size])
        pred = unet.argmax_mask(unet.predict_proba(params, config, images, batch_size))
        for p, t in zip(pred, masks):
            total = total + confusion_from_masks(p, t, positive)
    return mcc(total)


def _make_batch(samples, indices, epoch, seed, augment, crop):
    out = []
    for idx in indices:
        rng = np.random.default_rng([seed, epoch, int(idx)])
        s = samples[idx]
        if crop:
            s = random_crop(s, (crop, crop), rng)
        if augment is not None and augment.any_enabled:
            s = augment_sample(s, augment, rng.integers(2**63))
        out.append(s)
    return stack(out)


def train_step(params, config, images, masks, loss_cfg, state, lr, seed):
    logits, tape = unet.forward_logits(params, config, images, "train", seed)
    probs = unet.tc.softmax_channelwise(logits)
    targets = smoothed_targets(masks, config.num_classes, loss_cfg.smoothing_alpha)
    loss, grad = cross_entropy_loss(probs, targets, loss_cfg.class_weights)
    if not math.isfinite(loss):
        raise TrainingAborted(f"non-finite loss {loss}")
    grads = unet.backward(tape, grad)
    adam_step(params, grads, state, lr)
    return loss


def fit(config: unet.UNetConfig, dataset: LabeledDataset, train_cfg: TrainConfig,
        loss_cfg: LossConfig | None = None, augment: AugmentSpec | None = None, seed=0,
        checkpoint_path=None, params=None, progress=None):
    """Train one model. Returns (best_params, RunReport).

    The returned parameters are those of the epoch with the best validation
    MCC, which is also what gets written to ``checkpoint_path``.
    """
    loss_cfg = loss_cfg or LossConfig()
    if dataset.num_classes != config.num_classes:
        raise ConfigError(f"dataset has {dataset.num_classes} classes, model expects "
                          f"{config.num_classes}")
    train = dataset.splits.get("train") or []
    val = dataset.splits.get("val") or []
    if not train or not val:
        raise ConfigError("fit needs non-empty train and val splits")
    if loss_cfg.class_weights is not None and len(loss_cfg.class_weights) != config.num_classes:
        raise ConfigError(f"{len(loss_cfg.class_weights)} class weights for "
                          f"{config.num_classes} classes")
    crop = train_cfg.crop_size or 0
    if crop and crop % (2 ** config.depth):
        raise ConfigError(f"crop_size {crop} not divisible by 2**depth")

    params = unet.init_params(config, seed) if params is None else params
    state = AdamState()
    sched = PlateauSchedule(train_cfg.learning_rate, train_cfg.early_stop_patience,
                            train_cfg.plateau_patience, train_cfg.plateau_factor,
                            train_cfg.min_lr, train_cfg.min_delta)
    report = RunReport(seed=seed, checkpoint_path=str(checkpoint_path) if checkpoint_path else None)
    best_params = copy.deepcopy(params)
    bs = train_cfg.batch_size

    for epoch in range(train_cfg.epochs):
        lr = sched.lr
        order = np.random.default_rng([seed, epoch]).permutation(len(train))
        losses = []
        for b, s in enumerate(range(0, len(order), bs)):
            images, masks = _make_batch(train, order[s:s + bs], epoch, seed, augment, crop)
            losses.append(train_step(params, config, images, masks, loss_cfg, state, lr,
                                     seed=[seed, epoch, b]))
        epoch_loss = float(np.mean(losses))
        score = pooled_mcc(params, config, val)
        report.epoch_losses.append(epoch_loss)
        report.val_mcc.append(score)
        report.lrs.append(lr)
        improved, stop = sched.update(score)
        if improved:
            best_params = copy.deepcopy(params)
            report.best_epoch = epoch + 1
            report.best_mcc = score
            if checkpoint_path:
                save_checkpoint(checkpoint_path, Checkpoint(
                    config, best_params,
                    {"epoch": epoch + 1, "best_val_mcc": float(score), "seed": seed}))
        if progress:
            progress(epoch + 1, epoch_loss, score, lr)
        log.info("seed %s epoch %d loss %.4f val_mcc %.4f lr %.2e", seed, epoch + 1,
                 epoch_loss, score, lr)
        if stop:
            break
    return best_params, report


def aggregate(runs, partial=False):
    scores = [r.best_mcc for r in runs if r.aborted is None]
    if scores:
        mean, sd = float(np.mean(scores)), float(np.std(scores))
    else:
        mean, sd = float("nan"), float("nan")
    return TrainReport(runs=runs, mean_mcc=mean, sd_mcc=sd,
                       partial=partial or any(r.aborted for r in runs))


def multi_run_stats(run_fn, runs, base_seed=0, same_seed=False):
    """Run ``run_fn(seed, index) -> RunReport`` ``runs`` times.

    Run ``i`` uses seed ``base_seed + i`` unless ``same_seed``. The aggregate is
    the mean and population SD of each run's retained (best) validation MCC.
    """
    reports = []
    for i in range(runs):
        seed = base_seed if same_seed else base_seed + i
        try:
            reports.append(run_fn(seed, i))
        except TrainingAborted as exc:
            log.error("run %d (seed %d) aborted: %s", i, seed, exc)
            reports.append(RunReport(seed=seed, aborted=str(exc)))
    return aggregate(reports)


def summarize_mccs(values):
    """Mean and population SD of a list of MCCs."""
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std())


__all__ = [
    "LossConfig", "TrainConfig", "smoothed_targets", "cross_entropy_loss", "AdamState",
    "adam_step", "PlateauSchedule", "fit", "multi_run_stats", "RunReport", "TrainReport",
    "pooled_mcc",
]
