"""Training protocol: stratified 60/20/20 split, Adam, patience-based early stopping."""

from __future__ import annotations

import copy
import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch

from augsweep.augment import AugmentationPipeline
from augsweep.imagecore import batch_to_tensor
from augsweep.nn.autodiff import GradTape, backward

log = logging.getLogger(__name__)

SPLIT_RATIOS = (0.6, 0.2, 0.2)
MIN_PER_CLASS = 5


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 100
    learning_rate: float = 1e-5
    batch_size: int = 64
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.max_epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("max_epochs, batch_size and patience must be positive")
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass
class SplitIndices:
    train: list
    val: list
    test: list


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_dataset(labels, seed: int) -> SplitIndices:
    """Per-class seeded shuffle, then 20% validation, 20% test, the rest training."""
    labels = np.asarray(labels)
    train, val, test = [], [], []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if idx.size < MIN_PER_CLASS:
            raise ValueError(f"class {cls} has {idx.size} samples; need at least {MIN_PER_CLASS}")
        rng = np.random.default_rng([int(seed), int(cls)])
        idx = rng.permutation(idx)
        n_val = _round_half_up(idx.size * SPLIT_RATIOS[1])
        n_test = _round_half_up(idx.size * SPLIT_RATIOS[2])
        n_train = idx.size - n_val - n_test
        train.extend(idx[:n_train].tolist())
        val.extend(idx[n_train:n_train + n_val].tolist())
        test.extend(idx[n_train + n_val:].tolist())
    return SplitIndices(sorted(train), sorted(val), sorted(test))


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


@dataclass
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: np.ndarray

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "confusion": self.confusion.tolist(),
        }


def compute_metrics(preds, targets, num_classes: int) -> Metrics:
    """Accuracy plus macro precision/recall/F1 over all ``num_classes`` classes."""
    preds = np.asarray(preds, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    if preds.shape != targets.shape or preds.size == 0:
        raise ValueError("need equally long, non-empty prediction and target lists")
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(conf, (targets, preds), 1)
    tp = np.diag(conf).astype(np.float64)
    predicted = conf.sum(axis=0)
    actual = conf.sum(axis=1)
    missing = np.flatnonzero(actual == 0)
    if missing.size:
        warnings.warn(f"classes {missing.tolist()} absent from targets; scored as 0", stacklevel=2)
    prec = np.divide(tp, predicted, out=np.zeros(num_classes), where=predicted > 0)
    rec = np.divide(tp, actual, out=np.zeros(num_classes), where=actual > 0)
    denom = prec + rec
    f1 = np.divide(2 * prec * rec, denom, out=np.zeros(num_classes), where=denom > 0)
    return Metrics(
        accuracy=float(tp.sum() / conf.sum()),
        precision=float(prec.mean()),
        recall=float(rec.mean()),
        f1=float(f1.mean()),
        confusion=conf,
    )


# ---------------------------------------------------------------------------
# loss and optimizer
# ---------------------------------------------------------------------------


def cross_entropy(logits: torch.Tensor, targets) -> torch.Tensor:
    """Mean negative log-softmax of the target class, log-sum-exp stabilized."""
    targets = torch.as_tensor(targets, dtype=torch.long)
    if logits.dim() != 2 or targets.shape != (logits.shape[0],):
        raise ValueError(f"expected (B, C) logits and B targets, got {tuple(logits.shape)} / {tuple(targets.shape)}")
    c = logits.shape[1]
    if targets.numel() and (int(targets.min()) < 0 or int(targets.max()) >= c):
        raise ValueError(f"target outside [0, {c})")
    shift = logits.max(dim=1, keepdim=True).values.detach()
    lse = shift.squeeze(1) + torch.log(torch.exp(logits - shift).sum(dim=1))
    picked = logits.gather(1, targets[:, None]).squeeze(1)
    return (lse - picked).mean()


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


def optimizer_step(params, grads, state: AdamState, lr: float,
                   betas=ADAM_BETAS, eps: float = ADAM_EPS):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``; inputs are untouched."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    b1, b2 = betas
    m_prev = state.m or [g * 0 for g in grads]
    v_prev = state.v or [g * 0 for g in grads]
    t = state.step + 1
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, m_prev, v_prev):
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch: param {tuple(p.shape)} vs grad {tuple(g.shape)}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_p.append(p - lr * (m / c1) / ((v / c2) ** 0.5 + eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(t, new_m, new_v)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


class EarlyStopping:
    """Counts epochs whose validation loss exceeds the best so far; resets on improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.counter = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        """Record an epoch; True when training should stop."""
        if val_loss < self.best:
            self.best = val_loss
            self.best_epoch = epoch
            self.counter = 0
        elif val_loss > self.best:
            self.counter += 1
        return self.counter >= self.patience


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "val_accuracy"])
        for i, row in enumerate(zip(self.train_loss, self.val_loss, self.val_accuracy), start=1):
            w.writerow([i, *(repr(float(x)) for x in row)])
        return buf.getvalue()


def _param_dtype(model) -> torch.dtype:
    return next(model.parameters()).dtype


def predict_logits(model, images, batch_size: int = 256) -> torch.Tensor:
    """Eval-mode logits for a list of ImageBuffers."""
    was_training = model.training
    model.eval()
    dtype = _param_dtype(model)
    out = []
    try:
        with torch.no_grad():
            for start in range(0, len(images), batch_size):
                out.append(model(batch_to_tensor(images[start:start + batch_size], dtype=dtype)))
    finally:
        model.train(was_training)
    return torch.cat(out)


def evaluate(model, indices, data, batch_size: int = 256) -> Metrics:
    if len(indices) == 0:
        raise ValueError("evaluate needs at least one sample")
    logits = predict_logits(model, [data.image(i) for i in indices], batch_size)
    targets = [data.samples[i][1] for i in indices]
    return compute_metrics(logits.argmax(dim=1).numpy(), targets, data.num_classes)


def _val_pass(model, data, indices, batch_size):
    logits = predict_logits(model, [data.image(i) for i in indices], batch_size)
    targets = torch.tensor([data.samples[i][1] for i in indices])
    loss = float(cross_entropy(logits, targets))
    acc = float((logits.argmax(dim=1) == targets).double().mean())
    return loss, acc


def train(model, data, split: SplitIndices, pipeline: AugmentationPipeline | None, cfg: TrainConfig,
          progress=None):
    """Train ``model`` in place; it ends holding the weights of the best-validation epoch.

    Only training samples pass through ``pipeline``, freshly each epoch, each
    with its own (epoch, sample index) random substream.
    """
    if not split.train or not split.val:
        raise TrainingError("training and validation splits must be non-empty")
    pipeline = pipeline or AugmentationPipeline()
    names = [n for n, p in model.named_parameters() if p.requires_grad]
    params = dict(model.named_parameters())
    dtype = _param_dtype(model)
    state = AdamState()
    stopper = EarlyStopping(cfg.patience)
    history = TrainHistory()
    best_state = copy.deepcopy(model.state_dict())
    train_idx = np.asarray(split.train)

    for epoch in range(1, cfg.max_epochs + 1):
        model.train()
        order = np.random.default_rng([cfg.seed, epoch, 0x5EED]).permutation(train_idx)
        total, seen = 0.0, 0
        for start in range(0, order.size, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            images = [pipeline.apply(data.image(i), pipeline.rng(epoch, i)) for i in batch]
            x = batch_to_tensor(images, dtype=dtype)
            y = torch.tensor([data.samples[i][1] for i in batch])
            with GradTape({n: params[n] for n in names}) as tape:
                loss = cross_entropy(model(x), y)
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss {float(loss.detach())} at epoch {epoch}, batch starting {start} "
                    f"(lr={cfg.learning_rate}, label={pipeline.label})"
                )
            grads = backward(tape, loss)
            new, state = optimizer_step([params[n].detach() for n in names], [grads[n] for n in names],
                                        state, cfg.learning_rate)
            with torch.no_grad():
                for n, p in zip(names, new):
                    params[n].copy_(p)
            total += float(loss.detach()) * len(batch)
            seen += len(batch)
        val_loss, val_acc = _val_pass(model, data, split.val, max(cfg.batch_size, 256))
        history.train_loss.append(total / seen)
        history.val_loss.append(val_loss)
        history.val_accuracy.append(val_acc)
        history.stopped_epoch = epoch
        stop = stopper.update(epoch, val_loss)
        if stopper.best_epoch == epoch:
            best_state = copy.deepcopy(model.state_dict())
        log.info("[%s] epoch %d train %.4f val %.4f acc %.4f", pipeline.label, epoch,
                 history.train_loss[-1], val_loss, val_acc)
        if progress is not None:
            progress(epoch, history)
        if stop:
            break

    history.best_epoch = stopper.best_epoch
    model.load_state_dict(best_state)
    model.eval()
    return model, history
