"""Training loop: Adam, plateau learning-rate schedule, best-checkpoint
retention, per-epoch history."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..seeding import substream
from .metrics import Metrics, compute_metrics
from .model import SurrogateModel


@dataclass
class TrainSchedule:
    epochs: int = 125
    batch_size: int = 64
    learning_rate: float = 0.0025
    lr_decay: float = 0.1
    patience: int = 10       # epochs without val improvement before decay
    seed: int = 0


class Adam:
    def __init__(self, model: SurrogateModel, lr: float,
                 beta1=0.9, beta2=0.999, eps=1e-8):
        self.model = model
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(layer.params[key], dtype=np.float64)
                  for name, layer, key in model.named_params()}
        self.v = {name: np.zeros_like(layer.params[key], dtype=np.float64)
                  for name, layer, key in model.named_params()}

    def step(self):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, layer, key in self.model.named_params():
            g = layer.grads[key].astype(np.float64)
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            update = self.lr * (self.m[name] / b1c) / (
                np.sqrt(self.v[name] / b2c) + self.eps)
            layer.params[key] = (layer.params[key]
                                 - update.astype(layer.params[key].dtype))


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class TrainResult:
    history: list = field(default_factory=list)
    best_val_loss: float = float("inf")
    best_epoch: int = -1


def predict_in_batches(model: SurrogateModel, images: np.ndarray,
                       batch_size: int = 64) -> np.ndarray:
    out = []
    for start in range(0, len(images), batch_size):
        out.append(model.forward(images[start:start + batch_size],
                                 train=False))
    return np.concatenate(out) if out else np.zeros((0, 3))


def validation_loss(model: SurrogateModel, images, targets,
                    batch_size: int = 64) -> float:
    preds = predict_in_batches(model, images, batch_size)
    return float(np.mean(np.sum((preds - targets) ** 2, axis=1)))


def train(model: SurrogateModel, train_images, train_targets,
          val_images, val_targets,
          schedule: TrainSchedule) -> TrainResult:
    """Train in place; the model ends up with the lowest-validation-loss
    parameters seen during training."""
    if len(train_images) == 0:
        raise ValueError("empty training split")
    optimizer = Adam(model, schedule.learning_rate)
    result = TrainResult()
    best_params = None
    best_state = None
    since_improvement = 0

    for epoch in range(1, schedule.epochs + 1):
        order = substream(schedule.seed, "epoch-order",
                          epoch).permutation(len(train_images))
        losses = []
        for start in range(0, len(order), schedule.batch_size):
            idx = order[start:start + schedule.batch_size]
            losses.append(model.loss_and_backward(train_images[idx],
                                                  train_targets[idx]))
            optimizer.step()
        train_loss = float(np.mean(losses))
        val_loss = validation_loss(model, val_images, val_targets,
                                   schedule.batch_size)
        result.history.append(EpochRecord(epoch, train_loss, val_loss,
                                          optimizer.lr))
        if val_loss < result.best_val_loss:
            result.best_val_loss = val_loss
            result.best_epoch = epoch
            best_params, best_state = model.copy_params()
            since_improvement = 0
        else:
            since_improvement += 1
            if since_improvement >= schedule.patience:
                optimizer.lr *= schedule.lr_decay
                since_improvement = 0
        model.training_state.epoch = epoch
        model.training_state.learning_rate = optimizer.lr
        model.training_state.best_val_loss = result.best_val_loss

    if best_params is not None:
        model.load_params(best_params, best_state)
    return result


def write_history_csv(result: TrainResult, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for rec in result.history:
            w.writerow([rec.epoch, repr(rec.train_loss),
                        repr(rec.val_loss), repr(rec.lr)])


def evaluate(model: SurrogateModel, images, targets,
             batch_size: int = 64) -> Metrics:
    if len(images) == 0:
        raise ValueError("empty evaluation split")
    preds = predict_in_batches(model, images, batch_size)
    return compute_metrics(preds, targets)
