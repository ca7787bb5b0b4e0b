"""Classical dense-network baseline trained with backpropagation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_LAYERS = (20, 64, 32, 2)


@dataclass
class DenseConfig:
    lr: float = 0.01
    momentum: float = 0.9
    max_epochs: int = 200
    patience: int = 15
    batch_size: int = 16
    seed: int = 0
    hidden: tuple[int, ...] = (64, 32)


@dataclass
class DenseModel:
    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    metadata: dict = field(default_factory=dict)

    @classmethod
    def init(cls, layer_sizes=DEFAULT_LAYERS, seed: int = 0) -> "DenseModel":
        rng = np.random.default_rng(seed)
        sizes = tuple(int(n) for n in layer_sizes)
        weights = [
            rng.uniform(-math.sqrt(6.0 / (a + b)), math.sqrt(6.0 / (a + b)), size=(a, b))
            for a, b in zip(sizes[:-1], sizes[1:])
        ]
        return cls(sizes, weights, [np.zeros(n) for n in sizes[1:]])

    def copy(self) -> "DenseModel":
        return DenseModel(self.layer_sizes, [w.copy() for w in self.weights],
                          [b.copy() for b in self.biases], dict(self.metadata))

    def params(self) -> list[np.ndarray]:
        return self.weights + self.biases

    def logits(self, x) -> np.ndarray:
        return forward(self, np.atleast_2d(np.asarray(x, dtype=np.float64)))[-1]

    def predict_proba(self, x) -> np.ndarray:
        return softmax(self.logits(x))

    def predict(self, x) -> np.ndarray:
        return decide(self.logits(x))

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DenseModel":
        return cls(
            tuple(d["layer_sizes"]),
            [np.asarray(w, dtype=np.float64) for w in d["weights"]],
            [np.asarray(b, dtype=np.float64) for b in d["biases"]],
            dict(d.get("metadata", {})),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "DenseModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def decide(logits) -> np.ndarray:
    """Argmax of the class scores; ties resolve to class 0 (Healthy)."""
    return np.argmax(np.atleast_2d(logits), axis=1)


def forward(model: DenseModel, x: np.ndarray) -> list[np.ndarray]:
    """Activations of every layer; tanh on hidden layers, raw logits last."""
    acts = [x]
    n = len(model.weights)
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = acts[-1] @ w + b
        acts.append(z if l == n - 1 else np.tanh(z))
    return acts


def loss_and_grads(model: DenseModel, x, labels):
    """Mean cross-entropy and its gradients by backpropagation."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    labels = np.asarray(labels, dtype=int)
    acts = forward(model, x)
    probs = softmax(acts[-1])
    m = len(x)
    loss = -float(np.mean(np.log(probs[np.arange(m), labels])))

    delta = probs.copy()
    delta[np.arange(m), labels] -= 1.0
    delta /= m
    gW = [None] * len(model.weights)
    gb = [None] * len(model.biases)
    for l in range(len(model.weights) - 1, -1, -1):
        gW[l] = acts[l].T @ delta
        gb[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ model.weights[l].T) * (1.0 - acts[l] ** 2)
    return loss, gW, gb


def train_dense(x_train, y_train, x_valid, y_valid, config: DenseConfig | None = None) -> DenseModel:
    """Minibatch momentum SGD with early stopping on validation accuracy."""
    cfg = config or DenseConfig()
    x_train = np.asarray(x_train, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=int)
    x_valid = np.asarray(x_valid, dtype=np.float64)
    y_valid = np.asarray(y_valid, dtype=int)
    if np.unique(y_train).size < 2:
        raise ValueError("training set contains a single class")
    if len(x_valid) == 0:
        raise ValueError("validation set is empty")

    sizes = (x_train.shape[1],) + tuple(cfg.hidden) + (2,)
    model = DenseModel.init(sizes, cfg.seed)
    rng = np.random.default_rng(cfg.seed + 1)
    vel = [np.zeros_like(p) for p in model.params()]

    best, best_acc, best_epoch, stale = model.copy(), -1.0, -1, 0
    losses: list[float] = []
    epoch = 0
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(x_train))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            _, gW, gb = loss_and_grads(model, x_train[idx], y_train[idx])
            for p, v, g in zip(model.params(), vel, gW + gb):
                v *= cfg.momentum
                v -= cfg.lr * g
                p += v
        losses.append(loss_and_grads(model, x_train, y_train)[0])
        acc = float(np.mean(model.predict(x_valid) == y_valid))
        if acc > best_acc:
            best, best_acc, best_epoch, stale = model.copy(), acc, epoch, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    best.metadata = {
        "best_epoch": best_epoch,
        "best_valid_accuracy": best_acc,
        "epochs_run": epoch + 1,
        "train_loss_history": losses,
        "config": {**cfg.__dict__, "hidden": list(cfg.hidden)},
    }
    return best


def predict_dense(model: DenseModel, x) -> np.ndarray:
    return model.predict(x)
