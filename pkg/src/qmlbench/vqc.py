"""Hybrid VQC classifier: MSE on <Z_0>, gradient-free COBYLA training, sign readout."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from . import qsim

HEALTHY, AML = 0, 1
LABEL_MAP = {"Healthy": 1.0, "AML": -1.0}

RHO_BEGIN = 1.0
RHO_END = 1e-4
MAX_ITERS = 200
INIT_SCALE = 0.1


class NonFiniteObjective(RuntimeError):
    pass


def labels_to_targets(labels) -> np.ndarray:
    """Class index (0 = Healthy, 1 = AML) to target +1 / -1."""
    labels = np.asarray(labels)
    return np.where(labels == HEALTHY, 1.0, -1.0)


def _check_targets(y: np.ndarray) -> None:
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("targets must be +1 (Healthy) or -1 (AML)")


def vqc_loss(theta, x, y) -> float:
    """Mean squared error between <Z_0>(x_i, theta) and targets y_i in {+1, -1}."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("vqc_loss needs a non-empty (N, 4) array of angles")
    _check_targets(y)
    return encoded_loss(theta, qsim.encode(x), y)


def encoded_loss(theta, encoded: np.ndarray, y: np.ndarray) -> float:
    """Same loss on pre-encoded feature-map states (the feature map does not depend on theta)."""
    z = qsim.classifier_output(encoded, theta)
    return float(np.mean((z - y) ** 2))


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    nfev: int
    history: list[float] = field(default_factory=list)
    best_history: list[float] = field(default_factory=list)


def cobyla_minimize(
    f: Callable[[np.ndarray], float],
    x0,
    max_iters: int = MAX_ITERS,
    rho_begin: float = RHO_BEGIN,
    rho_end: float = RHO_END,
) -> OptimizeResult:
    """Derivative-free minimization with COBYLA (linear interpolation on a simplex).

    The budget is ``max_iters`` objective evaluations on top of the ``n + 1``
    used to build the initial simplex. ``f`` only ever receives points and
    returns values; no gradient is requested. The best point seen is
    returned, which can differ from the solver's final iterate.
    """
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    n = x0.size
    history: list[float] = []
    best_history: list[float] = []
    best = {"x": x0.copy(), "f": math.inf}

    def wrapped(p: np.ndarray) -> float:
        val = float(f(np.array(p, dtype=np.float64)))
        if not math.isfinite(val):
            raise NonFiniteObjective(f"objective returned {val} at {np.array2string(p)}")
        history.append(val)
        if val < best["f"]:
            best["f"] = val
            best["x"] = np.array(p, dtype=np.float64)
        best_history.append(best["f"])
        return val

    minimize(
        wrapped,
        x0,
        method="COBYLA",
        options={"rhobeg": rho_begin, "tol": rho_end, "maxiter": max_iters + n + 1},
    )
    return OptimizeResult(best["x"], best["f"], len(history), history, best_history)


@dataclass
class VQCModel:
    theta: np.ndarray
    loss_history: list[float]  # best-so-far loss after each post-simplex iteration
    seed: int | None = None
    initial_loss: float | None = None
    optimizer_config: dict = field(
        default_factory=lambda: {
            "method": "COBYLA",
            "rho_begin": RHO_BEGIN,
            "rho_end": RHO_END,
            "max_iters": MAX_ITERS,
        }
    )

    def decision_function(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return np.atleast_1d(qsim.classifier_output(qsim.encode(np.atleast_2d(x)), self.theta))

    def predict(self, x) -> np.ndarray:
        return np.where(self.decision_function(x) >= 0.0, HEALTHY, AML)

    def to_dict(self) -> dict:
        return {
            "theta": self.theta.tolist(),
            "label_map": LABEL_MAP,
            "loss_history": list(self.loss_history),
            "optimizer_config": self.optimizer_config,
            "seed": self.seed,
            "initial_loss": self.initial_loss,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VQCModel":
        return cls(
            np.asarray(d["theta"], dtype=np.float64),
            list(d["loss_history"]),
            d.get("seed"),
            d.get("initial_loss"),
            dict(d["optimizer_config"]),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "VQCModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def train_vqc(x, y, seed: int = 0, max_iters: int = MAX_ITERS) -> VQCModel:
    """Fit the 8 ansatz angles on (N, 4) angle data with +1/-1 targets."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != qsim.N_QUBITS or len(x) == 0:
        raise ValueError("train_vqc needs a non-empty (N, 4) array of angles")
    if len(y) != len(x):
        raise ValueError("x and y lengths differ")
    _check_targets(y)
    if np.unique(y).size < 2:
        raise ValueError("training set contains a single class")

    rng = np.random.default_rng(seed)
    theta0 = rng.uniform(-INIT_SCALE, INIT_SCALE, size=qsim.N_PARAMS)
    encoded = qsim.encode(x)
    res = cobyla_minimize(lambda t: encoded_loss(t, encoded, y), theta0, max_iters=max_iters)
    n_init = qsim.N_PARAMS + 1
    model = VQCModel(res.x, res.best_history[n_init:], seed, res.history[0])
    model.optimizer_config["max_iters"] = max_iters
    return model


def predict_vqc(model: VQCModel, x) -> int:
    """Healthy (0) if <Z_0> >= 0, else AML (1)."""
    return int(model.predict(np.asarray(x, dtype=np.float64).reshape(1, -1))[0])


def label_from_expectation(z: float) -> int:
    return HEALTHY if z >= 0.0 else AML
