"""Equilibrium Propagation on a layered continuous Hopfield network.

Adjacent layers are coupled by a single stored matrix ``W[l]`` of shape
``(n_l, n_{l+1})`` that is used in both directions, so the coupling between
two units is symmetric by construction. The energy is

    E(s) = - sum_l s_l . W[l] s_{l+1} - sum_{l>=1} b_l . s_l + sum_{l>=1} sum_i rho(s_i)

with ``s_0 = x`` clamped and ``rho(s) = s artanh(s) + 0.5 log(1 - s^2)``, whose
derivative is ``artanh``; stationary points therefore satisfy
``s = tanh(pre-activation)``. Learning contrasts a free equilibrium with one
weakly nudged toward the target; nothing is backpropagated.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

HEALTHY, AML = 0, 1
TARGET_LEVEL = 0.85
DEFAULT_LAYERS = (20, 256, 128, 64, 2)


@dataclass
class EPConfig:
    beta: float = 0.1
    momentum: float = 0.9
    lr: float = 0.05
    max_epochs: int = 100
    patience: int = 15
    free_iters: int = 100
    nudged_iters: int = 100
    tol: float = 1e-4
    damping: float = 0.5
    seed: int = 0
    layer_sizes: tuple[int, ...] = DEFAULT_LAYERS
    # Glorot bounds scaled down so the free-unit coupling starts contractive
    # (spectral norm < 1 at tanh'(0) = 1); a unit gain starts multistable and
    # the outputs tend to saturate before any learning happens.
    init_gain: float = 0.3

    def __post_init__(self):
        self.layer_sizes = tuple(int(n) for n in self.layer_sizes)
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if len(self.layer_sizes) < 2:
            raise ValueError("need at least an input and an output layer")


@dataclass
class EPState:
    """Activations of every non-input layer for one clamped input (or a batch)."""

    layers: list[np.ndarray]
    x: np.ndarray
    converged: bool = True
    sweeps: int = 0

    @property
    def output(self) -> np.ndarray:
        return self.layers[-1]

    def copy(self) -> "EPState":
        return EPState([s.copy() for s in self.layers], self.x, self.converged, self.sweeps)


@dataclass
class EPNetwork:
    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    metadata: dict = field(default_factory=dict)

    @classmethod
    def init(cls, layer_sizes=DEFAULT_LAYERS, seed: int = 0, gain: float = 1.0) -> "EPNetwork":
        """Glorot-uniform couplings scaled by ``gain``, zero biases."""
        rng = np.random.default_rng(seed)
        sizes = tuple(int(n) for n in layer_sizes)
        weights = []
        for a, b in zip(sizes[:-1], sizes[1:]):
            bound = gain * math.sqrt(6.0 / (a + b))
            weights.append(rng.uniform(-bound, bound, size=(a, b)))
        biases = [np.zeros(n) for n in sizes[1:]]
        return cls(sizes, weights, biases)

    def copy(self) -> "EPNetwork":
        return EPNetwork(self.layer_sizes, [w.copy() for w in self.weights],
                         [b.copy() for b in self.biases], dict(self.metadata))

    def params(self) -> list[np.ndarray]:
        return self.weights + self.biases

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EPNetwork":
        return cls(
            tuple(d["layer_sizes"]),
            [np.asarray(w, dtype=np.float64) for w in d["weights"]],
            [np.asarray(b, dtype=np.float64) for b in d["biases"]],
            dict(d.get("metadata", {})),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "EPNetwork":
        return cls.from_dict(json.loads(Path(path).read_text()))


def rho(s) -> np.ndarray:
    """Primitive of artanh: integral_0^s artanh(u) du."""
    s = np.asarray(s, dtype=np.float64)
    return s * np.arctanh(s) + 0.5 * np.log1p(-s * s)


def energy(net: EPNetwork, state: EPState) -> float:
    """Hopfield energy of a single (unbatched) state; input units carry no rho or bias term."""
    layers = state.layers
    for s in layers:
        if np.any(np.abs(s) >= 1.0):
            raise ValueError("activations must lie strictly inside (-1, 1)")
    acts = [np.asarray(state.x, dtype=np.float64)] + list(layers)
    coupling = sum(float(acts[l] @ net.weights[l] @ acts[l + 1]) for l in range(len(net.weights)))
    bias = sum(float(b @ s) for b, s in zip(net.biases, layers))
    prim = sum(float(np.sum(rho(s))) for s in layers)
    return -coupling - bias + prim


def total_energy(net: EPNetwork, state: EPState, y, beta: float) -> float:
    """Energy plus the nudging term (beta / 2) ||s_out - y||^2."""
    diff = state.output - np.asarray(y, dtype=np.float64)
    return energy(net, state) + 0.5 * beta * float(diff @ diff)


def preactivation(net: EPNetwork, layers: list[np.ndarray], x: np.ndarray, l: int) -> np.ndarray:
    """Input to non-input layer ``l`` (0-based among non-input layers) from both neighbours."""
    below = x if l == 0 else layers[l - 1]
    h = below @ net.weights[l] + net.biases[l]
    if l + 1 < len(layers):
        h = h + layers[l + 1] @ net.weights[l + 1].T
    return h


def stationarity_residual(net: EPNetwork, state: EPState) -> float:
    """max_i |s_i - tanh(pre-activation_i)| over all free units."""
    return max(
        float(np.max(np.abs(s - np.tanh(preactivation(net, state.layers, state.x, l)))))
        for l, s in enumerate(state.layers)
    )


def _relax(net, x, layers, y, beta, max_iters, tol, damping, trace=None):
    """Damped layer-by-layer fixed-point sweeps. Mutates and returns ``layers``."""
    n_layers = len(layers)
    W, b = net.weights, net.biases
    converged = False
    sweeps = 0
    for sweeps in range(1, max_iters + 1):
        delta = 0.0
        for l in range(n_layers):
            below = x if l == 0 else layers[l - 1]
            h = below @ W[l] + b[l]
            if l + 1 < n_layers:
                h = h + layers[l + 1] @ W[l + 1].T
            s = layers[l]
            if beta and l == n_layers - 1:
                h = h + beta * (y - s)
            new = (1.0 - damping) * s + damping * np.tanh(h)
            delta = max(delta, float(np.max(np.abs(new - s))))
            layers[l] = new
        if trace is not None:
            trace.append([s.copy() for s in layers])
        if delta < tol:
            converged = True
            break
    return layers, converged, sweeps


def free_phase(net: EPNetwork, x, config: EPConfig | None = None, trace=None) -> EPState:
    """Relax from s = 0 with the input clamped and no supervision.

    ``x`` may be a single input vector or a (B, n_in) batch; a batch is
    declared converged only when every member is.
    """
    cfg = config or EPConfig(layer_sizes=net.layer_sizes)
    x = np.asarray(x, dtype=np.float64)
    lead = x.shape[:-1]
    layers = [np.zeros(lead + (n,)) for n in net.layer_sizes[1:]]
    layers, ok, sweeps = _relax(net, x, layers, None, 0.0, cfg.free_iters, cfg.tol, cfg.damping, trace)
    return EPState(layers, x, ok, sweeps)


def nudged_phase(net: EPNetwork, x, y, beta: float, free: EPState | None = None,
                 config: EPConfig | None = None, trace=None) -> EPState:
    """Relax on E + (beta/2)||s_out - y||^2, starting from the free equilibrium."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    cfg = config or EPConfig(layer_sizes=net.layer_sizes)
    x = np.asarray(x, dtype=np.float64)
    if free is None:
        free = free_phase(net, x, cfg)
    layers = [s.copy() for s in free.layers]
    y = np.asarray(y, dtype=np.float64)
    layers, ok, sweeps = _relax(net, x, layers, y, beta, cfg.nudged_iters, cfg.tol, cfg.damping, trace)
    return EPState(layers, x, ok, sweeps)


def ep_update(free: EPState, nudged: EPState, beta: float, lr: float):
    """Contrastive parameter deltas from the two equilibria.

    Returns ``(dW, db)`` with ``dW[l] = (lr/beta)(outer(a, b)^nudged - outer(a, b)^free)``
    for each adjacent pair of layers (the clamped input included) and
    ``db[l] = (lr/beta)(s^nudged - s^free)``. Only the two states enter.
    """
    scale = lr / beta
    acts_f = [free.x] + list(free.layers)
    acts_n = [nudged.x] + list(nudged.layers)
    dW = [
        scale * (np.outer(acts_n[l], acts_n[l + 1]) - np.outer(acts_f[l], acts_f[l + 1]))
        for l in range(len(acts_f) - 1)
    ]
    db = [scale * (sn - sf) for sn, sf in zip(nudged.layers, free.layers)]
    return dW, db


def one_hot_targets(labels, n_out: int = 2, level: float = TARGET_LEVEL) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    y = np.full((len(labels), n_out), -level)
    y[np.arange(len(labels)), labels] = level
    return y


def decide(outputs) -> np.ndarray:
    """Argmax over output slots; a tie goes to slot 0 (Healthy)."""
    return np.argmax(np.atleast_2d(outputs), axis=1)


def predict_ep(net: EPNetwork, x, config: EPConfig | None = None) -> np.ndarray:
    """Labels for one input or a batch of inputs."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return decide(free_phase(net, x, config).output)


def accuracy(net: EPNetwork, x, labels, config: EPConfig | None = None) -> float:
    return float(np.mean(predict_ep(net, x, config) == np.asarray(labels)))


def cosine_lr(lr0: float, epoch: int, max_epochs: int) -> float:
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * epoch / max_epochs))


def _check_two_classes(labels) -> None:
    if np.unique(labels).size < 2:
        raise ValueError("data contain a single class")


def train_ep(x_train, y_train, x_valid, y_valid, config: EPConfig | None = None,
             verbose: bool = False) -> EPNetwork:
    """Per-sample EP training with momentum, cosine-annealed lr and early stopping.

    Returns the snapshot with the best validation accuracy. ``metadata``
    records the best epoch, epochs run, and per-epoch validation accuracy.
    """
    cfg = config or EPConfig()
    x_train = np.asarray(x_train, dtype=np.float64)
    x_valid = np.asarray(x_valid, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=int)
    y_valid = np.asarray(y_valid, dtype=int)
    if len(x_train) == 0 or len(x_valid) == 0:
        raise ValueError("train and validation sets must be non-empty")
    _check_two_classes(y_train)
    _check_two_classes(y_valid)
    sizes = (x_train.shape[1],) + tuple(cfg.layer_sizes[1:])

    net = EPNetwork.init(sizes, cfg.seed, cfg.init_gain)
    rng = np.random.default_rng(cfg.seed + 1)
    targets = one_hot_targets(y_train, sizes[-1])
    vel_W = [np.zeros_like(w) for w in net.weights]
    vel_b = [np.zeros_like(b) for b in net.biases]

    best = net.copy()
    best_acc, best_epoch, stale = -1.0, -1, 0
    history: list[float] = []
    unconverged = 0
    epoch = 0
    for epoch in range(cfg.max_epochs):
        lr = cosine_lr(cfg.lr, epoch, cfg.max_epochs)
        for i in rng.permutation(len(x_train)):
            free = free_phase(net, x_train[i], cfg)
            nudged = nudged_phase(net, x_train[i], targets[i], cfg.beta, free, cfg)
            unconverged += (not free.converged) + (not nudged.converged)
            dW, db = ep_update(free, nudged, cfg.beta, lr)
            for l in range(len(net.weights)):
                vel_W[l] *= cfg.momentum
                vel_W[l] += dW[l]
                net.weights[l] += vel_W[l]
            for l in range(len(net.biases)):
                vel_b[l] *= cfg.momentum
                vel_b[l] += db[l]
                net.biases[l] += vel_b[l]
        if not all(np.all(np.isfinite(p)) for p in net.params()):
            raise FloatingPointError(f"EP parameters diverged in epoch {epoch}")

        acc = accuracy(net, x_valid, y_valid, cfg)
        history.append(acc)
        if verbose:
            print(f"epoch {epoch:3d}  lr {lr:.4f}  valid acc {acc:.3f}")
        if acc > best_acc:
            best_acc, best_epoch, stale = acc, epoch, 0
            best = net.copy()
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    cfg_dict = asdict(cfg)
    cfg_dict["layer_sizes"] = list(sizes)
    best.metadata = {
        "best_epoch": best_epoch,
        "best_valid_accuracy": best_acc,
        "epochs_run": epoch + 1,
        "valid_history": history,
        "unconverged_relaxations": unconverged,
        "config": cfg_dict,
    }
    return best
