"""Dense statevector simulation for the 4-qubit classifier circuit.

Amplitude index bit ``q`` is qubit ``q`` (qubit 0 is the least significant
bit). States are plain complex numpy arrays of length ``2**n``; batched
states carry a leading batch axis, shape ``(B, 2**n)``. Gate angles may be
scalars or length-``B`` arrays, which is how the feature map encodes a whole
dataset in one pass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations

import numpy as np

MAX_QUBITS = 12
N_QUBITS = 4
N_PARAMS = 8
GATE_KINDS = ("H", "RY", "RZ", "CX")

_H = np.array([[1.0, 1.0], [1.0, -1.0]], dtype=complex) / np.sqrt(2.0)


@dataclass(frozen=True)
class Gate:
    kind: str
    target: int
    control: int | None = None
    angle: float | np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise ValueError(f"unknown gate kind {self.kind!r}")
        if (self.kind == "CX") != (self.control is not None):
            raise ValueError("exactly the CX gate takes a control qubit")
        if self.kind == "CX" and self.control == self.target:
            raise ValueError("control and target must differ")
        if self.kind in ("RY", "RZ") and self.angle is None:
            raise ValueError(f"{self.kind} needs an angle")

    @property
    def qubits(self) -> tuple[int, ...]:
        return (self.target,) if self.control is None else (self.control, self.target)

    def inverse(self) -> "Gate":
        if self.kind in ("RY", "RZ"):
            return Gate(self.kind, self.target, angle=-np.asarray(self.angle))
        return self

    def to_dict(self) -> dict:
        angle = None if self.angle is None else np.asarray(self.angle).tolist()
        return {"kind": self.kind, "qubits": list(self.qubits), "angle": angle}


Circuit = list[Gate]


def ry_matrix(theta) -> np.ndarray:
    """RY(theta) = exp(-i theta Y / 2); batched thetas give shape (B, 2, 2)."""
    c, s = np.cos(np.asarray(theta) / 2), np.sin(np.asarray(theta) / 2)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2).astype(complex)


def rz_matrix(theta) -> np.ndarray:
    """RZ(theta) = exp(-i theta Z / 2)."""
    t = np.asarray(theta)
    zero = np.zeros_like(t, dtype=complex)
    return np.stack(
        [np.stack([np.exp(-0.5j * t), zero], -1), np.stack([zero, np.exp(0.5j * t)], -1)], -2
    )


def gate_matrix(gate: Gate) -> np.ndarray:
    """2x2 matrix of a single-qubit gate (or 4x4 for CX in (control, target) order)."""
    if gate.kind == "H":
        return _H
    if gate.kind == "RY":
        return ry_matrix(gate.angle)
    if gate.kind == "RZ":
        return rz_matrix(gate.angle)
    # basis |c t>, control is the high bit
    return np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)


def n_qubits_of(state: np.ndarray) -> int:
    dim = state.shape[-1]
    n = dim.bit_length() - 1
    if dim != 1 << n or n < 1 or n > MAX_QUBITS:
        raise ValueError(f"state dimension {dim} is not 2**n with 1 <= n <= {MAX_QUBITS}")
    return n


def zero_state(n: int, batch: int | None = None) -> np.ndarray:
    if not 1 <= n <= MAX_QUBITS:
        raise ValueError(f"n_qubits must be in [1, {MAX_QUBITS}]")
    shape = (1 << n,) if batch is None else (batch, 1 << n)
    state = np.zeros(shape, dtype=complex)
    state[..., 0] = 1.0
    return state


def _check_qubits(gate: Gate, n: int) -> None:
    for q in gate.qubits:
        if not 0 <= q < n:
            raise ValueError(f"qubit index {q} out of range for {n} qubits")


def apply_gate(state: np.ndarray, gate: Gate) -> np.ndarray:
    """Return a new state with ``gate`` applied; the input is not modified."""
    state = np.asarray(state, dtype=complex)
    n = n_qubits_of(state)
    _check_qubits(gate, n)
    single = state.ndim == 1
    psi = state.reshape(-1, 1 << n)
    batch = psi.shape[0]
    # qubit q lives on tensor axis 1 + (n - 1 - q) after the batch axis
    psi = psi.reshape((batch,) + (2,) * n)
    ax_t = 1 + (n - 1 - gate.target)

    if gate.kind == "CX":
        ax_c = 1 + (n - 1 - gate.control)
        out = psi.copy()
        idx1 = [slice(None)] * (n + 1)
        idx1[ax_c] = 1
        sub = psi[tuple(idx1)]
        # after fixing the control axis the target axis index shifts down if it came later
        t_axis = ax_t - 1 if ax_t > ax_c else ax_t
        out[tuple(idx1)] = np.flip(sub, axis=t_axis)
    else:
        U = gate_matrix(gate)
        if U.ndim == 2:
            U = np.broadcast_to(U, (batch, 2, 2))
        elif U.shape[0] != batch:
            raise ValueError("batched gate angle does not match state batch size")
        moved = np.moveaxis(psi, ax_t, -1).reshape(batch, -1, 2)
        new = np.einsum("bij,bkj->bki", U, moved)
        out = np.moveaxis(new.reshape((batch,) + (2,) * n), -1, ax_t)

    out = out.reshape(batch, 1 << n)
    return out[0] if single else out


def run_circuit(circuit, state: np.ndarray) -> np.ndarray:
    for gate in circuit:
        state = apply_gate(state, gate)
    return state


def expectation_z0(state: np.ndarray) -> np.ndarray | float:
    """<Z_0>: probability mass with qubit 0 = 0 minus mass with qubit 0 = 1."""
    probs = np.abs(np.asarray(state)) ** 2
    signs = 1.0 - 2.0 * (np.arange(probs.shape[-1]) & 1)
    val = probs @ signs
    return float(val) if np.ndim(val) == 0 else val


def _check_arity(values, expected: int, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape[-1:] != (expected,):
        raise ValueError(f"{what} needs {expected} values, got shape {arr.shape}")
    return arr


def zz_feature_map(x) -> Circuit:
    """One repetition of the second-order Z feature map with all-pairs entanglement.

    ``x`` may be shape (4,) or (B, 4); in the batched case every RZ carries a
    length-B angle vector.
    """
    x = _check_arity(x, N_QUBITS, "zz_feature_map")
    xs = [x[..., q] for q in range(N_QUBITS)]
    circ: Circuit = [Gate("H", q) for q in range(N_QUBITS)]
    circ += [Gate("RZ", q, angle=2.0 * xs[q]) for q in range(N_QUBITS)]
    for q, r in combinations(range(N_QUBITS), 2):
        phi = 2.0 * (np.pi - xs[q]) * (np.pi - xs[r])
        circ += [Gate("CX", r, control=q), Gate("RZ", r, angle=phi), Gate("CX", r, control=q)]
    return circ


def real_amplitudes_ansatz(theta) -> Circuit:
    """RY layer, linear CX chain, RY layer: 8 parameters on 4 qubits."""
    theta = _check_arity(theta, N_PARAMS, "real_amplitudes_ansatz")
    if theta.ndim != 1:
        raise ValueError("ansatz parameters must be a flat vector")
    circ: Circuit = [Gate("RY", q, angle=float(theta[q])) for q in range(N_QUBITS)]
    circ += [Gate("CX", q + 1, control=q) for q in range(N_QUBITS - 1)]
    circ += [Gate("RY", q, angle=float(theta[N_QUBITS + q])) for q in range(N_QUBITS)]
    return circ


def encode(x) -> np.ndarray:
    """Feature-map state(s) for angle vector(s) ``x`` starting from |0000>."""
    x = _check_arity(x, N_QUBITS, "encode")
    batch = None if x.ndim == 1 else x.shape[0]
    return run_circuit(zz_feature_map(x), zero_state(N_QUBITS, batch))


def classifier_output(encoded: np.ndarray, theta) -> np.ndarray | float:
    """<Z_0> after the ansatz acts on already-encoded state(s)."""
    return expectation_z0(run_circuit(real_amplitudes_ansatz(theta), encoded))


def run_classifier_circuit(x, theta) -> float:
    """Exact <Z_0> of feature map(x) followed by ansatz(theta) on |0000>."""
    x = _check_arity(x, N_QUBITS, "run_classifier_circuit")
    if x.ndim != 1:
        raise ValueError("run_classifier_circuit takes a single angle vector; use encode() for batches")
    return classifier_output(encode(x), theta)


def circuit_to_json(circuit) -> str:
    """Gate list dump for cross-checking against external simulators."""
    return json.dumps([g.to_dict() for g in circuit], indent=2)
