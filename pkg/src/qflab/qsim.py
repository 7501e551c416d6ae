"""Dense statevector simulator.

Conventions
-----------
* Qubit 0 is the least-significant bit of the basis-state index, so the
  amplitude of ``|q_{n-1} ... q_1 q_0>`` lives at index ``sum(q_i * 2**i)``.
* Rotations follow ``R_P(t) = exp(-i t P / 2)``.
* ``Rot(phi, theta, omega)`` applies RX(phi), then RY(theta), then RZ(omega)
  to the state, i.e. the operator ``RZ(omega) @ RY(theta) @ RX(phi)``.
* Bitstrings returned by :func:`sample_counts` list qubit 0 first, matching
  the order of the bit sequence given to ``basis_encode``.

The public functions act on single :class:`Statevector` values.  The
``evolve``/``z_expectations`` pair works on a leading batch axis and accepts
gate angles given as arrays of shape ``(batch,)``; the model code relies on
this to evaluate many inputs and parameter shifts in one pass.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

MAX_QUBITS = 14
NORM_ATOL = 1e-10

Angle = Union[float, np.ndarray]

SINGLE_QUBIT_KINDS = frozenset({"H", "X", "Z", "RX", "RY", "RZ", "Rot"})
CONTROLLED_KINDS = frozenset({"CNOT", "CRX"})
_N_ANGLES = {"H": 0, "X": 0, "Z": 0, "RX": 1, "RY": 1, "RZ": 1, "Rot": 3, "CNOT": 0, "CRX": 1}

_SQRT2_INV = 1.0 / np.sqrt(2.0)
_FIXED = {
    "H": np.array([[1, 1], [1, -1]], dtype=complex) * _SQRT2_INV,
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


class StructuralError(ValueError):
    """Qubit index or register width inconsistency."""


@dataclass(frozen=True)
class Statevector:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        if not 1 <= self.n_qubits <= MAX_QUBITS:
            raise StructuralError(f"n_qubits must be in [1, {MAX_QUBITS}], got {self.n_qubits}")
        amps = np.array(self.amplitudes, dtype=complex).reshape(-1)
        if amps.size != 2 ** self.n_qubits:
            raise StructuralError(
                f"expected {2 ** self.n_qubits} amplitudes for {self.n_qubits} qubits, got {amps.size}"
            )
        norm = float(np.vdot(amps, amps).real)
        if abs(norm - 1.0) > NORM_ATOL:
            raise StructuralError(f"state is not normalized (|psi|^2 = {norm!r})")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def zero(cls, n_qubits: int) -> "Statevector":
        amps = np.zeros(2 ** n_qubits, dtype=complex)
        amps[0] = 1.0
        return cls(n_qubits, amps)

    @classmethod
    def basis(cls, n_qubits: int, index: int) -> "Statevector":
        amps = np.zeros(2 ** n_qubits, dtype=complex)
        amps[index] = 1.0
        return cls(n_qubits, amps)

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def norm(self) -> float:
        return float(np.sqrt(np.vdot(self.amplitudes, self.amplitudes).real))


@dataclass(frozen=True)
class Gate:
    kind: str
    target: int
    params: tuple = ()
    control: int | None = None

    def __post_init__(self):
        if self.kind not in _N_ANGLES:
            raise StructuralError(f"unknown gate kind {self.kind!r}")
        object.__setattr__(self, "params", tuple(self.params))
        if len(self.params) != _N_ANGLES[self.kind]:
            raise StructuralError(
                f"{self.kind} takes {_N_ANGLES[self.kind]} angle(s), got {len(self.params)}"
            )
        if self.kind in CONTROLLED_KINDS:
            if self.control is None:
                raise StructuralError(f"{self.kind} requires a control qubit")
            if self.control == self.target:
                raise StructuralError("control and target must differ")
        elif self.control is not None:
            raise StructuralError(f"{self.kind} does not take a control qubit")

    def qubits(self) -> tuple[int, ...]:
        return (self.target,) if self.control is None else (self.control, self.target)

    def check(self, n_qubits: int) -> None:
        for q in self.qubits():
            if not 0 <= q < n_qubits:
                raise StructuralError(f"{self.kind} acts on qubit {q}, circuit has {n_qubits}")


# Shorthand constructors.
def H(q): return Gate("H", q)
def X(q): return Gate("X", q)
def Z(q): return Gate("Z", q)
def RX(q, t): return Gate("RX", q, (t,))
def RY(q, t): return Gate("RY", q, (t,))
def RZ(q, t): return Gate("RZ", q, (t,))
def Rot(q, phi, theta, omega): return Gate("Rot", q, (phi, theta, omega))
def CNOT(control, target): return Gate("CNOT", target, (), control)
def CRX(control, target, t): return Gate("CRX", target, (t,), control)


@dataclass
class Circuit:
    n_qubits: int
    gates: list[Gate] = field(default_factory=list)

    def __post_init__(self):
        if not 1 <= self.n_qubits <= MAX_QUBITS:
            raise StructuralError(f"n_qubits must be in [1, {MAX_QUBITS}], got {self.n_qubits}")
        self.gates = list(self.gates)
        for g in self.gates:
            g.check(self.n_qubits)

    def append(self, gate: Gate) -> "Circuit":
        gate.check(self.n_qubits)
        self.gates.append(gate)
        return self

    def extend(self, gates: Iterable[Gate]) -> "Circuit":
        for g in gates:
            self.append(g)
        return self

    def __len__(self):
        return len(self.gates)


@dataclass(frozen=True)
class NoiseSpec:
    channel: str = "none"
    p: float = 0.0

    def __post_init__(self):
        if self.channel not in ("none", "depolarizing", "dephasing"):
            raise ValueError(f"unknown noise channel {self.channel!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"noise strength p must lie in [0, 1], got {self.p}")


@dataclass(frozen=True)
class BooleanOracle:
    n_inputs: int
    table: tuple

    def __post_init__(self):
        table = tuple(int(bool(v)) for v in self.table)
        if self.n_inputs < 1 or len(table) != 2 ** self.n_inputs:
            raise ValueError(f"truth table must have 2**{self.n_inputs} entries, got {len(table)}")
        object.__setattr__(self, "table", table)

    @classmethod
    def from_function(cls, n_inputs: int, f) -> "BooleanOracle":
        return cls(n_inputs, tuple(f(x) for x in range(2 ** n_inputs)))

    def classify(self) -> str:
        ones = sum(self.table)
        if ones in (0, len(self.table)):
            return "constant"
        if 2 * ones == len(self.table):
            return "balanced"
        return "neither"


# ---------------------------------------------------------------------------
# gate matrices (angles may be arrays -> stacked matrices of shape (B, 2, 2))

def _rx(t: Angle) -> np.ndarray:
    c, s = np.cos(np.asarray(t) / 2), np.sin(np.asarray(t) / 2)
    return np.stack([np.stack([c, -1j * s], -1), np.stack([-1j * s, c], -1)], -2)


def _ry(t: Angle) -> np.ndarray:
    c, s = np.cos(np.asarray(t) / 2), np.sin(np.asarray(t) / 2)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2).astype(complex)


def _rz(t: Angle) -> np.ndarray:
    e = np.exp(-0.5j * np.asarray(t))
    zero = np.zeros_like(e)
    return np.stack([np.stack([e, zero], -1), np.stack([zero, np.conj(e)], -1)], -2)


def gate_matrix(gate: Gate) -> np.ndarray:
    """2x2 matrix of the gate's target action (for CNOT/CRX: the controlled block)."""
    k = gate.kind
    if k in _FIXED:
        return _FIXED[k]
    if k == "CNOT":
        return _FIXED["X"]
    if k in ("RX", "CRX"):
        return _rx(gate.params[0])
    if k == "RY":
        return _ry(gate.params[0])
    if k == "RZ":
        return _rz(gate.params[0])
    phi, theta, omega = gate.params
    return _rz(omega) @ _ry(theta) @ _rx(phi)


# ---------------------------------------------------------------------------
# batched kernels

def _apply_1q(amps: np.ndarray, mat: np.ndarray, target: int, n: int) -> np.ndarray:
    b = amps.shape[0]
    view = amps.reshape(b, 2 ** (n - 1 - target), 2, 2 ** target)
    if mat.ndim == 2:
        out = np.einsum("ij,bajc->baic", mat, view)
    else:
        out = np.einsum("bij,bajc->baic", mat, view)
    return out.reshape(b, -1)


def _apply_controlled(amps: np.ndarray, mat: np.ndarray, control: int, target: int, n: int) -> np.ndarray:
    b = amps.shape[0]
    view = amps.reshape((b,) + (2,) * n).copy()
    # axis 1 + (n - 1 - q) holds qubit q
    c_ax, t_ax = n - control, n - target
    sel = [slice(None)] * (n + 1)
    sel[c_ax] = 1
    sub = view[tuple(sel)]  # control=1 slice; target axis shifts left if after control
    t_sub = t_ax - 1 if t_ax > c_ax else t_ax
    sub = np.moveaxis(sub, t_sub, -1)
    if mat.ndim == 2:
        sub = sub @ mat.T
    else:
        shape = sub.shape
        flat = sub.reshape(b, -1, 2)
        flat = np.einsum("bij,bkj->bki", mat, flat)
        sub = flat.reshape(shape)
    view[tuple(sel)] = np.moveaxis(sub, -1, t_sub)
    return view.reshape(b, -1)


def evolve(amps: np.ndarray, gates: Sequence[Gate], n_qubits: int) -> np.ndarray:
    """Apply ``gates`` in order to a batch of raw amplitude rows ``(B, 2**n)``."""
    amps = np.asarray(amps, dtype=complex)
    if amps.ndim != 2 or amps.shape[1] != 2 ** n_qubits:
        raise StructuralError(f"expected amplitudes of shape (B, {2 ** n_qubits}), got {amps.shape}")
    for g in gates:
        g.check(n_qubits)
        mat = gate_matrix(g)
        if g.control is None:
            amps = _apply_1q(amps, mat, g.target, n_qubits)
        else:
            amps = _apply_controlled(amps, mat, g.control, g.target, n_qubits)
    return amps


def _z_signs(n_qubits: int) -> np.ndarray:
    idx = np.arange(2 ** n_qubits)[:, None]
    bits = (idx >> np.arange(n_qubits)[None, :]) & 1
    return 1.0 - 2.0 * bits


def z_expectations(amps: np.ndarray, n_qubits: int) -> np.ndarray:
    """Per-qubit <Z> for each row of a ``(B, 2**n)`` amplitude batch -> ``(B, n)``."""
    probs = np.abs(amps) ** 2
    return probs @ _z_signs(n_qubits)


def shot_z_expectations(amps: np.ndarray, n_qubits: int, shots: int, rng: np.random.Generator) -> np.ndarray:
    """Finite-shot estimate of per-qubit <Z> for each row of a batch."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    probs = np.abs(amps) ** 2
    probs = probs / probs.sum(axis=1, keepdims=True)
    counts = np.stack([rng.multinomial(shots, p) for p in probs])
    return counts @ _z_signs(n_qubits) / shots


# ---------------------------------------------------------------------------
# public single-state operations

def apply_gate(state: Statevector, gate: Gate) -> Statevector:
    gate.check(state.n_qubits)
    amps = evolve(state.amplitudes[None, :], [gate], state.n_qubits)[0]
    return Statevector(state.n_qubits, amps)


def run_circuit(circuit: Circuit, initial: Statevector | None = None) -> Statevector:
    if initial is None:
        initial = Statevector.zero(circuit.n_qubits)
    if initial.n_qubits != circuit.n_qubits:
        raise StructuralError(
            f"circuit has {circuit.n_qubits} qubits but the initial state has {initial.n_qubits}"
        )
    amps = evolve(initial.amplitudes[None, :], circuit.gates, circuit.n_qubits)[0]
    return Statevector(circuit.n_qubits, amps)


def expectation_z(state: Statevector, qubit: int) -> float:
    if not 0 <= qubit < state.n_qubits:
        raise StructuralError(f"qubit {qubit} out of range for {state.n_qubits} qubits")
    return float(z_expectations(state.amplitudes[None, :], state.n_qubits)[0, qubit])


def apply_noise(expectations, noise: NoiseSpec) -> np.ndarray:
    """End-of-circuit channel applied to Pauli-Z expectation values.

    Depolarizing ``rho -> (1-p) rho + p I/2`` shrinks every <Z> by ``1-p``.
    Dephasing only damps X/Y coherences, so <Z> passes through unchanged.
    """
    values = np.asarray(expectations, dtype=float)
    if noise.channel == "depolarizing":
        return (1.0 - noise.p) * values
    return values.copy()


def sample_counts(state: Statevector, shots: int, seed: int) -> dict[str, int]:
    if shots < 1:
        raise ValueError("shots must be >= 1")
    rng = np.random.default_rng(seed)
    probs = state.probabilities()
    probs = probs / probs.sum()
    outcomes = rng.choice(probs.size, size=shots, p=probs)
    n = state.n_qubits
    hist = Counter(int(i) for i in outcomes)
    return {"".join(str((i >> q) & 1) for q in range(n)): c for i, c in sorted(hist.items())}


def apply_phase_oracle(state: Statevector, oracle: BooleanOracle) -> Statevector:
    if oracle.n_inputs != state.n_qubits:
        raise StructuralError("oracle width differs from state width")
    signs = 1.0 - 2.0 * np.asarray(oracle.table, dtype=float)
    return Statevector(state.n_qubits, state.amplitudes * signs)


def deutsch_jozsa_zero_prob(oracle: BooleanOracle) -> float:
    """Probability of reading all zeros after H^n, phase oracle, H^n."""
    if oracle.classify() == "neither":
        raise ValueError("Deutsch-Jozsa needs a constant or balanced oracle")
    n = oracle.n_inputs
    layer = Circuit(n, [H(q) for q in range(n)])
    state = run_circuit(layer, Statevector.zero(n))
    state = apply_phase_oracle(state, oracle)
    state = run_circuit(layer, state)
    return float(state.probabilities()[0])


def dense_unitary(circuit: Circuit) -> np.ndarray:
    """Full ``2**n x 2**n`` matrix of a circuit, built column by column."""
    dim = 2 ** circuit.n_qubits
    cols = evolve(np.eye(dim, dtype=complex), circuit.gates, circuit.n_qubits)
    return cols.T
