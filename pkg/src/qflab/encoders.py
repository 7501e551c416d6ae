"""Classical-to-quantum data encodings."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .qsim import RX, Gate, Statevector, MAX_QUBITS


def _finite(features) -> np.ndarray:
    values = np.asarray(features, dtype=float).reshape(-1)
    if not np.all(np.isfinite(values)):
        raise ValueError("features must be finite")
    return values


def angle_encode(features, n_qubits: int) -> list[Gate]:
    """One RX(value) per qubit, qubit i carrying feature i.

    Values are used as radians unchanged; scaling into [-pi, pi] happens at
    data ingestion.
    """
    values = _finite(features)
    if values.size != n_qubits:
        raise ValueError(f"angle encoding needs {n_qubits} features, got {values.size}")
    return [RX(q, float(v)) for q, v in enumerate(values)]


def amplitude_encode(features, n_qubits: int) -> Statevector:
    values = _finite(features)
    if values.size > 2 ** n_qubits:
        raise ValueError(f"{values.size} features do not fit in {n_qubits} qubits")
    norm = np.linalg.norm(values)
    if norm == 0.0:
        raise ValueError("cannot amplitude-encode an all-zero vector")
    amps = np.zeros(2 ** n_qubits, dtype=complex)
    amps[: values.size] = values / norm
    return Statevector(n_qubits, amps)


def basis_encode(bits: Sequence[int]) -> Statevector:
    bits = [int(b) for b in bits]
    if not bits:
        raise ValueError("basis encoding needs at least one bit")
    if any(b not in (0, 1) for b in bits):
        raise ValueError("basis encoding takes 0/1 values only")
    if len(bits) > MAX_QUBITS:
        raise ValueError(f"at most {MAX_QUBITS} bits supported")
    index = sum(b << i for i, b in enumerate(bits))
    return Statevector.basis(len(bits), index)
