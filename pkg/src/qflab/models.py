"""Trainable quantum and hybrid models.

Every classifier exposes the same small surface used by the federation
code: ``n_params``, ``init_params(rng)``, ``logits(params, X)`` and
``loss_and_grad(params, X, y)``.  Parameters are always one flat float
vector so that aggregation never needs to know the model structure.

Quantum gradients come from the parameter-shift rule.  Every trainable
angle (and every RX encoding angle) enters the circuit exactly once through
a gate ``exp(-i t P / 2)``, so a shift of +-pi/2 gives the exact derivative.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoders import angle_encode
from .qsim import (
    CNOT,
    RX,
    Circuit,
    Gate,
    NoiseSpec,
    Rot,
    evolve,
    shot_z_expectations,
    z_expectations,
)

SHIFT = np.pi / 2
INIT_SCALE = 0.1
QLSTM_CLASSICAL_SCALE = 0.5


class UnsupportedModeError(ValueError):
    pass


@dataclass(frozen=True)
class VqcSpec:
    n_qubits: int
    n_layers: int

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValueError("n_qubits must be >= 1")
        if self.n_layers < 0:
            raise ValueError("n_layers must be >= 0")

    @property
    def n_params(self) -> int:
        return 3 * self.n_qubits * self.n_layers


def _check_lengths(spec: VqcSpec, params, features):
    if np.shape(params)[-1] != spec.n_params:
        raise ValueError(f"expected {spec.n_params} parameters, got {np.shape(params)[-1]}")
    if np.shape(features)[-1] != spec.n_qubits:
        raise ValueError(f"expected {spec.n_qubits} features, got {np.shape(features)[-1]}")


def vqc_gates(spec: VqcSpec, params, features) -> list[Gate]:
    """Encoding prefix then ``n_layers`` x (Rot on every qubit, CNOT ring).

    ``params`` has shape ``(P,)`` or ``(B, P)`` and ``features`` ``(n,)`` or
    ``(B, n)``; with batched inputs the gate angles are arrays.
    """
    n = spec.n_qubits
    params = np.asarray(params, dtype=float)
    features = np.asarray(features, dtype=float)
    gates = [RX(q, features[..., q]) for q in range(n)]
    for layer in range(spec.n_layers):
        for q in range(n):
            k = 3 * (layer * n + q)
            gates.append(Rot(q, params[..., k], params[..., k + 1], params[..., k + 2]))
        if n > 1:
            gates.extend(CNOT(q, (q + 1) % n) for q in range(n))
    return gates


def build_vqc(spec: VqcSpec, params, features) -> Circuit:
    _check_lengths(spec, params, features)
    params = [float(v) for v in np.asarray(params).reshape(-1)]
    circuit = Circuit(spec.n_qubits, angle_encode(features, spec.n_qubits))
    circuit.extend(vqc_gates(spec, params, np.zeros(spec.n_qubits))[spec.n_qubits:])
    return circuit


def _noise_factor(noise: NoiseSpec | None) -> float:
    if noise is not None and noise.channel == "depolarizing":
        return 1.0 - noise.p
    return 1.0


def _states(spec: VqcSpec, params: np.ndarray, features: np.ndarray) -> np.ndarray:
    rows = features.shape[0]
    init = np.zeros((rows, 2 ** spec.n_qubits), dtype=complex)
    init[:, 0] = 1.0
    return evolve(init, vqc_gates(spec, params, features), spec.n_qubits)


def vqc_expectations(spec: VqcSpec, params, features, noise: NoiseSpec | None = None,
                     shots: int | None = None, rng: np.random.Generator | None = None) -> np.ndarray:
    """Per-qubit <Z> for a batch of feature rows, shape ``(B, n_qubits)``."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    params = np.asarray(params, dtype=float)
    _check_lengths(spec, params, features)
    amps = _states(spec, params, features)
    if shots is None:
        expvals = z_expectations(amps, spec.n_qubits)
    else:
        expvals = shot_z_expectations(amps, spec.n_qubits, shots, rng or np.random.default_rng(0))
    factor = _noise_factor(noise)
    return expvals if factor == 1.0 else factor * expvals


def vqc_forward(spec: VqcSpec, params, features, shots: int | None = None,
                noise: NoiseSpec | None = None, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed) if shots is not None else None
    return vqc_expectations(spec, params, np.asarray(features, dtype=float)[None, :],
                            noise=noise, shots=shots, rng=rng)[0]


def vqc_jacobians(spec: VqcSpec, params, features, noise: NoiseSpec | None = None,
                  wrt_inputs: bool = True):
    """Expectations plus parameter-shift Jacobians for a feature batch.

    Returns ``(E, J_params, J_inputs)`` with shapes ``(B, n)``, ``(B, n, P)``
    and ``(B, n, n)`` (``J_inputs`` is None unless requested).  All shifted
    circuits are evaluated in a single batched pass.
    """
    features = np.atleast_2d(np.asarray(features, dtype=float))
    params = np.asarray(params, dtype=float)
    _check_lengths(spec, params, features)
    b, n, p = features.shape[0], spec.n_qubits, spec.n_params
    n_in = n if wrt_inputs else 0
    n_var = 1 + 2 * p + 2 * n_in

    P = np.broadcast_to(params, (n_var, p)).copy()
    F = np.zeros((n_var, n))
    for k in range(p):
        P[1 + 2 * k, k] += SHIFT
        P[2 + 2 * k, k] -= SHIFT
    off = 1 + 2 * p
    for i in range(n_in):
        F[off + 2 * i, i] += SHIFT
        F[off + 2 * i + 1, i] -= SHIFT

    # rows ordered (variant, sample)
    all_p = np.repeat(P, b, axis=0)
    all_f = (F[:, None, :] + features[None, :, :]).reshape(-1, n)
    amps = _states(spec, all_p, all_f)
    ev = z_expectations(amps, n).reshape(n_var, b, n) * _noise_factor(noise)

    expvals = ev[0]
    plus, minus = ev[1:off:2], ev[2:off:2]
    j_params = np.transpose((plus - minus) / 2, (1, 2, 0))
    j_inputs = None
    if wrt_inputs:
        plus, minus = ev[off::2], ev[off + 1::2]
        j_inputs = np.transpose((plus - minus) / 2, (1, 2, 0))
    return expvals, j_params, j_inputs


def parameter_shift_grad(spec: VqcSpec, params, features, weights,
                         shots: int | None = None, noise: NoiseSpec | None = None) -> np.ndarray:
    """Gradient of ``sum_q weights[q] * <Z_q>`` with respect to the ansatz angles."""
    if shots is not None:
        raise UnsupportedModeError("parameter-shift gradients are analytic-only; drop `shots`")
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (spec.n_qubits,):
        raise ValueError(f"weights must have length {spec.n_qubits}")
    _, jac, _ = vqc_jacobians(spec, params, np.asarray(features, dtype=float)[None, :],
                              noise=noise, wrt_inputs=False)
    return weights @ jac[0]


def sgd_step(params, grads, lr: float) -> np.ndarray:
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape:
        raise ValueError(f"params {params.shape} and grads {grads.shape} differ in shape")
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    return params - lr * grads


# ---------------------------------------------------------------------------
# losses

def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def loss_and_dlogits(logits: np.ndarray, y: np.ndarray, n_classes: int):
    """Mean logistic (binary, one logit) or softmax cross-entropy loss."""
    y = np.asarray(y, dtype=int)
    b = logits.shape[0]
    if n_classes == 2:
        z = logits[:, 0]
        loss = np.mean(np.logaddexp(0.0, z) - y * z)
        d = ((_sigmoid(z) - y) / b)[:, None]
        return float(loss), d
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -np.mean(logp[np.arange(b), y])
    d = np.exp(logp)
    d[np.arange(b), y] -= 1.0
    return float(loss), d / b


def class_scores(logits: np.ndarray, n_classes: int):
    """(predicted labels, positive-class score) from a logit batch."""
    if n_classes == 2:
        s = _sigmoid(logits[:, 0])
        return (logits[:, 0] > 0).astype(int), s
    shifted = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    return probs.argmax(axis=1), probs[:, 1]


def _n_out(n_classes: int) -> int:
    if n_classes < 2:
        raise ValueError("need at least two classes")
    return 1 if n_classes == 2 else n_classes


# ---------------------------------------------------------------------------
# classifiers

@dataclass
class VqcClassifier:
    """Pure quantum model: logits are scaled <Z> of the first qubit(s).

    Only the ansatz angles are trainable, so ``n_params == 3 * n * L``.
    """
    spec: VqcSpec
    n_classes: int = 2
    readout_scale: float = 3.0
    noise: NoiseSpec | None = None

    def __post_init__(self):
        if _n_out(self.n_classes) > self.spec.n_qubits:
            raise ValueError("pure VQC readout needs one qubit per class logit")

    @property
    def n_params(self) -> int:
        return self.spec.n_params

    @property
    def n_features(self) -> int:
        return self.spec.n_qubits

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-INIT_SCALE, INIT_SCALE, self.n_params)

    def expectations(self, params, X, shots=None, rng=None) -> np.ndarray:
        return vqc_expectations(self.spec, params, X, noise=self.noise, shots=shots, rng=rng)

    def logits(self, params, X, shots=None, rng=None) -> np.ndarray:
        ev = self.expectations(params, X, shots, rng)
        return self.readout_scale * ev[:, : _n_out(self.n_classes)]

    def loss_and_grad(self, params, X, y):
        ev, jac, _ = vqc_jacobians(self.spec, params, X, noise=self.noise, wrt_inputs=False)
        k = _n_out(self.n_classes)
        loss, dlog = loss_and_dlogits(self.readout_scale * ev[:, :k], y, self.n_classes)
        grad = self.readout_scale * np.einsum("bk,bkp->p", dlog, jac[:, :k, :])
        return loss, grad


@dataclass
class HybridClassifier:
    """Classical projection -> VQC -> affine head.

    Flat layout: projection (in_features x n_qubits), ansatz angles,
    head weights (n_qubits x n_out), head bias (n_out).
    """
    in_features: int
    spec: VqcSpec
    n_classes: int = 2
    noise: NoiseSpec | None = None

    @property
    def n_out(self) -> int:
        return _n_out(self.n_classes)

    @property
    def n_features(self) -> int:
        return self.in_features

    @property
    def n_params(self) -> int:
        n = self.spec.n_qubits
        return self.in_features * n + self.spec.n_params + n * self.n_out + self.n_out

    def unpack(self, params):
        params = np.asarray(params, dtype=float)
        if params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {params.shape}")
        n, d, k = self.spec.n_qubits, self.in_features, self.n_out
        i = 0
        proj = params[i:i + d * n].reshape(d, n); i += d * n
        theta = params[i:i + self.spec.n_params]; i += self.spec.n_params
        w = params[i:i + n * k].reshape(n, k); i += n * k
        return proj, theta, w, params[i:i + k]

    def pack(self, proj, theta, w, b) -> np.ndarray:
        return np.concatenate([np.ravel(proj), np.ravel(theta), np.ravel(w), np.ravel(b)])

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-INIT_SCALE, INIT_SCALE, self.n_params)

    def project(self, params, X) -> np.ndarray:
        proj, *_ = self.unpack(params)
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.in_features:
            raise ValueError(f"expected {self.in_features} input features, got {X.shape[1]}")
        return X @ proj

    def logits(self, params, X, shots=None, rng=None) -> np.ndarray:
        _, theta, w, b = self.unpack(params)
        ev = vqc_expectations(self.spec, theta, self.project(params, X), noise=self.noise,
                              shots=shots, rng=rng)
        return ev @ w + b

    def loss_and_grad(self, params, X, y):
        proj, theta, w, b = self.unpack(params)
        X = np.atleast_2d(np.asarray(X, dtype=float))
        angles = self.project(params, X)
        ev, j_theta, j_in = vqc_jacobians(self.spec, theta, angles, noise=self.noise)
        loss, dlog = loss_and_dlogits(ev @ w + b, y, self.n_classes)
        d_ev = dlog @ w.T
        d_angles = np.einsum("bq,bqi->bi", d_ev, j_in)
        grad = self.pack(X.T @ d_angles, np.einsum("bq,bqp->p", d_ev, j_theta),
                         ev.T @ dlog, dlog.sum(axis=0))
        return loss, grad


# ---------------------------------------------------------------------------
# recurrent models

GATE_NAMES = ("forget", "input", "update", "output")


@dataclass
class _QuantumGate:
    """v -> W_out^T VQC(v W_in) + b_out."""
    in_dim: int
    hidden: int
    spec: VqcSpec
    noise: NoiseSpec | None = None

    @property
    def n_params(self):
        n = self.spec.n_qubits
        return self.in_dim * n + self.spec.n_params + n * self.hidden + self.hidden

    def split(self, p):
        n, d, h = self.spec.n_qubits, self.in_dim, self.hidden
        i = 0
        w_in = p[i:i + d * n].reshape(d, n); i += d * n
        theta = p[i:i + self.spec.n_params]; i += self.spec.n_params
        w_out = p[i:i + n * h].reshape(n, h); i += n * h
        return w_in, theta, w_out, p[i:i + h]

    def forward(self, p, v, need_grad):
        w_in, theta, w_out, b_out = self.split(p)
        angles = v @ w_in
        if need_grad:
            ev, j_theta, j_in = vqc_jacobians(self.spec, theta, angles, noise=self.noise)
            cache = (v, ev, j_theta, j_in)
        else:
            ev = vqc_expectations(self.spec, theta, angles, noise=self.noise)
            cache = None
        return ev @ w_out + b_out, cache

    def backward(self, p, cache, dpre):
        w_in, _, w_out, _ = self.split(p)
        v, ev, j_theta, j_in = cache
        d_ev = dpre @ w_out.T
        d_angles = np.einsum("bq,bqi->bi", d_ev, j_in)
        grad = np.concatenate([
            (v.T @ d_angles).ravel(),
            np.einsum("bq,bqp->p", d_ev, j_theta),
            (ev.T @ dpre).ravel(),
            dpre.sum(axis=0),
        ])
        return grad, d_angles @ w_in.T


@dataclass
class _LinearGate:
    in_dim: int
    hidden: int

    @property
    def n_params(self):
        return self.in_dim * self.hidden + self.hidden

    def split(self, p):
        k = self.in_dim * self.hidden
        return p[:k].reshape(self.in_dim, self.hidden), p[k:]

    def forward(self, p, v, need_grad):
        w, b = self.split(p)
        return v @ w + b, v

    def backward(self, p, v, dpre):
        w, _ = self.split(p)
        return np.concatenate([(v.T @ dpre).ravel(), dpre.sum(axis=0)]), dpre @ w.T


@dataclass
class _Recurrent:
    """LSTM recurrence with pluggable gate blocks and a last-step affine head."""
    input_dim: int
    hidden_dim: int
    seq_len: int
    n_classes: int
    blocks: tuple = field(init=False, repr=False)

    @property
    def n_out(self):
        return _n_out(self.n_classes)

    @property
    def n_params(self):
        return sum(b.n_params for b in self.blocks) + self.hidden_dim * self.n_out + self.n_out

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-INIT_SCALE, INIT_SCALE, self.n_params)

    def _split(self, params):
        params = np.asarray(params, dtype=float)
        if params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {params.shape}")
        parts, i = [], 0
        for blk in self.blocks:
            parts.append(params[i:i + blk.n_params])
            i += blk.n_params
        h, k = self.hidden_dim, self.n_out
        w = params[i:i + h * k].reshape(h, k)
        return parts, w, params[i + h * k:]

    def _check_input(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 2:
            X = X[None]
        if X.ndim != 3 or X.shape[1] != self.seq_len or X.shape[2] != self.input_dim:
            raise ValueError(
                f"expected sequences of shape (B, {self.seq_len}, {self.input_dim}), got {X.shape}"
            )
        return X

    def run(self, params, X, need_grad=False):
        X = self._check_input(X)
        parts, w, b = self._split(params)
        n = X.shape[0]
        h = np.zeros((n, self.hidden_dim))
        c = np.zeros((n, self.hidden_dim))
        steps = []
        for t in range(self.seq_len):
            v = np.concatenate([X[:, t, :], h], axis=1)
            pres, caches = [], []
            for blk, p in zip(self.blocks, parts):
                pre, cache = blk.forward(p, v, need_grad)
                pres.append(pre)
                caches.append(cache)
            f, i, o = _sigmoid(pres[0]), _sigmoid(pres[1]), _sigmoid(pres[3])
            g = np.tanh(pres[2])
            c_prev = c
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h = o * tc
            steps.append((caches, f, i, g, o, c_prev, tc))
        return h @ w + b, h, steps

    def hidden_states(self, params, X) -> list[np.ndarray]:
        X = self._check_input(X)
        parts, _, _ = self._split(params)
        hs = []
        h = np.zeros((X.shape[0], self.hidden_dim))
        c = np.zeros_like(h)
        for t in range(self.seq_len):
            v = np.concatenate([X[:, t, :], h], axis=1)
            pres = [blk.forward(p, v, False)[0] for blk, p in zip(self.blocks, parts)]
            c = _sigmoid(pres[0]) * c + _sigmoid(pres[1]) * np.tanh(pres[2])
            h = _sigmoid(pres[3]) * np.tanh(c)
            hs.append(h)
        return hs

    def logits(self, params, X, shots=None, rng=None) -> np.ndarray:
        if shots is not None:
            raise UnsupportedModeError("recurrent models evaluate analytically only")
        return self.run(params, X)[0]

    def loss_and_grad(self, params, X, y):
        parts, w, _ = self._split(params)
        logits, h_last, steps = self.run(params, X, need_grad=True)
        loss, dlog = loss_and_dlogits(logits, y, self.n_classes)
        grads = [np.zeros_like(p) for p in parts]
        dh = dlog @ w.T
        dc = np.zeros_like(dh)
        d = self.input_dim
        for caches, f, i, g, o, c_prev, tc in reversed(steps):
            do = dh * tc
            dc = dc + dh * o * (1.0 - tc ** 2)
            df, di, dg = dc * c_prev, dc * g, dc * i
            dpres = (df * f * (1 - f), di * i * (1 - i), dg * (1 - g ** 2), do * o * (1 - o))
            dv = 0.0
            for k, (blk, p, cache) in enumerate(zip(self.blocks, parts, caches)):
                gp, gv = blk.backward(p, cache, dpres[k])
                grads[k] += gp
                dv = dv + gv
            dh = dv[:, d:]
            dc = dc * f
        return loss, np.concatenate(grads + [(h_last.T @ dlog).ravel(), dlog.sum(axis=0)])


@dataclass
class QlstmClassifier(_Recurrent):
    """LSTM whose forget/input/update/output networks are VQCs.

    Each gate sends ``concat(x_t, h_{t-1})`` through its own linear map into
    VQC angles; an affine map takes the ``n_qubits`` expectations back to
    ``hidden_dim``.  Output is read at the last step.
    """
    spec: VqcSpec = field(default_factory=lambda: VqcSpec(4, 2))
    noise: NoiseSpec | None = None

    def __post_init__(self):
        _n_out(self.n_classes)
        in_dim = self.input_dim + self.hidden_dim
        self.blocks = tuple(_QuantumGate(in_dim, self.hidden_dim, self.spec, self.noise)
                            for _ in GATE_NAMES)

    @property
    def n_features(self):
        return self.input_dim

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        # near-zero angles sit where <Z> = cos(angle) is flat, and three small
        # factors in a row (W_in, W_out, head) starve the gradient
        p = rng.uniform(-QLSTM_CLASSICAL_SCALE, QLSTM_CLASSICAL_SCALE, self.n_params)
        offset = (self.input_dim + self.hidden_dim) * self.spec.n_qubits
        for sl in self.gate_slices().values():
            start = sl.start + offset
            p[start:start + self.spec.n_params] = rng.uniform(-np.pi, np.pi, self.spec.n_params)
        return p

    def gate_slices(self) -> dict[str, slice]:
        out, i = {}, 0
        for name, blk in zip(GATE_NAMES, self.blocks):
            out[name] = slice(i, i + blk.n_params)
            i += blk.n_params
        return out


@dataclass
class LstmClassifier(_Recurrent):
    """Classical LSTM baseline with affine gate networks."""

    def __post_init__(self):
        _n_out(self.n_classes)
        in_dim = self.input_dim + self.hidden_dim
        self.blocks = tuple(_LinearGate(in_dim, self.hidden_dim) for _ in GATE_NAMES)

    @property
    def n_features(self):
        return self.input_dim


def qlstm_forward(model: QlstmClassifier, params, sequence) -> np.ndarray:
    """Head output for one sequence of shape ``(seq_len, input_dim)``."""
    seq = np.asarray(sequence, dtype=float)
    if seq.ndim != 2 or seq.shape[0] != model.seq_len:
        raise ValueError(f"sequence must have {model.seq_len} steps, got shape {seq.shape}")
    return model.logits(params, seq[None])[0]


def hybrid_forward(model: HybridClassifier, params, features) -> np.ndarray:
    return model.logits(params, np.asarray(features, dtype=float)[None, :])[0]
