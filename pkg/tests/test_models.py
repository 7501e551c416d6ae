import numpy as np
import pytest

from oracles import noisy_vqc_expectations
from oracles import vqc_expectations as oracle_expectations
from qflab.harness.data import minmax_scale, synth_dataset
from qflab.models import (
    HybridClassifier,
    LstmClassifier,
    QlstmClassifier,
    UnsupportedModeError,
    VqcClassifier,
    VqcSpec,
    build_vqc,
    hybrid_forward,
    parameter_shift_grad,
    qlstm_forward,
    sgd_step,
    vqc_forward,
    vqc_jacobians,
)
from qflab.qsim import NoiseSpec

# expectations computed with the dense kron oracle in tests/oracles.py
FROZEN_2Q_3L = [0.28937387607398435, 0.6795369180490245]
FROZEN_4Q_2L = [0.54866637775266, 0.0499179186199889, 0.19374504791512484, -0.10471536491759598]


def central_difference(fn, params, h=1e-5):
    out = np.empty(params.size)
    for k in range(params.size):
        e = np.zeros(params.size)
        e[k] = h
        out[k] = (fn(params + e) - fn(params - e)) / (2 * h)
    return out


def test_gate_counts_five_qubits_two_layers():
    spec = VqcSpec(5, 2)
    circuit = build_vqc(spec, np.zeros(spec.n_params), np.zeros(5))
    assert len(circuit) == 25
    kinds = [g.kind for g in circuit.gates]
    assert kinds[:5] == ["RX"] * 5
    assert kinds[5:15] == ["Rot"] * 5 + ["CNOT"] * 5
    ring = [(g.control, g.target) for g in circuit.gates[10:15]]
    assert ring == [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)]


def test_zero_layers_is_encoding_only():
    circuit = build_vqc(VqcSpec(3, 0), np.zeros(0), [0.1, 0.2, 0.3])
    assert [g.kind for g in circuit.gates] == ["RX"] * 3


def test_parameter_count():
    assert VqcSpec(4, 2).n_params == 24
    assert VqcSpec(3, 0).n_params == 0


def test_length_mismatch_rejected():
    with pytest.raises(ValueError):
        build_vqc(VqcSpec(2, 1), np.zeros(5), [0, 0])
    with pytest.raises(ValueError):
        vqc_forward(VqcSpec(2, 1), np.zeros(6), [0, 0, 0])


def test_zero_circuit_gives_plus_one():
    spec = VqcSpec(3, 2)
    assert np.array_equal(vqc_forward(spec, np.zeros(spec.n_params), np.zeros(3)), [1, 1, 1])


def test_forward_matches_frozen_oracle_values():
    out = vqc_forward(VqcSpec(2, 3), np.linspace(-1.0, 1.0, 18), [0.3, -0.7])
    assert np.allclose(out, FROZEN_2Q_3L, atol=1e-12)
    out = vqc_forward(VqcSpec(4, 2), np.arange(24) * 0.1 - 1.2, [0.5, -0.25, 1.0, 2.0])
    assert np.allclose(out, FROZEN_4Q_2L, atol=1e-12)


def test_forward_matches_oracle_on_random_instances():
    rng = np.random.default_rng(0)
    for _ in range(10):
        n, layers = int(rng.integers(1, 5)), int(rng.integers(0, 4))
        p = rng.uniform(-np.pi, np.pi, 3 * n * layers)
        x = rng.uniform(-np.pi, np.pi, n)
        assert np.allclose(vqc_forward(VqcSpec(n, layers), p, x), oracle_expectations(p, x, n, layers),
                           atol=1e-12)


def test_shot_estimate_within_binomial_bounds():
    spec = VqcSpec(3, 2)
    rng = np.random.default_rng(1)
    p, x = rng.uniform(-np.pi, np.pi, spec.n_params), rng.uniform(-np.pi, np.pi, 3)
    exact = vqc_forward(spec, p, x)
    shots = 100000
    est = vqc_forward(spec, p, x, shots=shots, seed=5)
    sigma = np.sqrt((1 - exact ** 2) / shots)
    assert np.all(np.abs(est - exact) <= 3 * sigma + 1e-12)
    assert np.array_equal(est, vqc_forward(spec, p, x, shots=shots, seed=5))


def test_depolarizing_halves_output():
    spec = VqcSpec(3, 2)
    rng = np.random.default_rng(2)
    p, x = rng.uniform(-1, 1, spec.n_params), rng.uniform(-1, 1, 3)
    clean = vqc_forward(spec, p, x)
    assert np.array_equal(vqc_forward(spec, p, x, noise=NoiseSpec("depolarizing", 0.5)), 0.5 * clean)


@pytest.mark.parametrize("channel", ["depolarizing", "dephasing"])
@pytest.mark.parametrize("strength", [0.0, 0.2, 0.5, 1.0])
def test_noise_matches_density_matrix_oracle(channel, strength):
    spec = VqcSpec(3, 2)
    rng = np.random.default_rng(6)
    p, x = rng.uniform(-np.pi, np.pi, spec.n_params), rng.uniform(-np.pi, np.pi, 3)
    got = vqc_forward(spec, p, x, noise=NoiseSpec(channel, strength))
    want = noisy_vqc_expectations(p, x, 3, 2, channel, strength)
    assert np.max(np.abs(got - want)) < 1e-12


def test_shift_gradient_closed_form():
    # <Z> = cos(phi) after RX(phi); phi carried by the Rot's first angle
    spec = VqcSpec(1, 1)
    grad = parameter_shift_grad(spec, np.array([np.pi / 2, 0.0, 0.0]), [0.0], [1.0])
    assert abs(grad[0] + 1.0) < 1e-12
    assert np.allclose(grad[1:], 0.0, atol=1e-12)


def test_shift_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    for _ in range(20):
        spec = VqcSpec(int(rng.integers(1, 5)), int(rng.integers(1, 4)))
        p = rng.uniform(-np.pi, np.pi, spec.n_params)
        x = rng.uniform(-np.pi, np.pi, spec.n_qubits)
        w = rng.standard_normal(spec.n_qubits)
        fd = central_difference(lambda q: w @ vqc_forward(spec, q, x), p)
        assert np.max(np.abs(parameter_shift_grad(spec, p, x, w) - fd)) < 1e-5


def test_input_jacobian_matches_finite_differences():
    spec = VqcSpec(3, 2)
    rng = np.random.default_rng(4)
    p, x = rng.uniform(-np.pi, np.pi, spec.n_params), rng.uniform(-np.pi, np.pi, 3)
    _, _, j_in = vqc_jacobians(spec, p, x[None, :])
    for q in range(3):
        fd = central_difference(lambda z: vqc_forward(spec, p, z)[q], x)
        assert np.max(np.abs(j_in[0, q] - fd)) < 1e-8


def test_shift_gradient_edge_cases():
    assert parameter_shift_grad(VqcSpec(2, 0), np.zeros(0), [0.1, 0.2], [1, 1]).size == 0
    with pytest.raises(UnsupportedModeError):
        parameter_shift_grad(VqcSpec(1, 1), np.zeros(3), [0.0], [1.0], shots=100)


def test_sgd_step_examples():
    assert np.array_equal(sgd_step([1.0, 2.0], [3.0, 4.0], 0.0), [1.0, 2.0])
    assert np.array_equal(sgd_step([1.0], [2.0], 0.5), [0.0])
    with pytest.raises(ValueError):
        sgd_step([1.0, 2.0], [1.0], 0.1)


def test_sgd_scalar_descent():
    theta = np.array([0.0])
    for _ in range(50):
        theta = sgd_step(theta, 2 * (theta - 2.0), 0.1)
    assert abs(theta[0] - 2.0) < 1e-3


# ---------------------------------------------------------------------------
# classifiers

def reference_qlstm(model, params, seq):
    """Scalar-loop forward pass built on the kron oracle."""
    d, hdim, spec = model.input_dim, model.hidden_dim, model.spec
    n, L = spec.n_qubits, spec.n_layers
    blocks, i = [], 0
    for _ in range(4):
        w_in = params[i:i + (d + hdim) * n].reshape(d + hdim, n); i += (d + hdim) * n
        theta = params[i:i + 3 * n * L]; i += 3 * n * L
        w_out = params[i:i + n * hdim].reshape(n, hdim); i += n * hdim
        b_out = params[i:i + hdim]; i += hdim
        blocks.append((w_in, theta, w_out, b_out))
    head_w = params[i:i + hdim * model.n_out].reshape(hdim, model.n_out); i += hdim * model.n_out
    head_b = params[i:]
    sig = lambda z: 1.0 / (1.0 + np.exp(-z))
    h, c = np.zeros(hdim), np.zeros(hdim)
    for x in seq:
        v = np.concatenate([x, h])
        pre = []
        for w_in, theta, w_out, b_out in blocks:
            ev = oracle_expectations(theta, v @ w_in, n, L)
            pre.append(ev @ w_out + b_out)
        f, ig, g, o = sig(pre[0]), sig(pre[1]), np.tanh(pre[2]), sig(pre[3])
        c = f * c + ig * g
        h = o * np.tanh(c)
    return h @ head_w + head_b


def test_qlstm_zero_params_reference():
    model = QlstmClassifier(2, 2, 3, 2, VqcSpec(2, 1))
    params = np.zeros(model.n_params)
    seq = np.zeros((3, 2))
    assert np.allclose(qlstm_forward(model, params, seq), reference_qlstm(model, params, seq), atol=1e-12)


def test_qlstm_random_params_reference():
    rng = np.random.default_rng(5)
    model = QlstmClassifier(2, 3, 4, 3, VqcSpec(2, 2))
    params = rng.uniform(-1, 1, model.n_params)
    seq = rng.uniform(-np.pi, np.pi, (4, 2))
    assert np.allclose(qlstm_forward(model, params, seq), reference_qlstm(model, params, seq), atol=1e-12)


def test_qlstm_single_step_is_one_cell():
    rng = np.random.default_rng(6)
    model = QlstmClassifier(1, 2, 1, 2, VqcSpec(2, 1))
    params = rng.uniform(-1, 1, model.n_params)
    seq = np.array([[0.4]])
    assert np.allclose(qlstm_forward(model, params, seq), reference_qlstm(model, params, seq), atol=1e-12)


def test_qlstm_hidden_states_bounded():
    rng = np.random.default_rng(7)
    model = QlstmClassifier(2, 3, 5, 2, VqcSpec(3, 1))
    params = rng.uniform(-5, 5, model.n_params)
    for h in model.hidden_states(params, rng.uniform(-10, 10, (8, 5, 2))):
        assert np.all(np.abs(h) < 1.0)


def test_qlstm_structure_and_errors():
    model = QlstmClassifier(2, 3, 4, 2, VqcSpec(2, 2))
    blocks = model.gate_slices()
    assert list(blocks) == ["forget", "input", "update", "output"]
    sizes = {s.stop - s.start for s in blocks.values()}
    assert sizes == {5 * 2 + 12 + 2 * 3 + 3}
    assert model.n_params == 4 * 31 + 3 * 1 + 1
    with pytest.raises(ValueError):
        qlstm_forward(model, np.zeros(model.n_params), np.zeros((3, 2)))
    with pytest.raises(UnsupportedModeError):
        model.logits(np.zeros(model.n_params), np.zeros((1, 4, 2)), shots=10)


@pytest.mark.parametrize("model", [
    QlstmClassifier(2, 2, 3, 2, VqcSpec(2, 1)),
    QlstmClassifier(1, 2, 2, 3, VqcSpec(2, 1)),
    LstmClassifier(2, 3, 3, 2),
    HybridClassifier(5, VqcSpec(3, 2), 2),
    HybridClassifier(4, VqcSpec(2, 1), 3),
    VqcClassifier(VqcSpec(3, 2), 2),
    VqcClassifier(VqcSpec(3, 1), 3),
])
def test_loss_gradients_match_finite_differences(model):
    rng = np.random.default_rng(8)
    params = rng.uniform(-1, 1, model.n_params)
    if hasattr(model, "seq_len"):
        X = rng.uniform(-np.pi, np.pi, (6, model.seq_len, model.input_dim))
    else:
        X = rng.uniform(-np.pi, np.pi, (6, model.n_features))
    y = rng.integers(0, model.n_classes, 6)
    _, grad = model.loss_and_grad(params, X, y)
    fd = central_difference(lambda p: model.loss_and_grad(p, X, y)[0], params)
    assert np.max(np.abs(grad - fd)) < 1e-6


def test_hybrid_collapses_to_vqc():
    spec = VqcSpec(3, 2)
    model = HybridClassifier(3, spec, n_classes=3)
    rng = np.random.default_rng(9)
    theta = rng.uniform(-np.pi, np.pi, spec.n_params)
    params = model.pack(np.eye(3), theta, np.eye(3), np.zeros(3))
    x = rng.uniform(-np.pi, np.pi, 3)
    assert np.allclose(hybrid_forward(model, params, x), vqc_forward(spec, theta, x), atol=1e-14)


def test_hybrid_wide_projection():
    model = HybridClassifier(120, VqcSpec(9, 1), n_classes=2)
    rng = np.random.default_rng(10)
    params = model.init_params(rng)
    X = rng.standard_normal((2, 120))
    assert model.project(params, X).shape == (2, 9)
    assert hybrid_forward(model, params, X[0]).shape == (1,)


def test_logits_length_equals_class_count():
    rng = np.random.default_rng(11)
    model = HybridClassifier(4, VqcSpec(2, 1), n_classes=5)
    assert hybrid_forward(model, model.init_params(rng), np.zeros(4)).shape == (5,)
    with pytest.raises(ValueError):
        hybrid_forward(model, np.zeros(3), np.zeros(4))


def test_expectations_bounded():
    model = VqcClassifier(VqcSpec(4, 3))
    rng = np.random.default_rng(12)
    ev = model.expectations(rng.uniform(-9, 9, model.n_params), rng.uniform(-9, 9, (50, 4)))
    assert np.all(np.abs(ev) <= 1.0 + 1e-12)


def test_forward_is_deterministic():
    model = HybridClassifier(4, VqcSpec(2, 2))
    params = model.init_params(np.random.default_rng(13))
    X = np.random.default_rng(14).standard_normal((5, 4))
    assert np.array_equal(model.logits(params, X), model.logits(params, X))


def test_init_is_small_and_seeded():
    model = VqcClassifier(VqcSpec(4, 2))
    a = model.init_params(np.random.default_rng(0))
    assert np.array_equal(a, model.init_params(np.random.default_rng(0)))
    assert np.all(np.abs(a) <= 0.1)


def test_one_epoch_decreases_training_loss():
    data = minmax_scale(synth_dataset("blobs", 200, seed=3, n_features=4, separation=6.0))
    model = VqcClassifier(VqcSpec(4, 2))
    params = model.init_params(np.random.default_rng(0))
    before, _ = model.loss_and_grad(params, data.X, data.y)
    order = np.random.default_rng(1).permutation(len(data))
    for start in range(0, len(data), 16):
        batch = order[start:start + 16]
        _, grad = model.loss_and_grad(params, data.X[batch], data.y[batch])
        params = sgd_step(params, grad, 0.1)
    after, _ = model.loss_and_grad(params, data.X, data.y)
    assert after < before


def test_pure_vqc_needs_enough_qubits_for_classes():
    with pytest.raises(ValueError):
        VqcClassifier(VqcSpec(2, 1), n_classes=3)
