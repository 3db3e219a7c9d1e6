import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import relative_error
from simp.errors import InputError, StructuralError, TrainingError
from simp.network import (
    DenseNet, Layer, Optimizer, OptimizerConfig, clip_gradients, global_norm, sgd_step,
)


def small_net(sizes=(2, 3, 2), seed=0, dropout=0.0):
    return DenseNet.create(sizes, dropout=dropout, seed=seed)


def flat_grads(grads):
    return np.concatenate([np.r_[dw.ravel(), db] for dw, db in grads])


def test_zero_net_gives_zero_output():
    net = small_net((3, 5, 4))
    for layer in net.layers:
        layer.weight[:] = 0.0
        layer.bias[:] = 0.0
    out, _ = net.forward(np.array([1.0, -2.0, 3.5]))
    assert np.array_equal(out, np.zeros(4))


def test_identity_layer_passes_input_through():
    net = DenseNet([Layer(np.eye(3), np.zeros(3), "identity")])
    v = np.array([0.3, -1.2, 7.0])
    out, _ = net.forward(v)
    assert np.array_equal(out, v)


def test_forward_matches_manual_recomputation():
    net = small_net((2, 3, 2), seed=11)
    x = np.array([[0.4, -0.7], [1.5, 0.2]])
    W0, b0 = net.layers[0].weight, net.layers[0].bias
    W1, b1 = net.layers[1].weight, net.layers[1].bias
    expected = np.empty((2, 2))
    for r in range(2):
        hidden = [np.tanh(sum(W0[j, i] * x[r, i] for i in range(2)) + b0[j]) for j in range(3)]
        expected[r] = [sum(W1[k, j] * hidden[j] for j in range(3)) + b1[k] for k in range(2)]
    out, _ = net.forward(x)
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-12)


def test_glorot_limits_and_output_activation():
    net = DenseNet.create((25, 400, 400, 400, 35), seed=3)
    assert [l.activation for l in net.layers] == ["tanh", "tanh", "tanh", "identity"]
    for layer in net.layers:
        limit = np.sqrt(6.0 / (layer.n_in + layer.n_out))
        assert np.abs(layer.weight).max() <= limit
        assert np.all(layer.bias == 0)
    assert net.n_outputs == 35


def test_dimension_mismatch_is_structural():
    with pytest.raises(StructuralError):
        DenseNet([Layer(np.zeros((3, 2)), np.zeros(3)), Layer(np.zeros((2, 4)), np.zeros(2))])
    with pytest.raises(StructuralError):
        small_net().forward(np.zeros(5))


def test_non_finite_input_rejected():
    with pytest.raises(InputError):
        small_net().forward(np.array([np.nan, 0.0]))


def test_tape_from_other_net_rejected():
    a, b = small_net((2, 3, 2)), small_net((2, 4, 2))
    _, tape = a.forward(np.ones(2))
    with pytest.raises(StructuralError):
        b.backward(tape, np.ones(2))


def test_identity_net_gradient_is_outer_product():
    net = DenseNet([Layer(np.eye(3), np.zeros(3), "identity")])
    v = np.array([1.0, 2.0, -1.0])
    g = np.array([0.5, -1.0, 2.0])
    _, tape = net.forward(v)
    (dw, db), = net.backward(tape, g)
    np.testing.assert_array_equal(dw, np.outer(g, v))
    np.testing.assert_array_equal(db, g)


def test_zero_output_grad_gives_zero_gradients():
    net = small_net((4, 8, 7), seed=2)
    _, tape = net.forward(np.random.default_rng(0).normal(size=(5, 4)))
    grads = net.backward(tape, np.zeros((5, 7)))
    assert not np.any(flat_grads(grads))


@pytest.mark.parametrize("seed", range(10))
def test_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    net = small_net((4, 8, 8, 7), seed=seed)
    x = rng.normal(size=(3, 4))
    g = rng.normal(size=(3, 7))
    _, tape = net.forward(x)
    analytic = flat_grads(net.backward(tape, g))

    def objective():
        out, _ = net.forward(x)
        return float(np.sum(g * out))

    h = 1e-5
    numeric = []
    for p in net.parameters():
        flat = p.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = objective()
            flat[i] = old - h
            down = objective()
            flat[i] = old
            numeric.append((up - down) / (2 * h))
    err, denom = relative_error(analytic, numeric)
    limit = np.where(denom < 1e-8, 1e-4, 1e-5)
    assert np.all(err < limit)
    assert np.median(err) < 1e-8


def test_dropout_only_in_train_mode():
    net = small_net((4, 16, 3), dropout=0.5, seed=1)
    x = np.ones(4)
    a, tape_a = net.forward(x, "infer")
    b, _ = net.forward(x, "infer")
    assert np.array_equal(a, b) and tape_a.mask is None
    _, tape = net.forward(x, "train")
    assert set(np.unique(tape.mask)) <= {0.0, 2.0}


def test_dropout_expectation_matches_inference():
    net = small_net((4, 16, 3), dropout=0.5, seed=4)
    x = np.random.default_rng(1).normal(size=4)
    reference, _ = net.forward(x, "infer")
    draws = np.array([net.forward(x, "train")[0] for _ in range(10_000)])
    bias = net.layers[-1].bias
    # compare the dropout-affected part (output minus bias) within 2%
    np.testing.assert_allclose(draws.mean(axis=0) - bias, reference - bias, rtol=0.02, atol=0.02 * np.abs(reference).max())


def test_dropout_mask_enters_backward():
    net = small_net((3, 6, 2), dropout=0.5, seed=5)
    x = np.array([[0.1, 0.2, 0.3]])
    out, tape = net.forward(x, "train")
    grads = net.backward(tape, np.ones_like(out))
    dropped = tape.mask[0] == 0
    assert np.all(grads[-1][0][:, dropped] == 0)


def test_sgd_zero_learning_rate_is_noop():
    net = small_net(seed=3)
    before = [p.copy() for p in net.parameters()]
    _, tape = net.forward(np.ones(2))
    sgd_step(net, net.backward(tape, np.ones(2)), 0.0)
    assert all(np.array_equal(a, b) for a, b in zip(before, net.parameters()))


def test_sgd_scalar_arithmetic():
    net = DenseNet([Layer(np.array([[1.0]]), np.array([0.0]), "identity")])
    sgd_step(net, [(np.array([[2.0]]), np.array([0.0]))], 0.1)
    assert net.layers[0].weight[0, 0] == pytest.approx(0.8, abs=1e-15)


@pytest.mark.parametrize("kind", ["sgd", "adam"])
def test_small_step_decreases_loss(kind):
    rng = np.random.default_rng(0)
    net = small_net((3, 5, 2), seed=9)
    x, y = rng.normal(size=(8, 3)), rng.normal(size=(8, 2))

    def loss():
        return float(np.sum((net.forward(x)[0] - y) ** 2))

    before = loss()
    out, tape = net.forward(x)
    opt = Optimizer(OptimizerConfig(kind=kind, learning_rate=1e-3))
    opt.step(net, net.backward(tape, 2 * (out - y)))
    assert loss() < before


def test_non_finite_gradient_raises_training_error():
    net = small_net()
    grads = [(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in net.layers]
    grads[1][0][0, 0] = np.inf
    with pytest.raises(TrainingError, match="layer 1 weight"):
        Optimizer().step(net, grads)


def test_gradient_clipping():
    grads = [(np.full((2, 2), 3.0), np.full(2, 4.0))]
    clipped, norm = clip_gradients(grads, 5.0)
    assert norm == pytest.approx(np.sqrt(4 * 9 + 2 * 16))
    assert global_norm(clipped) == pytest.approx(5.0)
    same, _ = clip_gradients(grads, 100.0)
    assert same is grads


def test_training_steps_are_deterministic():
    def run():
        net = small_net((3, 6, 2), seed=2, dropout=0.5)
        opt = Optimizer()
        rng = np.random.default_rng(7)
        for _ in range(20):
            x = rng.normal(size=(4, 3))
            out, tape = net.forward(x, "train")
            opt.step(net, net.backward(tape, out))
        return [p.copy() for p in net.parameters()]

    for a, b in zip(run(), run()):
        assert np.array_equal(a, b)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=1, max_size=4), st.floats(0.0, 0.9), st.integers(0, 2**31 - 1))
def test_json_round_trip_is_bit_exact(hidden, dropout, seed):
    net = DenseNet.create((3, *hidden, 2), dropout=dropout, seed=seed)
    text = json.dumps(net.to_dict())
    back = DenseNet.from_dict(json.loads(text))
    assert back.signature == net.signature and back.dropout == net.dropout
    for a, b in zip(net.parameters(), back.parameters()):
        assert np.array_equal(a, b)
    assert json.dumps(back.to_dict()) == text


def test_unknown_format_version_rejected():
    doc = small_net().to_dict()
    doc["format_version"] = 99
    with pytest.raises(StructuralError):
        DenseNet.from_dict(doc)
