import numpy as np
import pytest

from uncertainRL.base import PreconditionError, TrainingDivergenceError
from uncertainRL.dense_network import (
    AdamState,
    DenseNet,
    adam_step,
    load_checkpoint,
    save_checkpoint,
)


def _central_difference(f, array, index, h=1e-5):
    original = array[index]
    array[index] = original + h
    up = f()
    array[index] = original - h
    down = f()
    array[index] = original
    return (up - down) / (2 * h)


def _random_net(rng):
    n_layers = rng.randint(1, 4)
    widths = list(rng.randint(1, 6, size=n_layers + 1))
    hidden = list(rng.choice(["tanh", "identity"], size=n_layers - 1))
    return DenseNet(widths, hidden + ["identity"], random_state=rng)


def test_backward_matches_finite_differences():
    rng = np.random.RandomState(0)
    for _ in range(50):
        net = _random_net(rng)
        X = rng.normal(size=(4, net.n_inputs))
        upstream = rng.normal(size=(4, net.n_outputs))

        def loss():
            return float(np.sum(net.forward(X) * upstream))

        grads, input_grad = net.backward(X, upstream)
        for param, grad in zip(net.params, grads):
            for _ in range(3):
                index = tuple(rng.randint(s) for s in param.shape)
                numeric = _central_difference(loss, param, index)
                assert np.isclose(grad[index], numeric, rtol=1e-4, atol=1e-8)
        for _ in range(3):
            index = (rng.randint(4), rng.randint(net.n_inputs))
            numeric = _central_difference(loss, X, index)
            assert np.isclose(input_grad[index], numeric, rtol=1e-4, atol=1e-8)


def test_forward_single_row_matches_batch():
    net = DenseNet([3, 5, 2], random_state=1)
    X = np.random.RandomState(2).normal(size=(4, 3))
    assert np.allclose(net.forward(X[1]), net.forward(X)[1])
    assert net.forward(X[1]).shape == (2,)


def test_default_activations():
    net = DenseNet([3, 4, 4, 1])
    assert net.activations == ["tanh", "tanh", "identity"]
    assert net.n_layers_ == 3
    assert net.n_params == 3 * 4 + 4 + 4 * 4 + 4 + 4 * 1 + 1


def test_init_is_seeded_and_bounded():
    a = DenseNet([10, 8, 2], random_state=3)
    b = DenseNet([10, 8, 2], random_state=3)
    c = DenseNet([10, 8, 2], random_state=4)
    assert a.checksum() == b.checksum()
    assert a.checksum() != c.checksum()
    assert np.abs(a.coefs_[0]).max() <= 1 / np.sqrt(10)
    assert np.abs(a.coefs_[1]).max() <= 1 / np.sqrt(8)


def test_non_finite_output_raises():
    net = DenseNet([2, 3, 1], random_state=0)
    net.intercepts_[-1][0] = np.inf
    with pytest.raises(TrainingDivergenceError):
        net.forward(np.zeros(2))


def test_adam_first_step():
    params = [np.array([1.0, -2.0])]
    grads = [np.array([0.5, -0.1])]
    state = AdamState(params, lr=0.1)
    params, state = adam_step(params, grads, state)
    # first bias-corrected step moves every entry by lr against the gradient sign
    assert np.allclose(params[0], [0.9, -1.9], atol=1e-6)
    assert state.t == 1
    assert np.allclose(state.m[0], 0.1 * grads[0])
    assert np.allclose(state.v[0], 0.001 * grads[0] ** 2)


def test_adam_zero_gradient_keeps_params():
    params = [np.array([[1.0, 2.0], [3.0, 4.0]])]
    before = params[0].copy()
    state = AdamState(params, lr=0.01)
    state.step(params, [np.zeros((2, 2))])
    assert np.array_equal(params[0], before)


def test_adam_two_steps_match_hand_recurrence():
    lr, beta1, beta2, eps = 0.01, 0.9, 0.999, 1e-8
    params = [np.array([0.3, -0.7, 1.2])]
    g1 = np.array([0.2, -0.4, 0.05])
    g2 = np.array([-0.1, -0.3, 0.5])
    state = AdamState(params, lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    expected = params[0].copy()
    m = np.zeros(3)
    v = np.zeros(3)
    for t, g in enumerate([g1, g2], 1):
        state.step(params, [g])
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g**2
        lr_t = lr * np.sqrt(1 - beta2**t) / (1 - beta1**t)
        expected = expected - lr_t * m / (np.sqrt(v) + eps)
        assert np.allclose(params[0], expected, rtol=1e-12, atol=1e-15)


def test_adam_rejects_non_finite_gradient():
    params = [np.zeros(2)]
    state = AdamState(params)
    with pytest.raises(TrainingDivergenceError):
        state.step(params, [np.array([np.nan, 0.0])])


def test_adam_learning_rate_is_mutable():
    params = [np.zeros(1)]
    state = AdamState(params, lr=0.1)
    state.lr = 0.5
    state.step(params, [np.ones(1)])
    assert np.allclose(params[0], [-0.5], atol=1e-6)


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    net = DenseNet([4, 6, 3], ["relu", "identity"], random_state=5)
    path = tmp_path / "net.bin"
    save_checkpoint(net, path)
    loaded = load_checkpoint(path)
    assert loaded.layer_widths == net.layer_widths
    assert loaded.activations == net.activations
    for a, b in zip(net.params, loaded.params):
        assert np.array_equal(a, b)
    assert loaded.checksum() == net.checksum()


def test_checkpoints_concatenate():
    first = DenseNet([2, 3, 1], random_state=0)
    second = DenseNet([3, 2], random_state=1)
    data = first.to_bytes() + second.to_bytes()
    a, offset = DenseNet.from_bytes(data)
    b, end = DenseNet.from_bytes(data, offset)
    assert end == len(data)
    assert a.checksum() == first.checksum()
    assert b.checksum() == second.checksum()


def test_missing_checkpoint(tmp_path):
    with pytest.raises(PreconditionError):
        load_checkpoint(tmp_path / "absent.bin")


def test_forward_hand_cases():
    net = DenseNet([2, 2], ["identity"], random_state=0)
    net.coefs_[0][:] = np.eye(2)
    net.intercepts_[0][:] = 0.0
    assert np.array_equal(net.forward([1.0, 2.0]), [1.0, 2.0])

    net = DenseNet([1, 1], ["tanh"], random_state=0)
    net.coefs_[0][:] = 0.0
    net.intercepts_[0][:] = 0.0
    assert net.forward([5.0])[0] == 0.0

    net = DenseNet([2, 2, 1], ["tanh", "identity"], random_state=0)
    net.coefs_[0][:] = [[1.0, 0.0], [0.5, -1.0]]
    net.intercepts_[0][:] = [0.1, 0.0]
    net.coefs_[1][:] = [[2.0], [1.0]]
    net.intercepts_[1][:] = [0.5]
    expected = 2.0 * np.tanh(2.1) + np.tanh(-2.0) + 0.5
    assert np.isclose(net.forward([1.0, 2.0])[0], expected, rtol=1e-12)


def test_backward_hand_cases():
    net = DenseNet([3, 2], ["identity"], random_state=0)
    upstream = np.array([[1.0, -2.0]])
    _, input_grad = net.backward(np.ones((1, 3)), upstream)
    assert np.allclose(input_grad, upstream @ net.coefs_[0].T)

    net = DenseNet([3, 4, 2], random_state=1)
    grads, input_grad = net.backward(np.ones((2, 3)), np.zeros((2, 2)))
    assert all(not np.any(g) for g in grads)
    assert not np.any(input_grad)
