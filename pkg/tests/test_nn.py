import math

import numpy as np
import pytest

from c3sl.data import make_blobs, iterate_batches
from c3sl.errors import ContractViolation, InvalidArgument, NumericError
from c3sl.nn import (Adam, DenseLayer, Network, SplitModel, build_network, forward_cloud_and_loss,
                     forward_edge, load_checkpoint, save_checkpoint, softmax_cross_entropy)
from oracles import central_diff, rel_err


def test_identity_layer_passes_input_through(rng):
    net = Network([DenseLayer(np.eye(3), np.zeros(3), "none")])
    x = rng.normal(size=(4, 3))
    out, _ = net.forward(x)
    np.testing.assert_array_equal(out, x)


def test_zero_network_gives_zero(rng):
    layers = [DenseLayer(np.zeros((4, 3)), np.zeros(4), "relu"),
              DenseLayer(np.zeros((2, 4)), np.zeros(2), "none")]
    out, _ = Network(layers).forward(rng.normal(size=(5, 3)))
    np.testing.assert_array_equal(out, 0.0)


def test_forward_matches_hand_unrolled(rng):
    net = build_network([2, 4, 3], rng)
    x = rng.normal(size=(5, 2))
    w1, b1 = net.layers[0].weights, net.layers[0].bias
    w2, b2 = net.layers[1].weights, net.layers[1].bias
    expected = np.zeros((5, 3))
    for n in range(5):
        hidden = [max(0.0, sum(w1[j, i] * x[n, i] for i in range(2)) + b1[j]) for j in range(4)]
        for c in range(3):
            expected[n, c] = sum(w2[c, j] * hidden[j] for j in range(4)) + b2[c]
    out, _ = net.forward(x)
    assert rel_err(out, expected) < 1e-12


def test_forward_rejects_width_mismatch(rng):
    net = build_network([3, 2], rng)
    with pytest.raises(InvalidArgument):
        net.forward(np.ones((2, 4)))


def test_forward_edge_shape(rng):
    model = SplitModel.build(6, 8, 3, seed=1)
    z, _ = forward_edge(model, rng.normal(size=(5, 6)))
    assert z.shape == (5, 8)


def test_build_is_deterministic():
    a = SplitModel.build(6, 8, 3, seed=4)
    b = SplitModel.build(6, 8, 3, seed=4)
    assert a.edge.state_bytes() == b.edge.state_bytes()
    assert a.cloud.state_bytes() == b.cloud.state_bytes()


def test_split_model_rejects_width_mismatch(rng):
    with pytest.raises(InvalidArgument):
        SplitModel(build_network([4, 5], rng), build_network([6, 2], rng))


def test_uniform_logits_loss_is_log_c():
    for c in (2, 3, 10):
        loss, _ = softmax_cross_entropy(np.full((7, c), 0.3), np.arange(7) % c)
        assert abs(loss - math.log(c)) < 1e-12


def test_confident_logits_loss_vanishes():
    logits = np.full((3, 4), -50.0)
    labels = np.array([0, 2, 3])
    logits[np.arange(3), labels] = 50.0
    loss, _ = softmax_cross_entropy(logits, labels)
    assert loss < 1e-30


def test_cross_entropy_gradient_finite_differences(rng):
    logits = rng.normal(size=(4, 3))
    labels = np.array([0, 2, 1, 2])
    _, grad = softmax_cross_entropy(logits, labels)
    fd = central_diff(lambda: softmax_cross_entropy(logits, labels)[0], logits)
    assert rel_err(grad, fd) < 1e-6


def test_cloud_gradient_wrt_restored(rng):
    model = SplitModel.build(4, 5, 3, seed=2, cloud_hidden=(6,))
    restored = rng.normal(size=(4, 5))
    labels = np.array([0, 1, 2, 1])
    res = forward_cloud_and_loss(model, restored, labels)

    def loss():
        logits, _ = model.cloud.forward(restored)
        return softmax_cross_entropy(logits, labels)[0]

    assert rel_err(res.grad_input, central_diff(loss, restored)) < 1e-6


def test_every_parameter_gradient_matches_finite_differences(rng):
    net = build_network([3, 5, 4, 2], rng)
    for layer in net.layers:
        # nonzero biases keep pre-activations off the relu kink at 0
        layer.bias[:] = rng.normal(scale=0.5, size=layer.bias.shape)
    x = rng.normal(size=(6, 3))
    labels = rng.integers(0, 2, size=6)

    def loss():
        out, _ = net.forward(x)
        return softmax_cross_entropy(out, labels)[0]

    out, cache = net.forward(x)
    _, dout = softmax_cross_entropy(out, labels)
    dx, grads = net.backward(cache, dout)
    for p, g in zip(net.parameters(), grads):
        assert rel_err(g, central_diff(loss, p)) < 1e-6
    assert rel_err(dx, central_diff(loss, x)) < 1e-6


def test_labels_out_of_range(rng):
    model = SplitModel.build(4, 5, 3, seed=2)
    with pytest.raises(InvalidArgument):
        forward_cloud_and_loss(model, rng.normal(size=(2, 5)), np.array([0, 3]))


def test_non_finite_activations_rejected():
    model = SplitModel.build(4, 5, 3, seed=2)
    bad = np.zeros((2, 5))
    bad[1, 2] = np.nan
    with pytest.raises(NumericError):
        forward_cloud_and_loss(model, bad, np.array([0, 1]))


def test_adam_hand_trace():
    p = np.array([1.0])
    opt = Adam(lr=0.1)
    expected = [0.900000002, 0.8654394181165108, 0.8275002408356956]
    for g, want in zip([0.5, -0.2, 0.1], expected):
        opt.step([p], [np.array([g])])
        assert p[0] == pytest.approx(want, rel=1e-14)
    assert opt.step_count == 3


def test_adam_zero_gradient_only_advances_counter(rng):
    net = build_network([3, 4], rng)
    before = net.state_bytes()
    net.step([np.zeros_like(p) for p in net.parameters()])
    assert net.state_bytes() == before
    assert net.optimizer.step_count == 1


def test_adam_zero_lr_is_noop(rng):
    net = build_network([3, 4], rng, lr=0.0)
    before = net.state_bytes()
    for _ in range(3):
        net.step([rng.normal(size=p.shape) for p in net.parameters()])
    assert net.state_bytes() == before


def test_stale_cache_rejected(rng):
    net = build_network([3, 2], rng)
    _, cache = net.forward(rng.normal(size=(2, 3)))
    net.backward_and_step(cache, np.ones((2, 2)))
    with pytest.raises(ContractViolation):
        net.backward(cache, np.ones((2, 2)))
    _, old = net.forward(rng.normal(size=(2, 3)))
    _, fresh = net.forward(rng.normal(size=(2, 3)))
    net.backward_and_step(fresh, np.ones((2, 2)))
    with pytest.raises(ContractViolation):
        net.backward(old, np.ones((2, 2)))


def test_forward_is_deterministic(rng):
    net = build_network([3, 8, 2], rng)
    x = rng.normal(size=(4, 3))
    a, _ = net.forward(x)
    b, _ = net.forward(x)
    assert a.tobytes() == b.tobytes()


def test_training_reduces_loss_on_blobs():
    data = make_blobs(num_classes=3, n_train=256, n_test=10, dim=4, separation=6.0, seed=3)
    net = build_network([4, 16, 3], np.random.default_rng(0), lr=1e-2)
    losses = []
    rng = np.random.default_rng(1)
    batches = [b for _ in range(10) for b in iterate_batches(data.x_train, data.y_train, 64, rng)]
    for batch in batches[:50]:
        out, cache = net.forward(batch.data)
        loss, dout = softmax_cross_entropy(out, batch.labels)
        net.backward_and_step(cache, dout)
        losses.append(loss)
    assert losses[-1] < 0.5 * losses[0]


def test_checkpoint_roundtrip(tmp_path, rng):
    net = build_network([3, 5, 2], rng)
    save_checkpoint(net.layers, tmp_path / "m.c3md")
    raw = (tmp_path / "m.c3md").read_bytes()
    assert raw[:4] == b"C3MD"
    assert int.from_bytes(raw[6:8], "little") == 2
    assert len(raw) == 8 + 2 * 9 + 4 * (15 + 5 + 10 + 2)
    back = load_checkpoint(tmp_path / "m.c3md")
    for a, b in zip(net.layers, back):
        assert a.activation == b.activation
        np.testing.assert_array_equal(b.weights, a.weights.astype(np.float32))
        np.testing.assert_array_equal(b.bias, a.bias.astype(np.float32))


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "bad").write_bytes(b"NOPE\x01\x00\x00\x00")
    with pytest.raises(InvalidArgument):
        load_checkpoint(tmp_path / "bad")
