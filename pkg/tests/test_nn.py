import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from koastack.dataset import ClassWeights
from koastack.nn import (
    CNNClassifier, LossSpec, Network, OptimizerState, TrainConfig, backward,
    forward, grad_check, output_grad, predict_proba, sgd_momentum_step, train,
    weighted_ce,
)
from koastack.nn.layers import GlobalAvgPool, ShapeError, sigmoid, softmax


def tiny(n_outputs=5, seed=0, channels=(2,)):
    return Network(channels=channels, n_outputs=n_outputs, dense_units=6, dropout=0.0, seed=seed)


def separable(n=20, size=8, seed=0):
    """Bright images are class 1, dark ones class 0."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    X = rng.uniform(0, 0.3, (n, size, size, 1)) + 0.6 * y[:, None, None, None]
    return X, y


def test_zero_head_gives_uniform_softmax(rng):
    net = tiny()
    net.params["out.W"][:] = 0
    net.params["out.b"][:] = 0
    probs, _ = forward(net, rng.random((3, 8, 8, 1)))
    np.testing.assert_array_equal(probs, np.full((3, 5), 0.2))


def test_global_average_pool():
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1)
    assert GlobalAvgPool().forward({}, x, False, None)[0][0, 0] == 2.5
    assert np.all(GlobalAvgPool().forward({}, np.full((2, 3, 3, 4), 1.5), False, None)[0] == 1.5)


def test_forward_rejects_bad_shape():
    with pytest.raises(ShapeError):
        forward(tiny(), np.zeros((2, 8, 8)))


def test_network_rejects_two_outputs():
    with pytest.raises(ValueError):
        Network(n_outputs=2)


def test_loss_examples():
    spec = LossSpec.unweighted("categorical", 3)
    assert weighted_ce([[0.7, 0.2, 0.1]], [0], spec) == pytest.approx(0.356675, abs=1e-6)
    doubled = LossSpec("categorical", ClassWeights([2.0, 2.0, 2.0]))
    y = np.array([[0.5, 0.3, 0.2], [0.1, 0.1, 0.8]])
    assert weighted_ce(y, [1, 2], doubled) == 2 * weighted_ce(y, [1, 2], spec)
    near = 1 - 1e-12
    assert weighted_ce([[near, 5e-13, 5e-13]], [0], spec) <= 2e-12


def test_binary_loss_uses_both_weights():
    spec = LossSpec("binary", ClassWeights([0.5, 3.0]))
    y = np.array([[0.8], [0.8]])
    expected = (-3.0 * math.log(0.8) - 0.5 * math.log(0.2)) / 2
    assert weighted_ce(y, [1, 0], spec) == pytest.approx(expected, rel=1e-15)


def test_loss_spec_validation():
    with pytest.raises(ValueError):
        LossSpec("binary", ClassWeights([1.0, 1.0, 1.0]))
    with pytest.raises(ValueError):
        weighted_ce([[0.5, 0.5]], [2], LossSpec.unweighted("categorical", 2))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(1, 5), st.integers(0, 10**6))
def test_output_gradient_identity(c, b, seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(b, c))
    labels = rng.integers(0, c, b)
    spec = LossSpec("categorical", ClassWeights(rng.uniform(0.1, 3, c)))
    g = output_grad(softmax(z), labels, spec)
    expected = spec.weights.weights[labels][:, None] * (softmax(z) - np.eye(c)[labels]) / b
    np.testing.assert_allclose(g, expected, rtol=1e-12, atol=1e-15)
    eps = 1e-6
    for i in range(b):
        for j in range(c):
            zp, zm = z.copy(), z.copy()
            zp[i, j] += eps
            zm[i, j] -= eps
            fd = (weighted_ce(softmax(zp), labels, spec) - weighted_ce(softmax(zm), labels, spec)) / (2 * eps)
            assert abs(fd - g[i, j]) < 1e-7


def test_zero_weight_class_has_zero_gradient():
    spec = LossSpec("categorical", ClassWeights([0.0, 1.0, 1.0]))
    g = output_grad(softmax(np.array([[0.3, -1.0, 2.0]])), [0], spec)
    assert np.all(g == 0)


def test_duplicated_samples_mean_reduction(rng):
    net = tiny()
    x = rng.random((1, 8, 8, 1))
    spec = LossSpec.unweighted("categorical", 5)
    one = backward(net, forward(net, x)[1], [3], spec)
    four = backward(net, forward(net, np.repeat(x, 4, axis=0))[1], [3] * 4, spec)
    for k in one:
        np.testing.assert_allclose(four[k], one[k], rtol=1e-10, atol=1e-14)


def test_stale_cache_rejected(rng):
    net = tiny()
    _, cache = forward(net, rng.random((2, 8, 8, 1)))
    net.version += 1
    with pytest.raises(ValueError, match="stale"):
        backward(net, cache, [0, 1], LossSpec.unweighted("categorical", 5))


@pytest.mark.parametrize("kind,n_out,weights", [
    ("categorical", 5, None),
    ("binary", 1, None),
    ("binary", 1, [0.5, 2.5]),
    ("categorical", 3, [0.2, 1.0, 4.0]),
])
def test_grad_check(rng, kind, n_out, weights):
    net = tiny(n_outputs=n_out, channels=(2, 3))
    c = 2 if kind == "binary" else n_out
    spec = LossSpec(kind, ClassWeights(weights if weights else np.ones(c)))
    x = rng.random((3, 8, 8, 1))
    y = rng.integers(0, c, 3)
    assert grad_check(net, x, y, spec) < 1e-4


def test_momentum_recurrence():
    w = {"w": np.zeros(1)}
    state = OptimizerState.for_params(w, lr=0.1, momentum=0.9)
    seen = []
    for _ in range(3):
        sgd_momentum_step(w, {"w": np.ones(1)}, state)
        seen.append(state.velocity["w"][0])
    np.testing.assert_allclose(seen, [0.1, 0.19, 0.271], rtol=1e-15)
    assert w["w"][0] == pytest.approx(-0.561, rel=1e-15)


def test_plain_sgd_and_zero_gradient():
    w = {"w": np.array([1.0, 2.0])}
    sgd_momentum_step(w, {"w": np.array([0.5, -1.0])}, OptimizerState.for_params(w, 0.1, 0.0))
    np.testing.assert_allclose(w["w"], [0.95, 2.1], rtol=1e-15)
    state = OptimizerState.for_params(w, 0.1, 0.9)
    before = w["w"].copy()
    for _ in range(5):
        sgd_momentum_step(w, {"w": np.zeros(2)}, state)
    np.testing.assert_array_equal(w["w"], before)


def test_training_overfits_separable_set():
    X, y = separable()
    net = Network(channels=(4,), n_outputs=5, dense_units=16, dropout=0.0, seed=1)
    spec = LossSpec.unweighted("categorical", 5)
    train(net, X, y, spec, TrainConfig(lr=0.05, epochs=60, batch_size=5, seed=0))
    assert np.mean(predict_proba(net, X).argmax(axis=1) == y) == 1.0


def test_zero_epochs_leaves_parameters(rng):
    X, y = separable()
    net = tiny()
    before = {k: v.copy() for k, v in net.params.items()}
    assert train(net, X, y, LossSpec.unweighted("categorical", 5), TrainConfig(epochs=0)) == []
    for k in before:
        np.testing.assert_array_equal(net.params[k], before[k])


def test_training_is_deterministic():
    X, y = separable()
    runs = []
    for _ in range(2):
        net = Network(channels=(3,), n_outputs=5, dense_units=8, dropout=0.2, seed=5)
        runs.append(train(net, X, y, LossSpec.unweighted("categorical", 5), TrainConfig(epochs=3, seed=2)))
    assert json.dumps(runs[0]) == json.dumps(runs[1])


def test_predict_proba_rows(rng):
    X = rng.random((6, 8, 8, 1))
    p = predict_proba(tiny(), X)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=1e-12)
    np.testing.assert_array_equal(predict_proba(tiny(), X[:1]), predict_proba(tiny(), X[:1]))


def test_binary_expansion():
    net = tiny(n_outputs=1)
    net.params["out.W"][:] = 0
    net.params["out.b"][:] = math.log(0.3 / 0.7)
    p = predict_proba(net, np.zeros((1, 8, 8, 1)))
    np.testing.assert_allclose(p, [[0.7, 0.3]], rtol=1e-12)


def test_sigmoid_extremes():
    assert np.all(np.isfinite(sigmoid(np.array([[-800.0], [800.0]]))))


def test_estimator_fit_predict_and_clone():
    from sklearn.base import clone
    X, y = separable(n=24)
    clf = CNNClassifier(channels=(4,), dense_units=16, dropout=0.0, n_classes=2, learning_rate=0.05,
                        epochs=40, batch_size=6)
    clf.fit(X, y)
    assert np.mean(clf.predict(X) == y) == 1.0
    assert clone(clf).get_params() == clf.get_params()
    assert len(clf.history_) == 40


def test_estimator_binary_task():
    X, y = separable(n=24)
    clf = CNNClassifier(channels=(4,), dense_units=16, task="binary", learning_rate=0.05, epochs=30, batch_size=6)
    p = clf.fit(X, y).predict_proba(X)
    assert p.shape == (24, 2) and clf.network_.n_outputs == 1


def test_estimator_rejects_labels_out_of_range():
    X, _ = separable(n=6)
    with pytest.raises(ValueError):
        CNNClassifier(n_classes=2, epochs=1).fit(X, [0, 1, 2, 0, 1, 0])
