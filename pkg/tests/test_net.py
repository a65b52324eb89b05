import json

import numpy as np
import pytest
from hypothesis import given

from kktembed.net import (
    KinkRule,
    LayoutError,
    NetworkSpec,
    backprop,
    batch_gradients,
    batch_outputs,
    dump_params,
    euler_check,
    flatten,
    forward,
    load_params,
    params_from_dict,
    save_params,
    spec_from_weights,
    unflatten,
)
from kktembed.oracle import finite_difference_gradient

from strategies import networks, seeds


def test_spec_shapes():
    spec = NetworkSpec((3, 5, 2, 1))
    assert spec.order == 3
    assert spec.input_dim == 3
    assert spec.hidden_layers == 2
    assert spec.layer_shapes() == [(5, 3), (2, 5), (1, 2)]
    assert spec.num_params == 15 + 10 + 2
    assert spec.layout() == [(0, 5, 3), (15, 2, 5), (25, 1, 2)]
    assert spec.activations == ("relu", "relu")


@pytest.mark.parametrize("widths", [(3,), (3, 2), (3, 0, 1), ()])
def test_spec_rejects_bad_widths(widths):
    with pytest.raises(ValueError):
        NetworkSpec(widths)


def test_activation_parsing():
    spec = NetworkSpec((2, 3, 3, 1), ("leaky-relu:0.2", "leaky_relu"))
    assert spec.negative_slopes == (0.2, 0.01)
    for bad in ("tanh", "leaky-relu:1.5", "relu:0.1"):
        with pytest.raises(ValueError):
            NetworkSpec((2, 3, 1), (bad,))
    with pytest.raises(ValueError):
        NetworkSpec((2, 3, 1), ("relu", "relu"))


def test_forward_by_hand():
    # W1 = [[1, -1], [2, 0.5]], W2 = [[3, -2]]; x = (1, 2)
    spec = NetworkSpec((2, 2, 1))
    theta = np.array([1.0, -1.0, 2.0, 0.5, 3.0, -2.0])
    out, cache = forward(spec, theta, [1.0, 2.0])
    np.testing.assert_array_equal(cache.preactivations[0], [-1.0, 3.0])
    assert out == -6.0
    g = backprop(spec, theta, [1.0, 2.0]).gradient
    # only the second hidden unit is active: dW1[1] = -2 * x, dW2 = h
    np.testing.assert_array_equal(g, [0, 0, -2.0, -4.0, 0.0, 3.0])


def test_linear_model_gradient_is_input():
    spec = NetworkSpec((3, 1))
    x = np.array([0.5, -1.0, 2.0])
    el = backprop(spec, np.array([1.0, 2.0, 3.0]), x)
    np.testing.assert_array_equal(el.gradient, x)
    assert el.output == 0.5 - 2.0 + 6.0


def test_kink_rule_selects_element():
    spec = NetworkSpec((2, 1, 1))
    theta = np.array([1.0, -1.0, 2.0])  # preactivation exactly 0 at x = (1, 1)
    x = [1.0, 1.0]
    lo = backprop(spec, theta, x, KinkRule(0.0))
    hi = backprop(spec, theta, x, KinkRule(1.0))
    assert lo.kink_hits == [(1, 0)] == hi.kink_hits
    np.testing.assert_array_equal(lo.gradient, [0.0, 0.0, 0.0])
    np.testing.assert_array_equal(hi.gradient, [2.0, 2.0, 0.0])
    assert KinkRule(0.5).derivative_at_zero(0.2) == pytest.approx(0.6)
    with pytest.raises(ValueError):
        KinkRule(1.5)


def test_kink_rule_ignored_off_kink():
    spec = NetworkSpec((2, 3, 1))
    theta = np.arange(1.0, 10.0) * np.array([1, -1, 1, -1, 1, -1, 1, 1, 1])
    x = [0.3, 0.7]
    a = backprop(spec, theta, x, KinkRule(0.0))
    b = backprop(spec, theta, x, KinkRule(1.0))
    assert not a.kink_hits
    np.testing.assert_array_equal(a.gradient, b.gradient)


@given(networks(), seeds)
def test_euler_identity(spec, seed):
    rng = np.random.default_rng(seed)
    theta = rng.normal(size=spec.num_params)
    x = rng.normal(size=spec.input_dim)
    phi = forward(spec, theta, x)[0]
    assert euler_check(spec, theta, x) <= 1e-10 * (1 + abs(phi))


@given(networks(), seeds)
def test_homogeneity(spec, seed):
    rng = np.random.default_rng(seed)
    theta = rng.normal(size=spec.num_params)
    x = rng.normal(size=spec.input_dim)
    a = 1.7
    phi = forward(spec, theta, x)[0]
    assert forward(spec, a * theta, x)[0] == pytest.approx(a**spec.order * phi, rel=1e-12, abs=1e-12)


@given(networks(max_width=5), seeds)
def test_backprop_matches_finite_differences(spec, seed):
    rng = np.random.default_rng(seed)
    theta = rng.normal(size=spec.num_params)
    x = rng.normal(size=spec.input_dim)
    try:
        fd = finite_difference_gradient(spec, theta, x)
    except ValueError:
        return
    g = backprop(spec, theta, x).gradient
    assert np.linalg.norm(g - fd) <= 1e-6 * max(1.0, np.linalg.norm(g))


@given(networks(), seeds)
def test_batch_matches_reference(spec, seed):
    rng = np.random.default_rng(seed)
    theta = rng.normal(size=spec.num_params)
    X = rng.normal(size=(5, spec.input_dim))
    out, G, kinks = batch_gradients(spec, theta, X)
    np.testing.assert_allclose(batch_outputs(spec, theta, X), out, rtol=1e-13, atol=1e-13)
    for i, x in enumerate(X):
        el = backprop(spec, theta, x)
        assert out[i] == pytest.approx(el.output, rel=1e-13, abs=1e-13)
        np.testing.assert_allclose(G[i], el.gradient, rtol=1e-12, atol=1e-13)
        assert kinks[i] == len(el.kink_hits)


def test_unflatten_views_and_flatten():
    spec = NetworkSpec((2, 3, 1))
    theta = np.arange(spec.num_params, dtype=float)
    W1, W2 = unflatten(spec, theta)
    assert W1.shape == (3, 2) and W2.shape == (1, 3)
    W1[0, 0] = -5.0
    assert theta[0] == -5.0
    np.testing.assert_array_equal(flatten([W1, W2]), theta)
    assert spec_from_weights([W1, W2]) == spec


def test_layout_errors():
    spec = NetworkSpec((2, 3, 1))
    with pytest.raises(LayoutError):
        forward(spec, np.zeros(5), [1.0, 2.0])
    with pytest.raises(LayoutError):
        forward(spec, np.zeros(9), [1.0, 2.0, 3.0])
    with pytest.raises(LayoutError):
        batch_outputs(spec, np.zeros(9), np.zeros((4, 3)))


def test_params_roundtrip(tmp_path):
    spec = NetworkSpec((3, 4, 2, 1), ("relu", "leaky-relu:0.1"))
    theta = np.random.default_rng(3).normal(size=spec.num_params)
    path = tmp_path / "p.json"
    save_params(path, spec, theta)
    spec2, theta2 = load_params(path)
    assert spec2 == spec
    np.testing.assert_array_equal(theta2, theta)
    data = json.loads(path.read_text())
    assert [len(w) for w in data["weights"]] == [12, 8, 2]


def test_params_file_errors():
    spec = NetworkSpec((2, 1))
    with pytest.raises(ValueError):
        dump_params(spec, np.array([1.0, np.nan]))
    with pytest.raises(LayoutError):
        params_from_dict({"widths": [2, 1], "weights": [[1.0]]})
    with pytest.raises(LayoutError):
        params_from_dict({"widths": [2, 1], "weights": [[1.0, 2.0], [3.0]]})
