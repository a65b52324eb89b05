import numpy as np
import pytest
from hypothesis import given

from kktembed.data import Dataset
from kktembed.kkt import KKTConfig, kkt_residual
from kktembed.net import NetworkSpec, backprop
from kktembed.oracle import (
    InfeasibleError,
    KinkProximityError,
    dense_map_check,
    finite_difference_gradient,
    linear_svm_solver,
    single_neuron_solution,
)
from kktembed.transform import SplitSpec, build_split, build_splits, identity

from strategies import seeds


def test_svm_two_point(two_point):
    sol = linear_svm_solver(two_point)
    np.testing.assert_allclose(sol.params, [1.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(sol.multipliers, [0.5, 0.5], atol=1e-15)
    assert sol.objective == pytest.approx(0.5)
    assert sol.provenance.startswith("linear_svm_solver")


def test_svm_scaled_points():
    D = Dataset.from_pairs([((2.0, 0.0), 1.0), ((-2.0, 0.0), -1.0)])
    np.testing.assert_allclose(linear_svm_solver(D).params, [0.5, 0.0], atol=1e-15)


def test_svm_one_point():
    sol = linear_svm_solver(Dataset.from_pairs([((1.0, 1.0), 1.0)]))
    np.testing.assert_allclose(sol.params, [0.5, 0.5], atol=1e-15)
    assert sol.params @ np.array([1.0, 1.0]) == pytest.approx(1.0)


def test_svm_infeasible_and_limits():
    with pytest.raises(InfeasibleError):
        linear_svm_solver(Dataset.from_pairs([((1.0, 0.0), 1.0), ((1.0, 0.0), -1.0)]))
    with pytest.raises(ValueError):
        linear_svm_solver(Dataset(np.ones((13, 2)), np.ones(13)))


def _separable(rng, n, d):
    w = rng.normal(size=d)
    X = rng.normal(size=(n, d))
    y = np.sign(X @ w)
    y[y == 0] = 1.0
    X += 0.3 * y[:, None] * w / np.linalg.norm(w)
    return Dataset(X, y)


@given(seeds)
def test_svm_solution_certifies(seed):
    rng = np.random.default_rng(seed)
    D = _separable(rng, int(rng.integers(1, 7)), int(rng.integers(1, 4)))
    sol = linear_svm_solver(D)
    rep = kkt_residual(sol.spec, sol.params, D, KKTConfig(active_margin=1e-6))
    assert rep.stationarity_residual <= 1e-8
    assert rep.feasibility_violation <= 1e-8
    assert rep.complementarity_residual <= 1e-8
    assert np.min(D.y * (D.X @ sol.params)) >= 1 - 1e-10


def test_svm_deterministic():
    D = _separable(np.random.default_rng(3), 6, 2)
    a, b = linear_svm_solver(D), linear_svm_solver(D)
    np.testing.assert_array_equal(a.params, b.params)
    np.testing.assert_array_equal(a.multipliers, b.multipliers)


def test_single_neuron_unit_input():
    sol = single_neuron_solution([1.0, 0.0])
    np.testing.assert_allclose(sol.params, [1.0, 0.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(sol.multipliers, [1.0], atol=1e-12)
    D = Dataset.from_pairs([((1.0, 0.0), 1.0)])
    rep = kkt_residual(sol.spec, sol.params, D)
    assert rep.epsilon_kkt and rep.stationarity_residual <= 1e-9


def test_single_neuron_scaled_input():
    sol = single_neuron_solution([2.0, 0.0])
    r = 1.0 / np.sqrt(2.0)
    np.testing.assert_allclose(sol.params, [r, 0.0, r], atol=1e-12)
    D = Dataset.from_pairs([((2.0, 0.0), 1.0)])
    assert kkt_residual(sol.spec, sol.params, D).stationarity_residual <= 1e-9


def test_single_neuron_negative_label_and_oblique():
    x = np.array([3.0, -4.0])
    sol = single_neuron_solution(x, y=-1.0)
    a = sol.params[-1]
    b = sol.params[:-1]
    assert a < 0
    assert abs(a) == pytest.approx(np.linalg.norm(b), rel=1e-10)
    D = Dataset.from_pairs([(tuple(x), -1.0)])
    assert kkt_residual(sol.spec, sol.params, D).epsilon_kkt


def test_single_neuron_infeasible():
    with pytest.raises(InfeasibleError):
        single_neuron_solution([0.0, 0.0])
    with pytest.raises(ValueError):
        single_neuron_solution([1.0, 0.0], y=0.5)


def test_finite_differences_linear_exact():
    spec = NetworkSpec((3, 1))
    x = np.array([0.25, -1.5, 2.0])
    g = finite_difference_gradient(spec, np.array([1.0, 2.0, -1.0]), x)
    np.testing.assert_allclose(g, x, atol=1e-10)


@given(seeds)
def test_finite_differences_vs_backprop(seed):
    rng = np.random.default_rng(seed)
    spec = NetworkSpec((3, 5, 4, 1))
    theta, x = rng.normal(size=spec.num_params), rng.normal(size=3)
    try:
        fd = finite_difference_gradient(spec, theta, x, h=1e-5)
    except KinkProximityError:
        return
    g = backprop(spec, theta, x).gradient
    assert np.linalg.norm(g - fd) <= 1e-6 * max(1.0, np.linalg.norm(g))


def test_finite_differences_refuse_near_kink():
    spec = NetworkSpec((2, 1, 1))
    with pytest.raises(KinkProximityError):
        finite_difference_gradient(spec, np.array([1.0, -1.0, 1.0]), [1.0, 1.0 + 1e-6])


def test_dense_map_identity_exact():
    rep = dense_map_check(identity(NetworkSpec((3, 4, 1))))
    assert rep.max_gram_error == 0.0 and rep.max_apply_error == 0.0


def test_dense_map_composed():
    spec = NetworkSpec((3, 4, 5, 1))
    T = build_splits(spec, [SplitSpec(2, 1, (0.6, 0.8)), SplitSpec(1, 3, (0.5, 0.5, 0.5, 0.5)),
                            SplitSpec(2, 5, (0.28, 0.96))])
    rep = dense_map_check(T)
    assert rep.max_gram_error <= 1e-12 and rep.max_apply_error <= 1e-14
    assert (rep.source_dim, rep.target_dim) == (spec.num_params, T.target.num_params)


def test_dense_map_cap():
    spec = NetworkSpec((50, 100, 1))
    with pytest.raises(ValueError):
        dense_map_check(build_split(spec, SplitSpec(1, 0, (0.6, 0.8))))
