"""Brute-force and analytic reference solutions.

Nothing here imports :mod:`kktembed.kkt`, so checks of the certifier
against these solutions stay independent.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from kktembed.data import Dataset
from kktembed.net import NetworkSpec, check_params, forward
from kktembed.transform import SplitTransform, apply

MAX_SVM_POINTS = 12
MAX_SVM_DIM = 4
MAX_DENSE_DIM = 5000


class InfeasibleError(ValueError):
    pass


class KinkProximityError(ValueError):
    """Finite differences would straddle an activation kink."""


@dataclass
class OracleSolution:
    spec: NetworkSpec
    params: np.ndarray
    multipliers: np.ndarray
    objective: float
    provenance: str


def linear_svm_solver(data: Dataset, tol: float = 1e-10) -> OracleSolution:
    """Hard-margin SVM through the origin by support-set enumeration.

    Each candidate support set S gives ``w = sum_{k in S} a_k y_k x_k`` with
    ``y_k w.x_k = 1`` on S. The feasible candidate of smallest norm is the
    optimum; among the systems reproducing it with ``a >= 0`` the
    multipliers of smallest norm are reported.
    """
    X, y = data.X, data.y
    n, d = X.shape
    if n > MAX_SVM_POINTS or d > MAX_SVM_DIM:
        raise ValueError(f"oracle limited to n <= {MAX_SVM_POINTS}, d <= {MAX_SVM_DIM}")
    Z = y[:, None] * X
    cands = []
    for size in range(1, n + 1):
        for S in itertools.combinations(range(n), size):
            ZS = Z[list(S)]
            K = ZS @ ZS.T
            a = np.linalg.pinv(K, rcond=1e-12) @ np.ones(size)
            w = ZS.T @ a
            if np.max(np.abs(ZS @ w - 1.0)) > 1e-9:
                continue
            if np.min(Z @ w) < 1.0 - tol:
                continue
            cands.append((float(w @ w), S, a, w))
    if not cands:
        raise InfeasibleError("data is not linearly separable through the origin")
    best = min(c[0] for c in cands)
    w_best = min(cands, key=lambda c: c[0])[3]
    lam_best = None
    for norm_sq, S, a, w in cands:
        if norm_sq > best * (1 + 1e-9) + 1e-15 or np.max(np.abs(w - w_best)) > 1e-8:
            continue
        if np.min(a) < -1e-12:
            continue
        lam = np.zeros(n)
        lam[list(S)] = np.maximum(a, 0.0)
        if lam_best is None or lam @ lam < lam_best @ lam_best - 1e-15:
            lam_best = lam
    if lam_best is None:
        raise InfeasibleError("no non-negative multipliers found for the optimum")
    spec = NetworkSpec((d, 1))
    return OracleSolution(spec, w_best, lam_best, 0.5 * best, "linear_svm_solver:enumeration")


def single_neuron_solution(x, y: float = 1.0) -> OracleSolution:
    """Min-norm ``(b, a)`` with ``y * a * relu(b.x) >= 1`` for one sample.

    The input weights point along ``x`` (any orthogonal part only adds norm),
    so with ``b = s * x/|x|`` and ``a = y / (s |x|)`` the problem is the
    1-d minimization of ``0.5 * (s^2 + 1/(s|x|)^2)``, solved numerically
    after a coarse grid. Parameters use the network layout ``(b, a)``.
    """
    x = np.asarray(x, dtype=np.float64)
    nx = float(np.linalg.norm(x))
    if nx == 0.0:
        raise InfeasibleError("x = 0 cannot reach a positive margin")
    if abs(y) != 1:
        raise ValueError("label must be +1 or -1")

    def objective(s):
        return 0.5 * (s * s + 1.0 / (s * nx) ** 2)

    grid = np.geomspace(1e-4, 1e4, 2001)
    i = int(np.argmin(objective(grid)))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    res = minimize_scalar(objective, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-14, "maxiter": 500})
    s = float(res.x)
    # polish: one Newton step on d/ds objective = s - 1/(s^3 |x|^2)
    for _ in range(3):
        g = s - 1.0 / (s**3 * nx**2)
        h = 1.0 + 3.0 / (s**4 * nx**2)
        s -= g / h
    b = s * x / nx
    a = y / (s * nx)
    params = np.concatenate([b, [a]])
    # stationarity: params = lam * y * grad, grad = (a x, relu(b.x)) for an active unit
    grad = np.concatenate([a * x, [max(float(b @ x), 0.0)]])
    lam = float((params @ (y * grad)) / (grad @ grad))
    spec = NetworkSpec((x.size, 1, 1))
    return OracleSolution(spec, params, np.array([lam]), 0.5 * float(params @ params),
                          "single_neuron_solution:1d-reduction")


def finite_difference_gradient(spec: NetworkSpec, theta, x, h: float = 1e-5) -> np.ndarray:
    """Central differences of ``theta -> Phi(theta; x)``."""
    theta = check_params(spec, theta).copy()
    _, cache = forward(spec, theta, x)
    for l, z in enumerate(cache.preactivations[:-1], 1):
        if np.any(np.abs(z) <= 10 * h):
            raise KinkProximityError(
                f"layer {l} has a preactivation within {10 * h:g} of the kink"
            )
    g = np.empty_like(theta)
    for i in range(theta.size):
        old = theta[i]
        theta[i] = old + h
        fp, _ = forward(spec, theta, x)
        theta[i] = old - h
        fm, _ = forward(spec, theta, x)
        theta[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


@dataclass
class DenseMapReport:
    max_gram_error: float
    max_apply_error: float
    source_dim: int
    target_dim: int


def dense_map_check(T: SplitTransform, vectors: int = 8, seed: int = 0) -> DenseMapReport:
    """Materialize T, check ``T^T T = I`` and agreement with :func:`apply`."""
    m, mt = T.source.num_params, T.target.num_params
    if max(m, mt) > MAX_DENSE_DIM:
        raise ValueError(f"dense check limited to {MAX_DENSE_DIM} parameters")
    M = T.to_dense()
    gram_err = float(np.max(np.abs(M.T @ M - np.eye(m))))
    rng = np.random.default_rng(seed)
    apply_err = 0.0
    for _ in range(vectors):
        v = rng.normal(size=m)
        apply_err = max(apply_err, float(np.max(np.abs(M @ v - apply(T, v)))))
    return DenseMapReport(gram_err, apply_err, m, mt)
