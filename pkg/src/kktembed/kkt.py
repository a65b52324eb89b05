"""Margins and KKT certification for the min-norm max-margin problem.

The problem is: minimize ``0.5 * ||theta||^2`` subject to
``y_k * Phi(theta; x_k) >= 1`` for every sample. A point is certified by
fitting non-negative multipliers on the (numerically) active constraints
and reporting stationarity, feasibility and complementarity residuals.
Constraint subgradients are ``-y_k * g_k`` with ``g_k`` the backprop element
under the configured kink rule, so at kinked points the residual depends
on that choice.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import lsq_linear, nnls

from kktembed.data import Dataset
from kktembed.net import KinkRule, NetworkSpec, batch_gradients, batch_outputs, check_params
from kktembed.transform import SplitTransform, apply


class NotSeparatingError(ValueError):
    """The parameters do not classify every sample with positive margin."""


@dataclass(frozen=True)
class KKTConfig:
    active_margin: float = 1e-3
    stationarity_tol: float = 1e-8
    feasibility_tol: float = 1e-8
    complementarity_tol: float = 1e-8
    rule: KinkRule = KinkRule()

    def __post_init__(self):
        for name in ("active_margin", "stationarity_tol", "feasibility_tol", "complementarity_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return {
            "active_margin": self.active_margin,
            "stationarity_tol": self.stationarity_tol,
            "feasibility_tol": self.feasibility_tol,
            "complementarity_tol": self.complementarity_tol,
            "slope_at_zero": self.rule.slope_at_zero,
        }


@dataclass
class MarginReport:
    q: np.ndarray
    q_min: float
    normalized_margin: float
    degenerate: bool = False


@dataclass
class KKTReport:
    lambdas: np.ndarray
    active: np.ndarray
    q: np.ndarray
    stationarity_residual: float
    feasibility_violation: float
    complementarity_residual: float
    epsilon_kkt: bool
    config: KKTConfig = field(default_factory=KKTConfig)
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "epsilon_kkt": bool(self.epsilon_kkt),
            "stationarity_residual": self.stationarity_residual,
            "feasibility_violation": self.feasibility_violation,
            "complementarity_residual": self.complementarity_residual,
            "lambdas": [float(v) for v in self.lambdas],
            "active": [int(i) for i in np.flatnonzero(self.active)],
            "q": [float(v) for v in self.q],
            "degenerate": bool(self.degenerate),
            "kink_rule": {"slope_at_zero": self.config.rule.slope_at_zero},
            "config": self.config.to_dict(),
        }


def margins(spec: NetworkSpec, theta, data: Dataset) -> MarginReport:
    theta = check_params(spec, theta)
    q = data.y * batch_outputs(spec, theta, data.X)
    q_min = float(q.min())
    nrm = float(np.linalg.norm(theta))
    if nrm == 0.0:
        return MarginReport(q, q_min, math.nan, degenerate=True)
    return MarginReport(q, q_min, q_min / nrm**spec.order)


def scale_to_unit_margin(spec: NetworkSpec, theta, data: Dataset) -> np.ndarray:
    theta = check_params(spec, theta)
    q_min = margins(spec, theta, data).q_min
    if not q_min > 0:
        raise NotSeparatingError(f"minimum margin is {q_min!r}; cannot rescale to 1")
    return theta / q_min ** (1.0 / spec.order)


def min_norm_nnls(A: np.ndarray, b: np.ndarray, rcond: float = 1e-10) -> np.ndarray:
    """Non-negative least squares, breaking ties by the smallest ``||x||``.

    The fitted value ``A x`` of an NNLS problem is unique but ``x`` need not
    be. After a bounded-variable least-squares solve we search the optimal face: writing
    ``x = x_p + N z`` with ``x_p = pinv(A) A x`` and ``N`` an orthonormal
    null-space basis, ``||x||^2 = ||x_p||^2 + ||z||^2`` and the tie-break is
    the least-distance problem ``min ||z|| s.t. N z >= -x_p``.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    k = A.shape[1]
    if k == 0:
        return np.zeros(0)
    x0 = _nnls(A, b)
    p = A @ x0
    U, s, Vt = np.linalg.svd(A, full_matrices=True)
    rank = int(np.sum(s > rcond * s[0])) if s.size and s[0] > 0 else 0
    if rank == 0:
        return np.zeros(k)
    x_p = Vt[:rank].T @ ((U[:, :rank].T @ p) / s[:rank])
    N = Vt[rank:].T
    slack = 1e-12 * max(1.0, float(np.max(np.abs(x_p))))
    if N.shape[1] == 0 or np.all(x_p >= -slack):
        x = x_p
    else:
        # least-distance problem via NNLS (Lawson & Hanson, ch. 23); the
        # slack keeps rounding-level negatives in x_p from making it infeasible
        M = np.vstack([N.T, -(x_p + slack)[None, :]])
        e = np.zeros(M.shape[0])
        e[-1] = 1.0
        u = _nnls(M, e)
        r = M @ u - e
        if abs(r[-1]) < 1e-300:
            return x0
        x = x_p + N @ (-r[:-1] / r[-1])
    x = np.maximum(x, 0.0)
    # never trade fit quality for the tie-break
    tol = 1e-10 * (1.0 + np.linalg.norm(b) + s[0] * max(np.linalg.norm(x), np.linalg.norm(x0)))
    if np.linalg.norm(A @ x - b) > np.linalg.norm(p - b) + tol:
        return x0
    return x


def _nnls_optimal(A, b, x, tol=1e-9) -> bool:
    # NNLS optimality: w = A^T (b - A x) <= 0, with w = 0 where x > 0
    w = A.T @ (b - A @ x)
    scale = tol * (1.0 + np.linalg.norm(A) * (np.linalg.norm(b) + np.linalg.norm(A) * np.linalg.norm(x)))
    pos = x > 1e-9 * max(1.0, float(np.max(x, initial=0.0)))
    return bool(np.all(x >= 0) and np.all(w <= scale) and np.all(np.abs(w[pos]) <= scale))


def _nnls(A, b) -> np.ndarray:
    """Bounded-variable least squares, checked against the optimality conditions."""
    res = lsq_linear(A, b, bounds=(0.0, np.inf), method="bvls", tol=1e-14, max_iter=50 * A.shape[1] + 100)
    x = np.maximum(res.x, 0.0)
    if _nnls_optimal(A, b, x):
        return x
    alt, _ = nnls(A, b, maxiter=50 * max(A.shape[1], 10))
    if np.linalg.norm(A @ alt - b) < np.linalg.norm(A @ x - b):
        return alt
    return x


def _constraint_gradients(spec, theta, data, rule):
    out, G, _ = batch_gradients(spec, theta, data.X, rule)
    return data.y * out, G * data.y[:, None]


def fit_multipliers(spec: NetworkSpec, theta, data: Dataset, cfg: KKTConfig = KKTConfig()):
    """Multipliers on the active set and the stationarity residual.

    Returns ``(lambdas, residual)`` where ``lambdas`` has one entry per
    sample (zero outside the active set) and ``residual`` is
    ``||theta - sum_k lambda_k y_k g_k||``.
    """
    theta = check_params(spec, theta)
    q, YG = _constraint_gradients(spec, theta, data, cfg.rule)
    lam, res, _ = _fit(theta, q, YG, cfg)
    return lam, res


def _fit(theta, q, YG, cfg):
    active = q <= 1.0 + cfg.active_margin
    lam = np.zeros(q.shape[0])
    if active.any():
        lam[active] = min_norm_nnls(YG[active].T, theta)
    res = float(np.linalg.norm(theta - YG.T @ lam))
    return lam, res, active


def _report(theta, q, YG, lam, active, stationarity, cfg, degenerate=False) -> KKTReport:
    feas = float(np.max(np.maximum(0.0, 1.0 - q)))
    comp = float(np.max(lam * np.abs(1.0 - q)))
    ok = (
        stationarity <= cfg.stationarity_tol
        and feas <= cfg.feasibility_tol
        and comp <= cfg.complementarity_tol
    )
    return KKTReport(lam, active, q, stationarity, feas, comp, bool(ok), cfg, degenerate)


def kkt_residual(spec: NetworkSpec, theta, data: Dataset, cfg: KKTConfig = KKTConfig()) -> KKTReport:
    theta = check_params(spec, theta)
    q, YG = _constraint_gradients(spec, theta, data, cfg.rule)
    lam, res, active = _fit(theta, q, YG, cfg)
    degenerate = not np.any(theta)
    return _report(theta, q, YG, lam, active, res, cfg, degenerate)


def certify_with(spec: NetworkSpec, theta, data: Dataset, lambdas, cfg: KKTConfig = KKTConfig()) -> KKTReport:
    """KKT residuals of ``theta`` under externally supplied multipliers."""
    theta = check_params(spec, theta)
    lam = np.asarray(lambdas, dtype=np.float64)
    q, YG = _constraint_gradients(spec, theta, data, cfg.rule)
    res = float(np.linalg.norm(theta - YG.T @ lam))
    return _report(theta, q, YG, lam, lam > 0, res, cfg)


@dataclass
class EmbeddingKKTReport:
    source: KKTReport
    target: KKTReport
    recertified: KKTReport
    max_multiplier_difference: float
    max_margin_difference: float
    slack: float
    preserved: bool

    def to_dict(self) -> dict:
        return {
            "preserved": bool(self.preserved),
            "slack": self.slack,
            "max_multiplier_difference": self.max_multiplier_difference,
            "max_margin_difference": self.max_margin_difference,
            "source": self.source.to_dict(),
            "target": self.target.to_dict(),
            "recertified_with_source_multipliers": self.recertified.to_dict(),
        }


def check_embedding(
    spec: NetworkSpec,
    T: SplitTransform,
    theta,
    data: Dataset,
    cfg: KKTConfig = KKTConfig(),
    slack: float = 1e-9,
) -> EmbeddingKKTReport:
    """Certify ``theta`` and ``T theta`` and re-use the source multipliers.

    With the unit scale factor of neuron splitting, the source multipliers
    should certify the mapped point unchanged; the target is also fitted
    independently for comparison.
    """
    if spec != T.source:
        raise ValueError("network spec does not match the transform's source")
    theta = check_params(spec, theta)
    eta = apply(T, theta)
    src = kkt_residual(spec, theta, data, cfg)
    tgt = kkt_residual(T.target, eta, data, cfg)
    rec = certify_with(T.target, eta, data, src.lambdas, cfg)

    def within(a: KKTReport, b: KKTReport) -> bool:
        return (
            a.stationarity_residual <= b.stationarity_residual + slack
            and a.feasibility_violation <= b.feasibility_violation + slack
            and a.complementarity_residual <= b.complementarity_residual + slack
        )

    return EmbeddingKKTReport(
        src,
        tgt,
        rec,
        float(np.max(np.abs(tgt.lambdas - src.lambdas))),
        float(np.max(np.abs(tgt.q - src.q))),
        slack,
        within(tgt, src) and within(rec, src),
    )
