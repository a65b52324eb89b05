"""Gradient flow on the empirical classification loss.

The flow ``d theta/dt = -grad L(theta)`` with ``L = sum_k loss(y_k Phi(theta; x_k))``
is discretized by explicit Euler or classical RK4. With the default step
policy ``h = c_step * L / ||grad L||^2`` each step removes about a fixed
fraction of the loss, so progress does not stall once the loss is tiny.

Late in training both ``L`` and ``grad L`` are far below the smallest
double, so they are carried as ``exp(log_scale) * value`` pairs and the step
size and time are tracked in log space.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from kktembed.data import Dataset
from kktembed.kkt import KKTConfig, KKTReport, NotSeparatingError, kkt_residual, scale_to_unit_margin
from kktembed.net import KinkRule, NetworkSpec, batch_gradients, check_params
from kktembed.transform import SplitTransform, apply

LOSS_KINDS = ("exponential", "logistic")
INTEGRATORS = ("euler", "rk4")
STEP_POLICIES = ("loss-scaled", "fixed")

# assumption flag carried in every limit-direction report
NORM_DIVERGENCE_PROXY = (
    "norm divergence is operationalized as growth of ||theta|| by a fixed factor "
    "after the first separating checkpoint; the omega-limit set is approximated "
    "by the final window of sampled directions"
)


class FlowAbort(RuntimeError):
    """Non-finite state; ``trajectory`` holds everything up to the failure."""

    def __init__(self, message, trajectory):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass(frozen=True)
class LossSpec:
    kind: str = "exponential"

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}, got {self.kind!r}")

    def log_terms(self, q: np.ndarray):
        """``log loss(q)`` and ``log(-loss'(q))`` per sample."""
        if self.kind == "exponential":
            return -q, -q
        sp = np.logaddexp(0.0, -q)  # log(1 + e^-q)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            log_l = np.where(q > 30.0, -q + np.log1p(-0.5 * np.exp(-q)), np.log(sp))
        return log_l, -q - sp


@dataclass(frozen=True)
class FlowConfig:
    integrator: str = "rk4"
    step_policy: str = "loss-scaled"
    base_step: float = 0.1
    c_step: float = 0.1
    h_max: float = math.inf
    norm_growth: float = 10.0
    max_steps: int = 100_000
    loss_floor: float = 0.0
    t_max: float = math.inf
    checkpoint_stride: int = 1
    max_rejections: int = 30

    def __post_init__(self):
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}")
        if self.step_policy not in STEP_POLICIES:
            raise ValueError(f"step_policy must be one of {STEP_POLICIES}")
        for name in ("base_step", "c_step", "h_max", "norm_growth", "max_steps",
                     "checkpoint_stride", "t_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.loss_floor < 0:
            raise ValueError("loss_floor must be non-negative")


def _exp(v: float) -> float:
    # inf past the double range instead of OverflowError
    return math.exp(v) if v < 709.0 else math.inf


@dataclass
class Checkpoint:
    step: int
    log_t: float
    log_loss: float
    norm: float
    q_min: float
    theta: np.ndarray

    @property
    def t(self) -> float:
        return _exp(self.log_t)

    @property
    def loss(self) -> float:
        return _exp(self.log_loss)

    @property
    def direction(self) -> np.ndarray:
        return self.theta / self.norm if self.norm > 0 else np.zeros_like(self.theta)

    def gamma_bar(self, order: int) -> float:
        return self.q_min / self.norm**order if self.norm > 0 else math.nan


@dataclass
class Trajectory:
    spec: NetworkSpec
    checkpoints: list[Checkpoint] = field(default_factory=list)
    log_steps: list[float] = field(default_factory=list)
    stop_reason: str = ""
    reference_norm: float = math.nan  # norm at the first separating step
    kink_landings: int = 0
    rejections: int = 0

    @property
    def thetas(self) -> np.ndarray:
        return np.array([c.theta for c in self.checkpoints])

    @property
    def directions(self) -> np.ndarray:
        return np.array([c.direction for c in self.checkpoints])

    @property
    def norm_growth(self) -> float:
        if not self.checkpoints or not self.reference_norm > 0:
            return 0.0
        return self.checkpoints[-1].norm / self.reference_norm

    @property
    def conclusive(self) -> bool:
        return self.stop_reason == "norm_growth"

    def truncate_at_growth(self, factor: float) -> "Trajectory":
        """Prefix ending at the first checkpoint with norm growth >= factor."""
        if not self.reference_norm > 0:
            raise ValueError("trajectory never separated the data")
        for c in self.checkpoints:
            if c.q_min > 0 and c.norm >= factor * self.reference_norm:
                return self.prefix(c.step, "norm_growth")
        raise ValueError(f"norm never grew by {factor}")

    def prefix(self, step: int, stop_reason: str = "truncated") -> "Trajectory":
        """Checkpoints up to and including ``step`` (which must be recorded)."""
        for i, c in enumerate(self.checkpoints):
            if c.step == step:
                return Trajectory(self.spec, self.checkpoints[: i + 1], self.log_steps[:step],
                                  stop_reason, self.reference_norm,
                                  self.kink_landings, self.rejections)
        raise ValueError(f"no checkpoint at step {step}")


# -- loss and gradient -----------------------------------------------------------

@dataclass
class _Eval:
    q: np.ndarray
    log_loss: float
    log_gscale: float
    gvec: np.ndarray  # grad L = exp(log_gscale) * gvec
    kinks: int

    @property
    def log_gnorm(self) -> float:
        n = float(np.linalg.norm(self.gvec))
        return self.log_gscale + math.log(n) if n > 0 else -math.inf


def _evaluate(spec, theta, data, loss, rule) -> _Eval:
    out, G, kinks = batch_gradients(spec, theta, data.X, rule)
    q = data.y * out
    log_l, log_d = loss.log_terms(q)
    sl = float(np.max(log_l))
    log_loss = sl + math.log(float(np.sum(np.exp(log_l - sl))))
    sg = float(np.max(log_d))
    w = -np.exp(log_d - sg) * data.y
    return _Eval(q, log_loss, sg, w @ G, int(np.sum(kinks)))


def total_loss_and_grad(spec: NetworkSpec, theta, data: Dataset,
                        loss: LossSpec = LossSpec(), rule: KinkRule = KinkRule()):
    """Loss value and one Clarke element of its gradient.

    Values may underflow to 0 for very large margins; the integrator uses the
    log-scaled form internally.
    """
    theta = check_params(spec, theta)
    ev = _evaluate(spec, theta, data, loss, rule)
    with np.errstate(over="ignore"):
        return float(np.exp(ev.log_loss)), np.exp(ev.log_gscale) * ev.gvec


# -- integration ---------------------------------------------------------------

def _scaled(log_h, ev):
    with np.errstate(over="ignore"):
        return np.exp(log_h + ev.log_gscale) * ev.gvec


def _stage(theta, log_h, ev, frac=1.0):
    return theta - frac * _scaled(log_h, ev)


def _step(spec, theta, ev, log_h, data, loss, rule, integrator):
    if integrator == "euler":
        return _stage(theta, log_h, ev)
    e1 = ev
    e2 = _evaluate(spec, _stage(theta, log_h, e1, 0.5), data, loss, rule)
    e3 = _evaluate(spec, _stage(theta, log_h, e2, 0.5), data, loss, rule)
    e4 = _evaluate(spec, _stage(theta, log_h, e3, 1.0), data, loss, rule)
    incr = (
        _scaled(log_h, e1)
        + 2.0 * _scaled(log_h, e2)
        + 2.0 * _scaled(log_h, e3)
        + _scaled(log_h, e4)
    )
    return theta - incr / 6.0


def _log_step(cfg: FlowConfig, ev: _Eval) -> float:
    if cfg.step_policy == "fixed":
        return math.log(cfg.base_step)
    lh = math.log(cfg.c_step) + ev.log_loss - 2.0 * ev.log_gnorm
    return min(lh, math.log(cfg.h_max))


def integrate(
    spec: NetworkSpec,
    theta0,
    data: Dataset,
    loss: LossSpec = LossSpec(),
    cfg: FlowConfig = FlowConfig(),
    rule: KinkRule = KinkRule(),
    schedule=None,
) -> Trajectory:
    """Run the discretized flow from ``theta0``.

    Stops at the first of: norm grown by ``cfg.norm_growth`` since the first
    step with all margins positive (``"norm_growth"``), ``max_steps``, loss
    below ``loss_floor``, ``t_max``, a zero gradient, or a step that cannot
    decrease the loss after ``max_rejections`` halvings (``"stalled"``). A
    trial step that leaves the finite range is rejected like one that raises
    the loss; :class:`FlowAbort` is raised only when halving cannot recover.

    With ``schedule`` (a sequence of log step sizes) the steps are replayed
    exactly: no step control, no rejection, and only the schedule length
    stops the run.
    """
    theta = np.array(check_params(spec, theta0), dtype=np.float64)
    traj = Trajectory(spec)
    ev = _evaluate(spec, theta, data, loss, rule)
    log_t = -math.inf
    log_floor = math.log(cfg.loss_floor) if cfg.loss_floor > 0 else -math.inf
    log_tmax = math.log(cfg.t_max) if math.isfinite(cfg.t_max) else math.inf

    def record(step):
        nrm = float(np.linalg.norm(theta))
        traj.checkpoints.append(
            Checkpoint(step, log_t, ev.log_loss, nrm, float(ev.q.min()), theta.copy())
        )

    def note_separation():
        if not traj.reference_norm > 0 and ev.q.min() > 0:
            traj.reference_norm = float(np.linalg.norm(theta))

    note_separation()
    record(0)
    steps = len(schedule) if schedule is not None else cfg.max_steps
    step = 0
    reason = "schedule_end" if schedule is not None else "max_steps"
    while step < steps:
        if schedule is None:
            if ev.log_loss < log_floor:
                reason = "loss_floor"
                break
            if log_t >= log_tmax:
                reason = "t_max"
                break
            if not np.any(ev.gvec):
                reason = "zero_gradient"
                break
            log_h = _log_step(cfg, ev)
            if math.isfinite(log_tmax):
                log_h = min(log_h, _log_remaining(log_tmax, log_t))
        else:
            log_h = float(schedule[step])

        for attempt in range(cfg.max_rejections + 1):
            with np.errstate(over="ignore", invalid="ignore"):
                new = _step(spec, theta, ev, log_h, data, loss, rule, cfg.integrator)
                finite = bool(np.all(np.isfinite(new)))
                new_ev = _evaluate(spec, new, data, loss, rule) if finite else None
            if finite and not math.isfinite(new_ev.log_loss):
                finite = False
            if not finite and (schedule is not None or attempt == cfg.max_rejections):
                record(step)
                traj.stop_reason = "non_finite"
                raise FlowAbort(f"non-finite state at step {step + 1}", traj)
            if finite and (schedule is not None
                           or new_ev.log_loss <= ev.log_loss + 1e-12 * max(1.0, abs(ev.log_loss))):
                break
            traj.rejections += 1
            log_h -= math.log(2.0)
        else:
            reason = "stalled"
            break

        theta, ev = new, new_ev
        step += 1
        log_t = float(np.logaddexp(log_t, log_h))
        traj.log_steps.append(log_h)
        traj.kink_landings += ev.kinks > 0
        note_separation()
        grown = (
            schedule is None
            and traj.reference_norm > 0
            and ev.q.min() > 0
            and np.linalg.norm(theta) >= cfg.norm_growth * traj.reference_norm
        )
        if grown or step % cfg.checkpoint_stride == 0 or step == steps:
            record(step)
        if grown:
            reason = "norm_growth"
            break
    if traj.checkpoints[-1].step != step:
        record(step)
    traj.stop_reason = reason
    return traj


def _log_remaining(log_tmax, log_t):
    if log_t == -math.inf:
        return log_tmax
    d = math.exp(log_tmax) - math.exp(log_t)
    return math.log(d) if d > 0 else -math.inf


@dataclass
class PairedRun:
    source: Trajectory
    target: Trajectory
    deviation: np.ndarray  # ||eta_t - T theta_t|| / max(1, ||theta_t||) per checkpoint

    @property
    def max_deviation(self) -> float:
        return float(np.max(self.deviation)) if self.deviation.size else 0.0


def paired_integrate(
    spec: NetworkSpec,
    T: SplitTransform,
    theta0,
    data: Dataset,
    loss: LossSpec = LossSpec(),
    cfg: FlowConfig = FlowConfig(),
    rule: KinkRule = KinkRule(),
) -> PairedRun:
    """Source run, then the target run from ``T theta0`` on the same step sizes."""
    if spec != T.source:
        raise ValueError("network spec does not match the transform's source")
    src = integrate(spec, theta0, data, loss, cfg, rule)
    tgt = integrate(T.target, apply(T, theta0), data, loss, cfg, rule, schedule=src.log_steps)
    tgt.reference_norm = _first_separating_norm(tgt) if not tgt.reference_norm > 0 else tgt.reference_norm
    tgt.stop_reason = src.stop_reason
    by_step = {c.step: c for c in tgt.checkpoints}
    dev = []
    for c in src.checkpoints:
        d = by_step[c.step]
        dev.append(float(np.linalg.norm(d.theta - apply(T, c.theta))) / max(1.0, c.norm))
    return PairedRun(src, tgt, np.array(dev))


def _first_separating_norm(traj):
    for c in traj.checkpoints:
        if c.q_min > 0:
            return c.norm
    return math.nan


# -- directions ------------------------------------------------------------------

def angle(u, v) -> float:
    """Angle between two vectors, accurate for nearly parallel inputs."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return math.nan
    u, v = u / nu, v / nv
    return 2.0 * math.atan2(float(np.linalg.norm(u - v)), float(np.linalg.norm(u + v)))


def _angle_matrix(A, B):
    return np.array([[angle(a, b) for b in B] for a in A])


@dataclass
class DirectionLimitReport:
    converged: bool
    limit_direction: np.ndarray
    tail_dispersion: float
    tail_directions: np.ndarray
    tail_steps: list[int]
    norm_growth: float
    assumption: str = NORM_DIVERGENCE_PROXY

    def to_dict(self) -> dict:
        return {
            "converged": bool(self.converged),
            "tail_dispersion": self.tail_dispersion,
            "norm_growth": self.norm_growth,
            "window": len(self.tail_steps),
            "tail_steps": list(self.tail_steps),
            "limit_direction": [float(v) for v in self.limit_direction],
            "assumption": self.assumption,
        }


def direction_limit(traj: Trajectory, window: int = 10, angle_tol: float = 1e-2,
                    min_growth: float = 2.0) -> DirectionLimitReport:
    """Finite-window estimate of the limit direction of ``theta(t)/||theta(t)||``.

    ``converged`` needs the norm to have grown by ``min_growth`` since the
    data was first separated and all pairwise angles in the final ``window``
    checkpoints to be within ``angle_tol``.
    """
    if window < 1:
        raise ValueError("window must be positive")
    after = [c for c in traj.checkpoints if c.q_min > 0 and c.norm > 0]
    if window > len(traj.checkpoints) or window > len(after):
        raise ValueError(
            f"window {window} exceeds the {len(after)} separating checkpoints available"
        )
    tail = traj.checkpoints[-window:]
    D = np.array([c.direction for c in tail])
    disp = float(np.max(_angle_matrix(D, D))) if window > 1 else 0.0
    mean = D.mean(axis=0)
    limit = mean / np.linalg.norm(mean)
    growth = traj.norm_growth
    converged = growth >= min_growth and disp <= angle_tol
    return DirectionLimitReport(converged, limit, disp, D, [c.step for c in tail], growth)


@dataclass
class LimitEmbeddingReport:
    limit_angle: float
    hausdorff_angle: float
    angle_tol: float
    source_converged: bool
    passed: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def check_limit_embedding(source: DirectionLimitReport, target: DirectionLimitReport,
                          T: SplitTransform, angle_tol: float = 1e-6) -> LimitEmbeddingReport:
    """Compare ``T`` of the source limit/tail set with the target's.

    The tail-set comparison uses the symmetric Hausdorff distance in angle,
    a finite-sample stand-in for equality of the omega-limit sets.
    """
    lim = angle(apply(T, source.limit_direction), target.limit_direction)
    A = np.array([apply(T, d) for d in source.tail_directions])
    H = _angle_matrix(A, target.tail_directions)
    haus = float(max(H.min(axis=1).max(), H.min(axis=0).max()))
    ok = haus <= angle_tol and (lim <= angle_tol or not source.converged)
    return LimitEmbeddingReport(lim, haus, angle_tol, source.converged, bool(ok))


def kkt_alignment(spec: NetworkSpec, traj: Trajectory, data: Dataset,
                  cfg: KKTConfig = KKTConfig(), window: int = 10) -> KKTReport:
    """KKT report of the tail's limit direction rescaled to unit margin."""
    rep = direction_limit(traj, window=window, angle_tol=math.inf, min_growth=0.0)
    try:
        theta = scale_to_unit_margin(spec, rep.limit_direction, data)
    except NotSeparatingError as exc:
        raise NotSeparatingError(f"limit direction does not separate the data: {exc}") from None
    return kkt_residual(spec, theta, data, cfg)


# -- files -------------------------------------------------------------------------

TRAJECTORY_COLUMNS = ["step", "t", "loss", "norm", "q_min", "gamma_bar"]
# t and loss leave the double range on long runs; their logs are kept too
LOG_COLUMNS = ["log_t", "log_loss"]


def write_trajectory_csv(path, traj: Trajectory, deviation=None) -> None:
    cols = TRAJECTORY_COLUMNS + (["deviation"] if deviation is not None else []) + LOG_COLUMNS
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i, c in enumerate(traj.checkpoints):
            row = [c.step, repr(c.t), repr(c.loss), repr(c.norm), repr(c.q_min),
                   repr(c.gamma_bar(traj.spec.order))]
            if deviation is not None:
                row.append(repr(float(deviation[i])))
            row += [repr(float(c.log_t)), repr(float(c.log_loss))]
            w.writerow(row)


def write_snapshots_json(path, traj: Trajectory, stride: int = 1) -> None:
    snaps = [
        {"step": c.step, "log_t": c.log_t, "theta": [float(v) for v in c.theta]}
        for i, c in enumerate(traj.checkpoints)
        if i % stride == 0 or i == len(traj.checkpoints) - 1
    ]
    payload = {"network": traj.spec.to_dict(), "stop_reason": traj.stop_reason,
               "snapshots": snaps}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")
