"""Neuron-splitting maps between parameter spaces.

A split replaces hidden neuron ``j`` of layer ``k`` by ``m`` copies whose
incoming rows and outgoing columns are scaled by ``c_1..c_m`` with
``c_i >= 0`` and ``sum c_i**2 == 1``. Copy 1 keeps index ``j``; copies
2..m are appended after the existing neurons of layer ``k``.

Every target coordinate is a scaled copy of exactly one source coordinate,
so a map is stored as an index array plus coefficient factors. Composite
maps keep one factor array per stage and apply them in order, which makes
``apply(compose(T2, T1), x)`` bit-identical to ``apply(T2, apply(T1, x))``.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from kktembed.net import (
    KinkRule,
    LayoutError,
    NetworkSpec,
    backprop,
    check_params,
    forward,
)

# sum of squares within this of 1 is accepted as given
COEFF_EXACT_TOL = 1e-12
# within this it is renormalized, beyond it rejected
COEFF_RENORM_TOL = 1e-9


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class SplitSpec:
    layer: int
    neuron: int
    coeffs: tuple[float, ...]

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64)
        if c.ndim != 1 or c.size < 1:
            raise SplitError("need at least one splitting coefficient")
        if not np.all(np.isfinite(c)):
            raise SplitError("splitting coefficients must be finite")
        if np.any(c < 0):
            raise SplitError(f"splitting coefficients must be non-negative, got {c.tolist()}")
        ss = float(np.sum(c * c))
        if abs(ss - 1.0) > COEFF_RENORM_TOL:
            raise SplitError(f"sum of squared coefficients is {ss!r}, must be 1")
        if abs(ss - 1.0) > COEFF_EXACT_TOL:
            c = c / math.sqrt(ss)
        object.__setattr__(self, "coeffs", tuple(float(v) for v in c))
        object.__setattr__(self, "layer", int(self.layer))
        object.__setattr__(self, "neuron", int(self.neuron))

    @property
    def m_split(self) -> int:
        return len(self.coeffs)

    @property
    def has_dead_copy(self) -> bool:
        return any(v == 0.0 for v in self.coeffs)

    def to_dict(self) -> dict:
        return {"layer": self.layer, "neuron": self.neuron, "coeffs": list(self.coeffs)}


@dataclass(frozen=True, eq=False)
class SplitTransform:
    """Sparse linear map ``theta -> eta`` with one source per target entry."""

    source: NetworkSpec
    target: NetworkSpec
    source_index: np.ndarray
    factors: tuple[np.ndarray, ...]
    splits: tuple[SplitSpec, ...] = field(default=())

    def __post_init__(self):
        self.source_index.setflags(write=False)
        for f in self.factors:
            f.setflags(write=False)

    @property
    def coefficients(self) -> np.ndarray:
        c = np.ones(self.target.num_params)
        for f in self.factors:
            c = f * c
        return c

    @property
    def entries(self) -> list[tuple[int, int, float]]:
        """(target_index, source_index, coefficient) triples."""
        c = self.coefficients
        return [(t, int(s), float(v)) for t, (s, v) in enumerate(zip(self.source_index, c))]

    @property
    def has_dead_copy(self) -> bool:
        return any(s.has_dead_copy for s in self.splits)

    def column_norms_sq(self) -> np.ndarray:
        c = self.coefficients
        return np.bincount(self.source_index, weights=c * c, minlength=self.source.num_params)

    def to_dense(self) -> np.ndarray:
        M = np.zeros((self.target.num_params, self.source.num_params))
        M[np.arange(self.target.num_params), self.source_index] = self.coefficients
        return M


def identity(spec: NetworkSpec) -> SplitTransform:
    m = spec.num_params
    return SplitTransform(spec, spec, np.arange(m), (np.ones(m),))


def build_split(source: NetworkSpec, s: SplitSpec) -> SplitTransform:
    if not 1 <= s.layer <= source.hidden_layers:
        raise SplitError(
            f"layer {s.layer} is not a hidden layer (valid: 1..{source.hidden_layers})"
        )
    k, j, c = s.layer, s.neuron, np.asarray(s.coeffs)
    width = source.widths[k]
    if not 0 <= j < width:
        raise SplitError(f"neuron {j} out of range for layer {k} of width {width}")
    extra = s.m_split - 1
    target = source.with_width(k, width + extra)

    # per-layer: index map over rows/cols of the target matrix, and row/col scale
    src_idx, coef = [], []
    for l, ((off, r, cols), (_, tr, tc)) in enumerate(zip(source.layout(), target.layout()), 1):
        rows_map = np.arange(r)
        cols_map = np.arange(cols)
        row_scale = np.ones(r)
        col_scale = np.ones(cols)
        if l == k:
            rows_map = np.concatenate([rows_map, np.full(extra, j)])
            row_scale = np.concatenate([row_scale, c[1:]])
            row_scale[j] = c[0]
        if l == k + 1:
            cols_map = np.concatenate([cols_map, np.full(extra, j)])
            col_scale = np.concatenate([col_scale, c[1:]])
            col_scale[j] = c[0]
        assert rows_map.size == tr and cols_map.size == tc
        src_idx.append((off + rows_map[:, None] * cols + cols_map[None, :]).ravel())
        coef.append((row_scale[:, None] * col_scale[None, :]).ravel())
    return SplitTransform(
        source,
        target,
        np.concatenate(src_idx).astype(np.intp),
        (np.concatenate(coef),),
        (s,),
    )


def build_splits(source: NetworkSpec, splits) -> SplitTransform:
    """Compose a sequence of splits applied in list order."""
    T = None
    for s in splits:
        step = build_split(source if T is None else T.target, s)
        T = step if T is None else compose(step, T)
    return identity(source) if T is None else T


def _check_source(T: SplitTransform, theta) -> np.ndarray:
    try:
        return check_params(T.source, theta)
    except LayoutError as exc:
        raise LayoutError(f"not a source-space vector: {exc}") from None


def apply(T: SplitTransform, theta) -> np.ndarray:
    theta = _check_source(T, theta)
    eta = theta[T.source_index]
    for f in T.factors:
        eta = f * eta
    return eta


def left_inverse(T: SplitTransform, eta) -> np.ndarray:
    """``T^T eta``; the exact inverse of :func:`apply` on its image."""
    eta = np.asarray(eta, dtype=np.float64)
    if eta.shape != (T.target.num_params,):
        raise LayoutError(f"not a target-space vector: shape {eta.shape}")
    return np.bincount(
        T.source_index, weights=T.coefficients * eta, minlength=T.source.num_params
    )


def compose(T2: SplitTransform, T1: SplitTransform) -> SplitTransform:
    """The map ``T2 o T1`` (apply T1 first)."""
    if T1.target != T2.source:
        raise SplitError(
            f"cannot compose: T1 maps into {T1.target.widths}, T2 expects {T2.source.widths}"
        )
    idx = T1.source_index[T2.source_index]
    factors = tuple(f[T2.source_index] for f in T1.factors) + T2.factors
    return SplitTransform(T1.source, T2.target, idx, factors, T1.splits + T2.splits)


# -- embedding verification ------------------------------------------------------

@dataclass(frozen=True)
class EmbeddingCheckConfig:
    tau: float = 1.0
    output_tol: float = 1e-10
    subgradient_tol: float = 1e-10
    isometry_tol: float = 1e-12

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")


@dataclass
class EmbeddingReport:
    samples: int
    max_output_error: float
    max_subgradient_error: float
    max_isometry_error: float
    kink_samples: int
    passed: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def verify_embedding(
    T: SplitTransform,
    thetas,
    xs,
    rule: KinkRule = KinkRule(),
    cfg: EmbeddingCheckConfig = EmbeddingCheckConfig(),
) -> EmbeddingReport:
    """Check output, subgradient-element and norm preservation on samples.

    Errors are scaled as ``|diff| / max(1, |reference|)``; the same kink rule
    is used on both sides so the backprop elements correspond path by path.
    """
    if T.has_dead_copy and rule.slope_at_zero != 0.0:
        warnings.warn(
            "split has a zero coefficient; the mapping at the dead copy is only "
            "guaranteed under the slope-0 convention",
            stacklevel=2,
        )
    out_err = sub_err = iso_err = 0.0
    kink_samples = 0
    count = 0
    for theta in thetas:
        theta = _check_source(T, theta)
        eta = apply(T, theta)
        nrm = float(np.linalg.norm(theta))
        if nrm > 0:
            iso_err = max(iso_err, abs(float(np.linalg.norm(eta)) - nrm) / nrm)
        for x in xs:
            src = backprop(T.source, theta, x, rule)
            tgt = backprop(T.target, eta, x, rule)
            out_err = max(out_err, abs(tgt.output - src.output) / max(1.0, abs(src.output)))
            mapped = cfg.tau * apply(T, src.gradient)
            scale = max(1.0, float(np.linalg.norm(src.gradient)))
            sub_err = max(sub_err, float(np.linalg.norm(tgt.gradient - mapped)) / scale)
            kink_samples += bool(src.kink_hits)
            count += 1
    passed = (
        out_err <= cfg.output_tol
        and sub_err <= cfg.subgradient_tol
        and iso_err <= cfg.isometry_tol
    )
    return EmbeddingReport(count, out_err, sub_err, iso_err, kink_samples, passed)


def output_error(T: SplitTransform, theta, x) -> float:
    a, _ = forward(T.source, theta, x)
    b, _ = forward(T.target, apply(T, theta), x)
    return abs(b - a)


# -- split files -------------------------------------------------------------

def splits_from_dict(data) -> list[SplitSpec]:
    items = data["splits"] if isinstance(data, dict) else data
    return [SplitSpec(d["layer"], d["neuron"], tuple(d["coeffs"])) for d in items]


def load_splits(path) -> list[SplitSpec]:
    return splits_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def save_splits(path, splits) -> None:
    payload = {"splits": [s.to_dict() for s in splits]}
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
