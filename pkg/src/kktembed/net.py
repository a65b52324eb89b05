"""Bias-free homogeneous feedforward networks with scalar output.

Parameters live in one flat vector. Layers are stored in order
W1, W2, ..., W_{L}, each flattened row-major, so ``W_l`` has shape
``(widths[l], widths[l-1])``.

The per-sample functions (:func:`forward`, :func:`backprop`) are plain numpy
reference implementations. The batched functions dispatch to the compiled
kernel when it is available (see :mod:`kktembed._backend`).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from kktembed import _backend

DEFAULT_LEAKY_SLOPE = 0.01


class LayoutError(ValueError):
    """Array shapes do not match the network layout."""


def _parse_activation(name: str) -> tuple[str, float]:
    kind, _, arg = name.partition(":")
    kind = kind.strip().lower().replace("_", "-")
    if kind == "relu":
        if arg:
            raise ValueError(f"relu takes no slope argument: {name!r}")
        return "relu", 0.0
    if kind == "leaky-relu":
        slope = float(arg) if arg else DEFAULT_LEAKY_SLOPE
        if not 0.0 < slope < 1.0:
            raise ValueError(f"leaky-relu slope must lie in (0, 1), got {slope}")
        return "leaky-relu", slope
    raise ValueError(f"unsupported activation {name!r} (expected relu or leaky-relu)")


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture of a bias-free MLP.

    ``widths`` runs from the input dimension to the scalar output, so a
    linear model on R^d is ``NetworkSpec((d, 1))`` and a two-layer network
    with h hidden units is ``NetworkSpec((d, h, 1))``. Activations are given
    per hidden layer as ``"relu"``, ``"leaky-relu"`` or ``"leaky-relu:<a>"``.
    """

    widths: tuple[int, ...]
    activations: tuple[str, ...] | None = None

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if len(widths) < 2:
            raise ValueError("need at least an input and an output width")
        if widths[-1] != 1:
            raise ValueError(f"output width must be 1, got {widths[-1]}")
        if any(w < 1 for w in widths):
            raise ValueError(f"widths must be positive, got {widths}")
        acts = self.activations
        if acts is None:
            acts = ("relu",) * (len(widths) - 2)
        acts = tuple(acts)
        if len(acts) != len(widths) - 2:
            raise ValueError(
                f"{len(widths) - 2} hidden layers but {len(acts)} activations"
            )
        for a in acts:
            _parse_activation(a)
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "activations", acts)

    @property
    def order(self) -> int:
        """Homogeneity degree, equal to the number of weight matrices."""
        return len(self.widths) - 1

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def hidden_layers(self) -> int:
        return len(self.widths) - 2

    @property
    def negative_slopes(self) -> tuple[float, ...]:
        return tuple(_parse_activation(a)[1] for a in self.activations)

    @property
    def num_params(self) -> int:
        return sum(self.widths[l] * self.widths[l - 1] for l in range(1, len(self.widths)))

    def layer_shapes(self) -> list[tuple[int, int]]:
        return [(self.widths[l], self.widths[l - 1]) for l in range(1, len(self.widths))]

    def layout(self) -> list[tuple[int, int, int]]:
        """(offset, rows, cols) for every weight matrix."""
        out, offset = [], 0
        for rows, cols in self.layer_shapes():
            out.append((offset, rows, cols))
            offset += rows * cols
        return out

    def with_width(self, layer: int, width: int) -> "NetworkSpec":
        widths = list(self.widths)
        widths[layer] = width
        return NetworkSpec(tuple(widths), self.activations)

    def to_dict(self) -> dict:
        return {"widths": list(self.widths), "activations": list(self.activations)}


@dataclass(frozen=True)
class KinkRule:
    """Selects one element of the activation's Clarke subdifferential at 0.

    For relu the chosen derivative at zero is ``slope_at_zero`` itself; for a
    leaky-relu with negative slope ``a`` it is ``a + slope_at_zero * (1 - a)``,
    so the whole interval [a, 1] is reachable.
    """

    slope_at_zero: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.slope_at_zero <= 1.0:
            raise ValueError(f"slope_at_zero must lie in [0, 1], got {self.slope_at_zero}")

    def derivative_at_zero(self, negative_slope: float) -> float:
        return negative_slope + self.slope_at_zero * (1.0 - negative_slope)


@dataclass
class ForwardCache:
    preactivations: list[np.ndarray]
    activations: list[np.ndarray]
    output: float


@dataclass
class SubgradientElement:
    gradient: np.ndarray
    output: float
    kink_hits: list[tuple[int, int]] = field(default_factory=list)


def check_params(spec: NetworkSpec, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 1 or theta.shape[0] != spec.num_params:
        raise LayoutError(
            f"parameter vector has shape {theta.shape}, expected ({spec.num_params},)"
        )
    return theta


def _check_input(spec: NetworkSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != spec.input_dim:
        raise LayoutError(f"input has shape {x.shape}, expected ({spec.input_dim},)")
    return x


def unflatten(spec: NetworkSpec, theta) -> list[np.ndarray]:
    """Views of the weight matrices inside ``theta`` (no copy)."""
    theta = check_params(spec, theta)
    return [theta[o : o + r * c].reshape(r, c) for o, r, c in spec.layout()]


def flatten(weights) -> np.ndarray:
    return np.concatenate([np.asarray(w, dtype=np.float64).ravel() for w in weights])


def spec_from_weights(weights, activations=None) -> NetworkSpec:
    widths = [np.shape(weights[0])[1]] + [np.shape(w)[0] for w in weights]
    return NetworkSpec(tuple(widths), None if activations is None else tuple(activations))


def _act(z, a):
    return np.where(z > 0, z, a * z)


def forward(spec: NetworkSpec, theta, x) -> tuple[float, ForwardCache]:
    x = _check_input(spec, x)
    weights = unflatten(spec, theta)
    slopes = spec.negative_slopes
    pre, post = [], [x]
    h = x
    for l, W in enumerate(weights):
        z = W @ h
        pre.append(z)
        h = _act(z, slopes[l]) if l < len(slopes) else z
        post.append(h)
    out = float(h[0])
    return out, ForwardCache(pre, post, out)


def backprop(spec: NetworkSpec, theta, x, rule: KinkRule = KinkRule()) -> SubgradientElement:
    out, cache = forward(spec, theta, x)
    weights = unflatten(spec, theta)
    slopes = spec.negative_slopes
    grads = [None] * len(weights)
    kinks = []
    delta = np.ones(1)
    for l in range(len(weights) - 1, -1, -1):
        grads[l] = np.outer(delta, cache.activations[l])
        if l == 0:
            break
        e = weights[l].T @ delta
        z = cache.preactivations[l - 1]
        a = slopes[l - 1]
        d = np.where(z > 0, 1.0, a)
        at_zero = z == 0
        if at_zero.any():
            d = np.where(at_zero, rule.derivative_at_zero(a), d)
            kinks.extend((l, int(i)) for i in np.flatnonzero(at_zero))
        delta = d * e
    kinks.sort()
    return SubgradientElement(flatten(grads), out, kinks)


def euler_check(spec: NetworkSpec, theta, x, rule: KinkRule = KinkRule()) -> float:
    """|<g, theta> - L * Phi(theta; x)| for the backprop element g."""
    theta = check_params(spec, theta)
    el = backprop(spec, theta, x, rule)
    return abs(float(el.gradient @ theta) - spec.order * el.output)


# -- batched paths -------------------------------------------------------------

def _check_batch(spec: NetworkSpec, X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise LayoutError(f"inputs have shape {X.shape}, expected (n, {spec.input_dim})")
    return X


def _kernel_args(spec: NetworkSpec, rule: KinkRule):
    slopes = np.asarray(spec.negative_slopes, dtype=np.float64)
    at_zero = np.asarray([rule.derivative_at_zero(a) for a in slopes], dtype=np.float64)
    widths = np.asarray(spec.widths, dtype=np.int64)
    return widths, slopes, at_zero


def batch_outputs(spec: NetworkSpec, theta, X) -> np.ndarray:
    theta = np.ascontiguousarray(check_params(spec, theta))
    X = _check_batch(spec, X)
    widths, slopes, _ = _kernel_args(spec, KinkRule())
    return _backend.kernels.forward_batch(theta, widths, slopes, X)


def batch_gradients(spec: NetworkSpec, theta, X, rule: KinkRule = KinkRule()):
    """Outputs, per-sample Clarke elements (n x m) and per-sample kink counts."""
    theta = np.ascontiguousarray(check_params(spec, theta))
    X = _check_batch(spec, X)
    widths, slopes, at_zero = _kernel_args(spec, rule)
    return _backend.kernels.forward_backward_batch(theta, widths, slopes, at_zero, X)


# -- parameter files -----------------------------------------------------------

def _fmt(v: float) -> str:
    if not math.isfinite(v):
        raise ValueError("cannot serialize non-finite weight")
    return format(float(v), ".17g")


def dump_params(spec: NetworkSpec, theta) -> str:
    """JSON text for a parameter file; floats carry 17 significant digits."""
    theta = check_params(spec, theta)
    layers = []
    for o, r, c in spec.layout():
        layers.append("[" + ", ".join(_fmt(v) for v in theta[o : o + r * c]) + "]")
    return (
        "{\n"
        f'  "widths": {json.dumps(list(spec.widths))},\n'
        f'  "activations": {json.dumps(list(spec.activations))},\n'
        '  "weights": [\n    ' + ",\n    ".join(layers) + "\n  ]\n}\n"
    )


def save_params(path, spec: NetworkSpec, theta) -> None:
    Path(path).write_text(dump_params(spec, theta), encoding="utf-8")


def load_params(path) -> tuple[NetworkSpec, np.ndarray]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return params_from_dict(data)


def params_from_dict(data: dict) -> tuple[NetworkSpec, np.ndarray]:
    spec = NetworkSpec(tuple(data["widths"]), tuple(data.get("activations") or ()) or None)
    layers = data["weights"]
    shapes = spec.layer_shapes()
    if len(layers) != len(shapes):
        raise LayoutError(f"{len(layers)} weight layers for {len(shapes)} expected")
    for l, (layer, (r, c)) in enumerate(zip(layers, shapes)):
        if len(layer) != r * c:
            raise LayoutError(f"layer {l + 1} has {len(layer)} weights, expected {r * c}")
    theta = np.array([float(v) for layer in layers for v in layer], dtype=np.float64)
    return spec, theta
