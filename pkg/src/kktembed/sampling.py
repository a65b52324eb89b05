"""Random networks, splits, parameters and kink-adjacent samples."""
from __future__ import annotations

import numpy as np

from kktembed.net import NetworkSpec, check_params, forward, unflatten
from kktembed.transform import SplitSpec


def random_network(rng: np.random.Generator, depth=(2, 4), max_width: int = 16,
                   input_dim=(1, 4), leaky: bool = True) -> NetworkSpec:
    """Network with ``depth`` weight layers drawn from the given inclusive range."""
    L = int(rng.integers(depth[0], depth[1] + 1))
    d = int(rng.integers(input_dim[0], input_dim[1] + 1))
    hidden = [int(rng.integers(1, max_width + 1)) for _ in range(L - 1)]
    acts = []
    for _ in hidden:
        if leaky and rng.random() < 0.3:
            acts.append(f"leaky-relu:{rng.uniform(0.01, 0.5):.3f}")
        else:
            acts.append("relu")
    return NetworkSpec((d, *hidden, 1), tuple(acts))


def random_coeffs(rng: np.random.Generator, m: int, allow_zero: bool = False) -> tuple[float, ...]:
    c = np.abs(rng.normal(size=m))
    if allow_zero and m > 1 and rng.random() < 0.2:
        c[rng.integers(m)] = 0.0
    if not np.any(c):
        c[0] = 1.0
    return tuple(c / np.linalg.norm(c))


def random_split(rng: np.random.Generator, spec: NetworkSpec, max_m: int = 4,
                 allow_zero: bool = False) -> SplitSpec:
    k = int(rng.integers(1, spec.hidden_layers + 1))
    j = int(rng.integers(spec.widths[k]))
    m = int(rng.integers(2, max_m + 1))
    return SplitSpec(k, j, random_coeffs(rng, m, allow_zero))


def random_params(rng: np.random.Generator, spec: NetworkSpec, scale: float = 1.0) -> np.ndarray:
    return scale * rng.normal(size=spec.num_params)


def place_on_kink(spec: NetworkSpec, theta, x, layer: int, neuron: int,
                  offset: float = 0.0) -> np.ndarray:
    """Copy of ``theta`` whose ``(layer, neuron)`` preactivation at ``x`` equals ``offset``.

    The neuron's incoming row is moved along the layer input, so everything
    upstream is unchanged. Requires a nonzero input to that layer.
    """
    theta = np.array(check_params(spec, theta))
    _, cache = forward(spec, theta, x)
    h = cache.activations[layer - 1]
    hh = float(h @ h)
    if hh == 0.0:
        raise ValueError(f"input to layer {layer} is zero; cannot place a kink there")
    W = unflatten(spec, theta)[layer - 1]
    row = W[neuron]
    row -= ((row @ h - offset) / hh) * h
    # one correction for rounding
    z = row @ h
    row -= ((z - offset) / hh) * h
    return theta


def kink_samples(rng: np.random.Generator, spec: NetworkSpec, split: SplitSpec, count: int,
                 radius: float = 1e-9, scale: float = 1.0):
    """``count`` pairs ``(theta, x)`` with the split neuron's preactivation near 0.

    Every fifth sample sits exactly on the kink through a zero incoming row,
    which stays exactly zero after scaling. The others get a preactivation of
    random sign with magnitude in ``[radius / 100, radius]``, far enough from 0
    that rounding in the scaled copies cannot flip its sign.
    """
    out = []
    while len(out) < count:
        theta = random_params(rng, spec, scale)
        x = rng.normal(size=spec.input_dim)
        if len(out) % 5 == 0:
            unflatten(spec, theta)[split.layer - 1][split.neuron] = 0.0
        else:
            off = float(rng.choice([-1.0, 1.0]) * radius * 10 ** rng.uniform(-2, 0))
            try:
                theta = place_on_kink(spec, theta, x, split.layer, split.neuron, off)
            except ValueError:
                continue
        out.append((theta, x))
    return out


def split_preactivation(spec: NetworkSpec, theta, x, split: SplitSpec) -> float:
    _, cache = forward(spec, theta, x)
    return float(cache.preactivations[split.layer - 1][split.neuron])
