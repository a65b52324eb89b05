"""Hypothesis strategies shared by the property tests."""
import numpy as np
from hypothesis import strategies as st

from kktembed.net import NetworkSpec
from kktembed.transform import SplitSpec

seeds = st.integers(min_value=0, max_value=2**32 - 1)


@st.composite
def networks(draw, max_depth=4, max_width=8, leaky=True):
    depth = draw(st.integers(1, max_depth))
    d = draw(st.integers(1, 4))
    hidden = draw(st.lists(st.integers(1, max_width), min_size=depth - 1, max_size=depth - 1))
    acts = []
    for _ in hidden:
        if leaky and draw(st.booleans()):
            acts.append(f"leaky-relu:{draw(st.sampled_from([0.01, 0.1, 0.25, 0.5]))}")
        else:
            acts.append("relu")
    return NetworkSpec((d, *hidden, 1), tuple(acts))


@st.composite
def coeffs(draw, max_m=4, allow_zero=True):
    m = draw(st.integers(1, max_m))
    entry = st.floats(0.05, 1.0)
    if allow_zero:
        entry = st.one_of(st.just(0.0), entry)
    raw = draw(st.lists(entry, min_size=m, max_size=m))
    c = np.array(raw)
    if not np.any(c):
        c[0] = 1.0
    return tuple(c / np.linalg.norm(c))


@st.composite
def split_cases(draw, max_depth=4, max_width=8, allow_zero=True):
    """(network with a hidden layer, split of one of its neurons)."""
    spec = draw(networks(max_depth=max_depth, max_width=max_width).filter(lambda s: s.hidden_layers))
    k = draw(st.integers(1, spec.hidden_layers))
    j = draw(st.integers(0, spec.widths[k] - 1))
    return spec, SplitSpec(k, j, draw(coeffs(allow_zero=allow_zero)))
