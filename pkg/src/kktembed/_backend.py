"""Kernel selection at import time.

The compiled Cython kernel is used when it was built; otherwise the numpy
fallback. ``KKTEMBED_BACKEND=python`` forces the fallback.
"""
import os

from kktembed import _kernels_py

name = "python"
kernels = _kernels_py

if os.environ.get("KKTEMBED_BACKEND", "").lower() != "python":
    try:
        from kktembed import _kernels as _compiled
    except ImportError:
        pass
    else:
        kernels = _compiled
        name = "cython"


def use(backend: str) -> None:
    """Switch kernels at runtime (benchmarks and cross-checks only)."""
    global kernels, name
    if backend == "python":
        kernels, name = _kernels_py, "python"
    elif backend == "cython":
        from kktembed import _kernels as compiled

        kernels, name = compiled, "cython"
    else:
        raise ValueError(f"unknown backend {backend!r}")
