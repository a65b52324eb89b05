"""Binary classification datasets: container, CSV files, generators."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError(f"X must be 2-d, got shape {X.shape}")
        if X.shape[0] < 1:
            raise ValueError("dataset needs at least one point")
        if y.shape != (X.shape[0],):
            raise ValueError(f"y has shape {y.shape}, expected ({X.shape[0]},)")
        if not np.all(np.abs(y) == 1):
            raise ValueError("labels must be +1 or -1")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @classmethod
    def from_pairs(cls, pairs) -> "Dataset":
        xs, ys = zip(*pairs)
        return cls(np.array(xs, dtype=np.float64), np.array(ys, dtype=np.float64))


def save_csv(path, data: Dataset) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x_{i + 1}" for i in range(data.dim)] + ["y"])
        for x, y in zip(data.X, data.y):
            w.writerow([repr(float(v)) for v in x] + [int(y)])


def load_csv(path) -> Dataset:
    with open(Path(path), newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], [r for r in rows[1:] if r]
    if header[-1].strip() != "y":
        raise ValueError(f"{path}: last column must be 'y', got {header[-1]!r}")
    arr = np.array([[float(v) for v in r] for r in body])
    return Dataset(arr[:, :-1], arr[:, -1])


def gaussian_blobs(n: int, dim: int = 2, separation: float = 1.0, gap: float = 0.2,
                   seed: int = 0) -> Dataset:
    """Two Gaussian blobs at ``+-separation * u``, separable by construction.

    Labels come from a planted unit direction ``u``; points with
    ``y * <u, x> < gap`` are redrawn, so the data is linearly separable
    through the origin with margin at least ``gap``.
    """
    rng = np.random.default_rng(seed)
    u = rng.normal(size=dim)
    u /= np.linalg.norm(u)
    X = np.empty((n, dim))
    y = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    for i in range(n):
        while True:
            x = y[i] * separation * u + rng.normal(size=dim)
            if y[i] * (u @ x) >= gap:
                break
        X[i] = x
    return Dataset(X, y)


def xor(scale: float = 1.0) -> Dataset:
    """Four XOR corners; not separable by any linear model through the origin."""
    X = scale * np.array([[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]])
    return Dataset(X, np.array([1.0, 1.0, -1.0, -1.0]))
