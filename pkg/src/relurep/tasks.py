"""Datasets: the seven-task periodic family, the two-task coupling example, CSV I/O.

Missing targets are allowed and stored as NaN; the loss only counts observed
entries. This is how a task with few samples shares inputs with a densely
sampled task.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    names: tuple[str, ...] = ()

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        Y = np.array(self.Y, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.shape[0] != Y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
        if not np.all(np.isfinite(X)):
            raise ValueError("inputs must be finite")
        if np.any(np.isinf(Y)):
            raise ValueError("targets must be finite or NaN (missing)")
        names = tuple(self.names) or tuple(f"y_{k + 1}" for k in range(Y.shape[1]))
        if len(names) != Y.shape[1]:
            raise ValueError("one name per output column required")
        X.flags.writeable = False
        Y.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d_in(self) -> int:
        return self.X.shape[1]

    @property
    def d_out(self) -> int:
        return self.Y.shape[1]

    @property
    def mask(self) -> np.ndarray:
        """Boolean array of observed targets."""
        return ~np.isnan(self.Y)

    @property
    def complete(self) -> bool:
        return bool(np.all(self.mask))

    def column(self, k: int) -> "Dataset":
        """Single-output dataset restricted to rows where output k is observed."""
        rows = self.mask[:, k]
        return Dataset(self.X[rows], self.Y[rows, k : k + 1], (self.names[k],))


# -- periodic seven-task family -----------------------------------------------

PERIODIC_SHAPES = {
    "one_kink": lambda p: np.maximum(p, 0.0),
    "absolute_value": np.abs,
    "square": np.square,
    "sign": np.sign,
    "cubic": lambda p: p**3,
    "sine": lambda p: np.sin(3.0 * p),
    "exponential": np.exp,
}

PERIODIC_DEFAULTS = dict(N=60, period=1.0, periods=3.0, noise_sd=0.05)


def _shape_moments(name: str, samples: int = 200_000) -> tuple[float, float]:
    # population mean/std of shape(sin(t)) over one period, midpoint rule
    t = (np.arange(samples) + 0.5) * (2 * np.pi / samples)
    vals = PERIODIC_SHAPES[name](np.sin(t))
    return float(vals.mean()), float(vals.std())


_MOMENTS = {name: _shape_moments(name) for name in PERIODIC_SHAPES}


def periodic7_truth(x, period: float = 1.0) -> np.ndarray:
    """Noise-free standardised outputs of the seven periodic tasks, ``(N, 7)``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    p = np.sin(2 * np.pi * x / period)
    cols = []
    for name, fn in PERIODIC_SHAPES.items():
        mean, std = _MOMENTS[name]
        cols.append((fn(p) - mean) / std)
    return np.stack(cols, axis=1)


def gen_periodic7(
    N: int = 60,
    period: float = 1.0,
    noise_sd: float = 0.05,
    seed: int = 0,
    periods: float = 3.0,
) -> Dataset:
    """Seven periodic outputs of a shared phase p(x) = sin(2 pi x / period).

    Inputs are uniform on ``[0, periods * period]``; each output is one of
    the shapes in :data:`PERIODIC_SHAPES` applied to p, standardised with its
    population moments, plus Gaussian noise.
    """
    if N < 2:
        raise ValueError("need at least two samples")
    if periods < 3:
        raise ValueError("the input interval must cover at least three periods")
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(0.0, periods * period, size=N))
    Y = periodic7_truth(x, period) + noise_sd * rng.standard_normal((N, 7))
    return Dataset(x[:, None], Y, tuple(PERIODIC_SHAPES))


# -- two-task coupling example ------------------------------------------------

COUPLING_KINKS = (-1.0, 0.0, 1.0)
_TASK1_SLOPES = (1.0, -2.0, 1.0)  # hat function, zero outside [-1, 1]
_TASK2_SLOPES = (-1.0, 3.0, -2.0)


def coupling_truth(x) -> np.ndarray:
    """Noise-free outputs ``(N, 2)`` of the coupling example.

    Both tasks are piecewise linear with kinks exactly at -1, 0 and 1.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    cols = []
    for slopes in (_TASK1_SLOPES, _TASK2_SLOPES):
        cols.append(sum(a * np.maximum(x - k, 0.0) for a, k in zip(slopes, COUPLING_KINKS)))
    return np.stack(cols, axis=1)


def gen_coupling_pair(
    seed: int = 0,
    n_dense: int = 41,
    n_sparse: int = 4,
    noise_dense: float = 0.01,
    noise_sparse: float = 0.05,
    lo: float = -2.0,
    hi: float = 2.0,
) -> Dataset:
    """Dense task 1 and a sparsely observed task 2 sharing the kink set {-1, 0, 1}.

    Task 1 is observed at ``n_dense`` equispaced inputs; task 2 only at
    ``n_sparse`` of those rows (chosen at random, away from the kinks) and is
    NaN elsewhere.
    """
    rng = np.random.default_rng(seed)
    x = np.linspace(lo, hi, n_dense)
    Y = coupling_truth(x)
    Y[:, 0] += noise_dense * rng.standard_normal(n_dense)
    off_kink = np.flatnonzero(np.min(np.abs(x[:, None] - np.array(COUPLING_KINKS)), axis=1) > 0.2)
    rows = np.sort(rng.choice(off_kink, size=n_sparse, replace=False))
    task2 = np.full(n_dense, np.nan)
    task2[rows] = Y[rows, 1] + noise_sparse * rng.standard_normal(n_sparse)
    Y[:, 1] = task2
    return Dataset(x[:, None], Y, ("task1", "task2"))


# -- CSV ----------------------------------------------------------------------


class DataFormatError(ValueError):
    pass


def save_csv(dataset: Dataset, path) -> None:
    """Write ``x_1..x_din,y_1..y_dout`` with 17 significant digits; NaN as empty."""
    header = [f"x_{i + 1}" for i in range(dataset.d_in)] + [
        f"y_{k + 1}" for k in range(dataset.d_out)
    ]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for xrow, yrow in zip(dataset.X, dataset.Y):
            writer.writerow(
                [f"{v:.17g}" for v in xrow] + ["" if np.isnan(v) else f"{v:.17g}" for v in yrow]
            )


def load_csv(path) -> Dataset:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    d_in = sum(1 for h in header if h.startswith("x_"))
    d_out = sum(1 for h in header if h.startswith("y_"))
    expected = [f"x_{i + 1}" for i in range(d_in)] + [f"y_{k + 1}" for k in range(d_out)]
    if d_in == 0 or d_out == 0 or header != expected:
        raise DataFormatError(f"{path}:1: header must be x_1..x_din,y_1..y_dout, got {header}")
    X, Y = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != d_in + d_out:
            raise DataFormatError(f"{path}:{lineno}: expected {d_in + d_out} fields, got {len(row)}")
        try:
            X.append([float(v) for v in row[:d_in]])
            Y.append([float(v) if v.strip() else np.nan for v in row[d_in:]])
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: {exc}") from None
    if not X:
        raise DataFormatError(f"{path}: no data rows")
    return Dataset(np.array(X), np.array(Y))
