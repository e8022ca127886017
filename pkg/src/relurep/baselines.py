"""Random first-layer features with a ridge-trained output layer.

With v and b frozen, weight decay on (w, c) is a squared l2 penalty that
separates over outputs, so fitting all tasks jointly gives exactly the
per-task solutions. This is the decoupled contrast to the group penalty.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .net import NetworkParams, StackParams
from .tasks import Dataset


@dataclass(frozen=True)
class RandomFeatureModel:
    v: np.ndarray  # (n, d_in)
    b: np.ndarray  # (n,)
    W: np.ndarray  # (d_out, n)
    c: np.ndarray  # (d_out,)
    lam: float
    seed: int

    def to_network(self) -> NetworkParams:
        return NetworkParams((StackParams(self.v, self.b, self.W, self.c),))


def sample_features(data: Dataset, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """v ~ N(0, I); kinks uniform over the data's bounding box; b = -<v, kink>."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((n, data.d_in))
    lo, hi = data.X.min(axis=0), data.X.max(axis=0)
    kinks = rng.uniform(lo, hi, size=(n, data.d_in))
    b = -np.sum(v * kinks, axis=1)
    return v, b


def feature_matrix(v, b, X) -> np.ndarray:
    """ReLU features with a trailing constant column."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.hstack([np.maximum(X @ v.T + b, 0.0), np.ones((X.shape[0], 1))])


def _ridge(Phi: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    A = Phi.T @ Phi + lam * np.eye(Phi.shape[1])
    return np.linalg.solve(A, Phi.T @ y[:, None])[:, 0]


def fit_random_features(
    data: Dataset, lam: float, n: int, seed: int = 0, features=None
) -> RandomFeatureModel:
    """Solve ``(Phi^T Phi + lam I) [W; c] = Phi^T Y`` column by column.

    Each column uses only its observed rows and is solved on its own, so a
    task's coefficients are bitwise independent of the other tasks.
    """
    if n < 1:
        raise ValueError("need at least one feature")
    if not lam > 0:
        raise ValueError("lam must be positive")
    v, b = features if features is not None else sample_features(data, n, seed)
    Phi = feature_matrix(v, b, data.X)
    mask = data.mask
    coef = np.column_stack(
        [_ridge(Phi[mask[:, k]], data.Y[mask[:, k], k], lam) for k in range(data.d_out)]
    )
    return RandomFeatureModel(v, b, coef[:-1].T, coef[-1], lam, seed)


def fit_random_features_separate(
    data: Dataset, lam: float, n: int, seed: int = 0
) -> list[RandomFeatureModel]:
    """Per-task fits sharing the same sampled features."""
    feats = sample_features(data, n, seed)
    return [fit_random_features(data.column(k), lam, n, seed, feats) for k in range(data.d_out)]


def baseline_predict(model: RandomFeatureModel, x) -> np.ndarray:
    """``W relu(v x + b) + c``; a scalar, or a 1-d vector of length d_in > 1, is one point."""
    arr = np.asarray(x, dtype=float)
    d_in = model.v.shape[1]
    single = arr.ndim == 0 or (arr.ndim == 1 and d_in > 1)
    X = arr.reshape(-1, d_in)
    feats = np.maximum(X @ model.v.T + model.b, 0.0)
    # one product per output keeps each task's prediction independent of the others
    out = np.column_stack([feats @ wk for wk in model.W]) + model.c
    return out[0] if single else out
