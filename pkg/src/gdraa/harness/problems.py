"""Convex test problems with known optima."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgument

KINDS = ("least-squares", "logistic")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class SyntheticProblem:
    """Gaussian design matrix plus targets, regenerated from ``seed``.

    Least-squares targets are ``X @ w_true + noise``; logistic labels are drawn
    from the model's own probabilities. Losses are sample means, so the
    gradient of a batch is the mean of per-sample gradients.
    """

    kind: str = "least-squares"
    dimension: int = 10
    samples: int = 512
    seed: int = 0
    noise: float = 0.0
    X: np.ndarray = field(init=False, repr=False)
    y: np.ndarray = field(init=False, repr=False)
    w_true: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown problem kind {self.kind!r}")
        if self.dimension < 1 or self.samples < 1:
            raise InvalidArgument("dimension and samples must be >= 1")
        rng = np.random.default_rng(self.seed)
        self.X = rng.standard_normal((self.samples, self.dimension))
        self.w_true = rng.standard_normal(self.dimension)
        z = self.X @ self.w_true
        if self.kind == "least-squares":
            self.y = z + self.noise * rng.standard_normal(self.samples)
        else:
            self.y = (rng.random(self.samples) < _sigmoid(z)).astype(np.float64)

    def _rows(self, idx):
        if idx is None:
            return self.X, self.y
        return self.X[idx], self.y[idx]

    def loss(self, w: np.ndarray, idx=None, weight_decay: float = 0.0) -> float:
        X, y = self._rows(idx)
        z = X @ w
        if self.kind == "least-squares":
            data = 0.5 * float(np.mean((z - y) ** 2))
        else:
            # log(1 + e^z) - y z, written to avoid overflow
            data = float(np.mean(np.logaddexp(0.0, z) - y * z))
        return data + 0.5 * weight_decay * float(w @ w)

    def gradient(self, w: np.ndarray, idx=None) -> np.ndarray:
        """Mean data-loss gradient over the rows ``idx`` (all rows if None)."""
        X, y = self._rows(idx)
        z = X @ w
        r = z - y if self.kind == "least-squares" else _sigmoid(z) - y
        return X.T @ r / len(y)

    def optimum(self, weight_decay: float = 0.0) -> np.ndarray:
        """Minimiser of ``loss(w, weight_decay=weight_decay)`` over all samples.

        Closed form for least squares; Newton's method for logistic.
        """
        n, d = self.X.shape
        H = self.X.T @ self.X / n + weight_decay * np.eye(d)
        if self.kind == "least-squares":
            return np.linalg.solve(H, self.X.T @ self.y / n)
        w = np.zeros(d)
        for _ in range(100):
            p = _sigmoid(self.X @ w)
            g = self.gradient(w) + weight_decay * w
            H = (self.X * (p * (1 - p))[:, None]).T @ self.X / n + weight_decay * np.eye(d)
            step = np.linalg.solve(H, g)
            w = w - step
            if np.max(np.abs(step)) < 1e-14:
                break
        return w

    def optimal_loss(self, weight_decay: float = 0.0) -> float:
        return self.loss(self.optimum(weight_decay), weight_decay=weight_decay)


def batch_indices(samples: int, global_batch: int, iteration: int, seed: int) -> np.ndarray:
    """Sample indices of the global batch for ``iteration``.

    Each epoch walks a fresh seeded permutation; a batch that would run past
    the end of the permutation starts the next epoch instead, so batches never
    straddle epochs and always have ``global_batch`` rows.
    """
    if global_batch > samples:
        raise InvalidArgument(f"global batch {global_batch} exceeds {samples} samples")
    per_epoch = samples // global_batch
    epoch, k = divmod(iteration, per_epoch)
    order = np.random.default_rng([seed, epoch]).permutation(samples)
    return order[k * global_batch:(k + 1) * global_batch]


def shard(indices: np.ndarray, rank: int, n_workers: int) -> np.ndarray:
    """Rank ``rank``'s equal share of a global batch."""
    if len(indices) % n_workers:
        raise InvalidArgument(f"global batch {len(indices)} is not divisible by {n_workers} workers")
    b = len(indices) // n_workers
    return indices[rank * b:(rank + 1) * b]
