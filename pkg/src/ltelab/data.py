"""Synthetic least-squares tasks with controlled ground-truth rank.

Targets are noise-free (Y = W* X with standard-normal inputs), so the
ordinary-least-squares optimum of any generated task achieves exactly zero
loss: residual training loss is attributable to the optimizer and the
parameterization, never to the data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import Batch
from .numerics import Matrix, RandomSource, singular_values


@dataclass
class LeastSquaresTask:
    W_star: Matrix
    target_rank: int

    def __post_init__(self):
        sv = singular_values(self.W_star)
        significant = int(np.sum(sv > 1e-8 * sv[0]))
        if significant != self.target_rank:
            raise ValueError(
                f"W_star has numerical rank {significant}, expected {self.target_rank}"
            )

    @property
    def m(self) -> int:
        return self.W_star.shape[0]

    @property
    def n(self) -> int:
        return self.W_star.shape[1]


def _orthonormal_columns(dim: int, k: int, rng: RandomSource) -> Matrix:
    q, r = np.linalg.qr(rng.standard_normal((dim, k)))
    return q * np.where(np.diag(r) >= 0.0, 1.0, -1.0)


def gen_least_squares(m: int, n: int, target_rank: int, rng: RandomSource) -> LeastSquaresTask:
    """Task whose optimal map W* (m x n) has exactly the requested rank.

    W* = U diag(sigma) V^T with random orthonormal factors and target_rank
    singular values drawn uniformly from [0.5, 2]; keeping them bounded away
    from zero makes the rank numerically unambiguous.
    """
    if not 1 <= target_rank <= min(m, n):
        raise ValueError(f"target_rank must be in 1..{min(m, n)}, got {target_rank}")
    u = _orthonormal_columns(m, target_rank, rng.child("U"))
    v = _orthonormal_columns(n, target_rank, rng.child("V"))
    sigma = rng.child("sigma").uniform(0.5, 2.0, target_rank)
    return LeastSquaresTask(W_star=(u * sigma) @ v.T, target_rank=target_rank)


def sample_batch(task: LeastSquaresTask, batch_size: int, rng: RandomSource) -> Batch:
    """batch_size standard-normal input columns with exact targets W* x."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    x = rng.standard_normal((task.n, batch_size))
    return Batch(inputs=x, targets=task.W_star @ x)
