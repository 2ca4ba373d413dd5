"""Differentiable relaxations of one picking round and of full Round Robin."""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    return tau


def one_round(V) -> np.ndarray:
    """Hard single round: agent ``i`` takes its best good among those left by agents ``< i``."""
    V = np.asarray(V, dtype=np.float64)
    n, m = V.shape
    if n > m:
        raise ValueError(f"one round needs n <= m so every agent can pick (n={n}, m={m})")
    R = np.zeros((n, m))
    left = np.ones(m, dtype=bool)
    for i in range(n):
        g = int(np.argmax(np.where(left, V[i], -np.inf)))
        R[i, g] = 1.0
        left[g] = False
    return R


def soft_round(V, tau: float) -> Tensor:
    """Soft single round.

    Each agent in turn takes a softmax over its min-shifted values masked by
    the soft "still available" vector ``c``, which is then multiplied by
    ``1 - y``. Rows of the result sum to 1.
    """
    tau = _check_tau(tau)
    V = ad.as_tensor(V)
    n, m = V.shape
    c = Tensor(np.ones((1, m)))
    rows = []
    for i in range(n):
        v = ad.slice_rows(V, i, i + 1)
        shifted = ad.add_const(v - ad.row_min(v), 1.0)
        y = ad.row_softmax(ad.scale(shifted * c, 1.0 / tau))
        c = ad.add_const(-y, 1.0) * c
        rows.append(y)
    return ad.vstack(rows)


def repeat_rows(M, k: int) -> Tensor:
    return ad.repeat_rows(ad.as_tensor(M), k)


def soft_rr(V, tau: float) -> Tensor:
    """Soft Round Robin: one soft round over ``ceil(m/n)`` stacked copies of ``V``, blocks summed."""
    V = ad.as_tensor(V)
    n, m = V.shape
    k = math.ceil(m / n)
    R_rep = soft_round(repeat_rows(V, k), tau)
    R = ad.slice_rows(R_rep, 0, n)
    for b in range(1, k):
        R = R + ad.slice_rows(R_rep, b * n, (b + 1) * n)
    return R
