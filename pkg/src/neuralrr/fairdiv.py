"""Exact fair-division primitives for additive valuations.

Agents and goods are 0-indexed throughout. A valuation profile is an
``(n, m)`` array ``V`` with ``V[i, j]`` the value agent ``i`` has for good
``j``; an allocation is an ``(n, m)`` 0/1 array with one 1 per column.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


def as_profile(V) -> np.ndarray:
    """Validate and return a valuation profile as a float64 array."""
    arr = np.asarray(V, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"valuation profile must be a non-empty n x m matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError("valuations must be finite and nonnegative")
    return arr


def check_allocation(A, shape: tuple[int, int] | None = None) -> np.ndarray:
    arr = np.asarray(A)
    if arr.ndim != 2:
        raise ValueError(f"allocation must be a matrix, got shape {arr.shape}")
    if shape is not None and arr.shape != tuple(shape):
        raise ValueError(f"allocation shape {arr.shape} does not match profile shape {tuple(shape)}")
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError("allocation entries must be 0 or 1")
    sums = arr.sum(axis=0)
    bad = np.flatnonzero(sums != 1)
    if bad.size:
        raise ValueError(f"good {int(bad[0])} is assigned to {int(sums[bad[0]])} agents, expected exactly 1")
    return arr.astype(np.int64)


def bundles(A) -> list[set[int]]:
    """Turn an allocation matrix into a list of per-agent good sets."""
    A = np.asarray(A)
    return [set(np.flatnonzero(row).tolist()) for row in A]


def from_bundles(bundle_list: Sequence[Iterable[int]], m: int) -> np.ndarray:
    A = np.zeros((len(bundle_list), m), dtype=np.int64)
    for i, goods in enumerate(bundle_list):
        for j in goods:
            A[i, j] = 1
    return check_allocation(A)


@dataclass(frozen=True)
class AgentPermutation:
    """An ordering of agents.

    ``order[p]`` is the agent at position ``p`` (position 0 picks first) and
    ``position[i]`` is where agent ``i`` sits.
    """

    order: tuple[int, ...]
    position: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        order = tuple(int(a) for a in self.order)
        if sorted(order) != list(range(len(order))):
            raise ValueError(f"not a permutation of 0..{len(order) - 1}: {order}")
        pos = [0] * len(order)
        for p, agent in enumerate(order):
            pos[agent] = p
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "position", tuple(pos))

    @classmethod
    def identity(cls, n: int) -> "AgentPermutation":
        return cls(tuple(range(n)))

    @classmethod
    def from_positions(cls, position: Sequence[int]) -> "AgentPermutation":
        order = [0] * len(position)
        for agent, p in enumerate(position):
            order[p] = agent
        return cls(tuple(order))

    def __len__(self) -> int:
        return len(self.order)

    def matrix(self) -> np.ndarray:
        """Permutation matrix ``P`` with ``P[p, order[p]] = 1``, so ``(P @ V)[p] = V[order[p]]``."""
        n = len(self.order)
        P = np.zeros((n, n))
        P[np.arange(n), self.order] = 1.0
        return P


def bundle_value(V, agent: int, bundle: Iterable[int]) -> float:
    V = np.asarray(V, dtype=np.float64)
    n, m = V.shape
    if not 0 <= agent < n:
        raise IndexError(f"agent {agent} out of range for {n} agents")
    goods = list(bundle)
    for j in goods:
        if not 0 <= j < m:
            raise IndexError(f"good {j} out of range for {m} goods")
    return float(sum(V[agent, j] for j in goods))


def round_robin(V) -> np.ndarray:
    """Round Robin in index order; each pick takes the earliest best remaining good."""
    V = as_profile(V)
    n, m = V.shape
    A = np.zeros((n, m), dtype=np.int64)
    taken = np.zeros(m, dtype=bool)
    remaining = m
    for _ in range(math.ceil(m / n)):
        for i in range(n):
            if remaining == 0:
                break
            vals = np.where(taken, -np.inf, V[i])
            g = int(np.argmax(vals))
            A[i, g] = 1
            taken[g] = True
            remaining -= 1
    return A


def round_robin_induced(V, perm: AgentPermutation) -> np.ndarray:
    """Round Robin where the agent at ``perm.order[0]`` picks first, and so on."""
    V = as_profile(V)
    if not isinstance(perm, AgentPermutation):
        perm = AgentPermutation(tuple(perm))
    if len(perm) != V.shape[0]:
        raise ValueError(f"permutation has length {len(perm)}, profile has {V.shape[0]} agents")
    order = np.asarray(perm.order)
    A_virtual = round_robin(V[order])
    A = np.empty_like(A_virtual)
    A[order] = A_virtual
    return A


def _bundle_values(V: np.ndarray, A: np.ndarray) -> np.ndarray:
    # W[i, k] = agent i's value for agent k's bundle
    return V @ A.T


def is_ef(V, A) -> bool:
    V = as_profile(V)
    A = check_allocation(A, V.shape)
    W = _bundle_values(V, A)
    return bool(np.all(np.diag(W)[:, None] >= W))


def is_ef1(V, A, exhaustive: bool = False) -> bool:
    """EF1 check.

    The default removes, for each envied bundle, the single good the envious
    agent likes most, which is the best possible removal under additive
    values. ``exhaustive=True`` tries every removal instead.
    """
    V = as_profile(V)
    A = check_allocation(A, V.shape)
    n = V.shape[0]
    W = _bundle_values(V, A)
    for i in range(n):
        own = W[i, i]
        for k in range(n):
            if k == i or own >= W[i, k]:
                continue
            goods = np.flatnonzero(A[k])
            if exhaustive:
                ok = any(own >= W[i, k] - V[i, o] for o in goods)
            else:
                ok = own >= W[i, k] - V[i, goods].max()
            if not ok:
                return False
    return True


def utilitarian_welfare(V, A) -> float:
    V = np.asarray(V, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    if A.shape != V.shape:
        raise ValueError(f"allocation shape {A.shape} does not match profile shape {V.shape}")
    return float((A * V).sum())


def muw_allocation(V) -> np.ndarray:
    """Welfare-maximising allocation: each good to the first agent valuing it most."""
    V = as_profile(V)
    A = np.zeros(V.shape, dtype=np.int64)
    A[np.argmax(V, axis=0), np.arange(V.shape[1])] = 1
    return A


def all_allocations(n: int, m: int):
    """Yield every one of the ``n**m`` integral allocations."""
    for owners in itertools.product(range(n), repeat=m):
        A = np.zeros((n, m), dtype=np.int64)
        A[list(owners), np.arange(m)] = 1
        yield A


def brute_force_max_welfare(V) -> float:
    V = as_profile(V)
    n, m = V.shape
    return max(utilitarian_welfare(V, A) for A in all_allocations(n, m))
