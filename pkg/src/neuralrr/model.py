"""NeuralRR: learn an agent order from the valuations, then run (soft) Round Robin in it.

Training path::

    V -> [U_r S_r | row min | row max] -> MLP -> TieBreak -> SoftSort = P
      -> P^T SoftRR(P V) -> column-normalise

Inference replaces SoftSort by a hard argsort and SoftRR by exact Round
Robin, so the output is Round Robin under a data-dependent order and is
EF1 for any weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .fairdiv import AgentPermutation, as_profile, round_robin_induced
from .jsonio import read_json, write_json
from .soft import soft_rr

NORMALIZE_EPS = 1e-12
SVD_MAX_ITER = 500
SVD_TOL = 1e-10
CHECKPOINT_FORMAT = "neuralrr-checkpoint"


class SVDConvergenceError(RuntimeError):
    pass


# -- features ----------------------------------------------------------------


def svd_embeddings(V, r: int, max_iter: int = SVD_MAX_ITER, tol: float = SVD_TOL) -> np.ndarray:
    """Rank-``r`` agent embeddings ``U_r * S_r`` of ``V``.

    Block subspace iteration on ``V V^T`` with a Rayleigh-Ritz step per
    sweep. Converged when the Ritz residual ``|G U - U diag(lam)|`` drops
    below ``tol`` (relative to the top eigenvalue), ``G = V V^T``. Each
    column's largest-magnitude entry is made nonnegative.
    """
    V = np.asarray(V, dtype=np.float64)
    n, m = V.shape
    if not 1 <= r <= min(n, m):
        raise ValueError(f"rank must lie in [1, {min(n, m)}], got {r}")
    G = V @ V.T
    block = min(n, max(2 * r, r + 10))
    # fixed start so features are a pure function of V
    Q, _ = np.linalg.qr(G @ np.random.default_rng(0).standard_normal((n, block)))
    for _ in range(max_iter):
        Q, _ = np.linalg.qr(G @ Q)
        evals, evecs = np.linalg.eigh(Q.T @ G @ Q)
        top = np.argsort(evals, kind="stable")[::-1][:r]
        lam = np.clip(evals[top], 0.0, None)
        U = Q @ evecs[:, top]
        # Ritz residual: well defined even when eigenvalues are repeated
        resid = np.max(np.abs(G @ U - U * evals[top]))
        if resid < tol * max(1.0, float(lam[0])):
            break
    else:
        raise SVDConvergenceError(f"subspace iteration did not converge within the cap of {max_iter} iterations")
    lead = np.argmax(np.abs(U), axis=0)
    signs = np.where(U[lead, np.arange(r)] < 0, -1.0, 1.0)
    return U * signs * np.sqrt(lam)


def agent_features(V, r: int) -> np.ndarray:
    """``[U_r S_r / sqrt(m) | row min | row max]``.

    Dividing by ``sqrt(m)`` keeps the embedding on the scale of a per-good
    value, so a scorer trained at one ``m`` transfers to another.
    """
    V = np.asarray(V, dtype=np.float64)
    emb = svd_embeddings(V, r) / np.sqrt(V.shape[1])
    return np.hstack([emb, V.min(axis=1, keepdims=True), V.max(axis=1, keepdims=True)])


# -- parameters ----------------------------------------------------------------


@dataclass
class NrrParams:
    rank: int
    tau: float
    tau_prime: float
    weights: list[Tensor]
    biases: list[Tensor]
    seed: int | None = None
    activation: str = field(default="tanh")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        return [w.shape for w in self.weights]

    def tensors(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "NrrParams":
        return NrrParams(
            self.rank,
            self.tau,
            self.tau_prime,
            [Tensor(w.data.copy(), requires_grad=True) for w in self.weights],
            [Tensor(b.data.copy(), requires_grad=True) for b in self.biases],
            self.seed,
            self.activation,
        )

    def with_temperatures(self, tau: float, tau_prime: float) -> "NrrParams":
        p = self.copy()
        p.tau, p.tau_prime = float(tau), float(tau_prime)
        return p


def init_params(rank: int = 3, seed: int = 0, hidden=(32, 32), tau: float = 1.0, tau_prime: float = 1.0) -> NrrParams:
    """MLP ``(rank + 2) -> hidden... -> 1`` with U(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights."""
    if rank < 1:
        raise ValueError("rank must be positive")
    rng = np.random.default_rng(seed)
    widths = [rank + 2, *hidden, 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True))
        biases.append(Tensor(rng.uniform(-bound, bound, size=(1, fan_out)), requires_grad=True))
    return NrrParams(rank, float(tau), float(tau_prime), weights, biases, seed)


# -- scoring and ordering ----------------------------------------------------------


def score_agents(features, params: NrrParams) -> Tensor:
    """Apply the MLP to each agent's feature row; returns an ``(n, 1)`` column."""
    h = ad.as_tensor(features)
    if h.shape[1] != params.weights[0].shape[0]:
        raise ValueError(f"feature width {h.shape[1]} does not match MLP input width {params.weights[0].shape[0]}")
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if k < last:
            h = ad.tanh(h)
    return h


def score_agents_np(features: np.ndarray, params: NrrParams) -> np.ndarray:
    """Same arithmetic as :func:`score_agents` without building a graph."""
    h = np.asarray(features, dtype=np.float64)
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.data + b.data
        if k < last:
            h = np.tanh(h)
    return h


def rank_vector(a) -> np.ndarray:
    """``rank[i] = #{j : a[j] < a[i] or (a[j] == a[i] and j < i)}``."""
    a = np.asarray(a, dtype=np.float64).ravel()
    idx = np.arange(a.size)
    less = (a[None, :] < a[:, None]) | ((a[None, :] == a[:, None]) & (idx[None, :] < idx[:, None]))
    return less.sum(axis=1)


def tie_break(a) -> Tensor:
    """``a + rank(a)`` with the rank term treated as a constant."""
    a = ad.as_tensor(a)
    return ad.add_const(a, rank_vector(a.data).reshape(a.shape).astype(np.float64))


def soft_sort(a, tau_prime: float) -> Tensor:
    """Row-stochastic relaxation of the descending-argsort permutation matrix.

    Entry ``(p, j)`` is the softmax over ``j`` of ``-(sorted(a)[p] - a[j])**2 / tau_prime``.
    """
    if not tau_prime > 0:
        raise ValueError("tau_prime must be positive")
    a = ad.as_tensor(a)
    col = a if a.shape[1] == 1 else ad.transpose(a)
    n = col.shape[0]
    perm = np.argsort(-col.data[:, 0], kind="stable")
    sorter = np.zeros((n, n))
    sorter[np.arange(n), perm] = 1.0
    ones = Tensor(np.ones((1, n)))
    diff = ad.matmul(Tensor(sorter) @ col, ones) - ad.matmul(ad.transpose(ones), ad.transpose(col))
    return ad.row_softmax(ad.scale(ad.square(diff), -1.0 / tau_prime))


def hard_order(a) -> AgentPermutation:
    """Agents by descending tie-broken score."""
    a = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64).ravel()
    t = a + rank_vector(a)
    return AgentPermutation(tuple(np.argsort(-t, kind="stable").tolist()))


# -- full model --------------------------------------------------------------------


def nrr_forward_train(V, params: NrrParams, features: np.ndarray | None = None) -> Tensor:
    """Fractional allocation with every column summing to 1.

    ``features`` may be passed to reuse a precomputed ``agent_features(V, rank)``.
    """
    V = as_profile(V)
    F = Tensor(agent_features(V, params.rank) if features is None else features)
    P = soft_sort(tie_break(score_agents(F, params)), params.tau_prime)
    R = soft_rr(P @ Tensor(V), params.tau)
    B = ad.transpose(P) @ R
    return B / ad.add_const(ad.col_sum(B), NORMALIZE_EPS)


def nrr_order(V, params: NrrParams, features: np.ndarray | None = None) -> AgentPermutation:
    V = as_profile(V)
    if features is None:
        features = agent_features(V, params.rank)
    return hard_order(score_agents_np(features, params))


def nrr_infer(V, params: NrrParams, features: np.ndarray | None = None) -> np.ndarray:
    """Integral allocation: Round Robin in the learned order."""
    return round_robin_induced(V, nrr_order(V, params, features))


# -- checkpoints -----------------------------------------------------------------


def save_checkpoint(params: NrrParams, path) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "rank": params.rank,
        "tau": params.tau,
        "tau_prime": params.tau_prime,
        "seed": params.seed,
        "embedding": "U_r*S_r",
        "activation": params.activation,
        "layers": [
            {"shape": list(w.shape), "weight": w.data, "bias": b.data.ravel()}
            for w, b in zip(params.weights, params.biases)
        ],
    }
    write_json(path, doc)


def load_checkpoint(path) -> NrrParams:
    doc = read_json(Path(path))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if doc.get("activation", "tanh") != "tanh":
        raise ValueError(f"{path}: unsupported activation {doc['activation']!r}")
    weights, biases = [], []
    for k, layer in enumerate(doc["layers"]):
        w = np.array(layer["weight"], dtype=np.float64).reshape(layer["shape"])
        b = np.array(layer["bias"], dtype=np.float64).reshape(1, -1)
        if b.shape[1] != w.shape[1]:
            raise ValueError(f"{path}: layer {k} bias width {b.shape[1]} != weight width {w.shape[1]}")
        weights.append(Tensor(w, requires_grad=True))
        biases.append(Tensor(b, requires_grad=True))
    rank = int(doc["rank"])
    if weights[0].shape[0] != rank + 2 or weights[-1].shape[1] != 1:
        raise ValueError(f"{path}: layer shapes {[w.shape for w in weights]} inconsistent with rank {rank}")
    return NrrParams(rank, float(doc["tau"]), float(doc["tau_prime"]), weights, biases, doc.get("seed"))
