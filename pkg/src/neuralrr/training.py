"""Losses, the mini-batch gradient-descent loop and temperature selection."""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .fairdiv import as_profile
from .metrics import hamming_distance
from .model import NrrParams, agent_features, init_params, nrr_forward_train, nrr_infer

log = logging.getLogger(__name__)

DEFAULT_TEMPERATURE_GRID = (1.0, 0.1, 0.01)


class NoViableCandidate(RuntimeError):
    pass


# -- losses ----------------------------------------------------------------------


def _one_hot_columns(target) -> np.ndarray:
    T = np.asarray(target, dtype=np.float64)
    ok = np.all((T == 0) | (T == 1), axis=0) & (T.sum(axis=0) == 1)
    if not ok.all():
        raise ValueError(f"target column {int(np.flatnonzero(~ok)[0])} is not one-hot")
    return T


def cross_entropy_alloc_loss(target, pred: Tensor) -> Tensor:
    """Column-wise cross entropy averaged over goods."""
    T = _one_hot_columns(target)
    pred = ad.as_tensor(pred)
    if T.shape != pred.shape:
        raise ValueError(f"target shape {T.shape} does not match prediction shape {pred.shape}")
    m = T.shape[1]
    return ad.scale(ad.total(ad.log(pred) * T), -1.0 / m)


def envy_penalty(V, pred: Tensor) -> Tensor:
    """Mean over agents of the summed positive envy under fractional bundles."""
    V = as_profile(V)
    pred = ad.as_tensor(pred)
    if V.shape != pred.shape:
        raise ValueError(f"profile shape {V.shape} does not match prediction shape {pred.shape}")
    n = V.shape[0]
    # W[i, k] = v_i(pred_k)
    W = Tensor(V) @ ad.transpose(pred)
    own = ad.row_sum(W * np.eye(n))
    return ad.scale(ad.total(ad.relu(W - own)), 1.0 / n)


def combined_loss(target, pred: Tensor, V, lam: float = 0.0) -> Tensor:
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    loss = cross_entropy_alloc_loss(target, pred)
    if lam:
        loss = loss + ad.scale(envy_penalty(V, pred), lam)
    return loss


# -- configuration and report --------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 4
    learning_rate: float = 0.05
    lam: float = 0.0
    tau_grid: Sequence[float] = DEFAULT_TEMPERATURE_GRID
    tau_prime_grid: Sequence[float] = DEFAULT_TEMPERATURE_GRID
    seed: int = 0
    rank: int = 3
    hidden: Sequence[int] = (32, 32)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if not self.tau_grid or not self.tau_prime_grid:
            raise ValueError("temperature grids must be non-empty")
        if any(t <= 0 for t in [*self.tau_grid, *self.tau_prime_grid]):
            raise ValueError("temperatures must be positive")
        self.tau_grid = tuple(float(t) for t in self.tau_grid)
        self.tau_prime_grid = tuple(float(t) for t in self.tau_prime_grid)
        self.hidden = tuple(int(h) for h in self.hidden)


@dataclass
class CandidateResult:
    tau: float
    tau_prime: float
    train_loss: list[float] = field(default_factory=list)
    val_hd: list[float] = field(default_factory=list)
    viable: bool = True
    note: str = ""

    @property
    def final_val_hd(self) -> float:
        return self.val_hd[-1] if self.val_hd else math.nan


@dataclass
class TrainReport:
    config: TrainConfig
    candidates: list[CandidateResult]
    selected: tuple[float, float]

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "selected": {"tau": self.selected[0], "tau_prime": self.selected[1]},
            "candidates": [
                {**asdict(c), "final_val_hd": c.final_val_hd} for c in self.candidates
            ],
        }

    def loss_curve_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "candidate_tau", "candidate_tau_prime", "train_loss", "val_hd"])
        for c in self.candidates:
            for e, (tl, hd) in enumerate(zip(c.train_loss, c.val_hd), start=1):
                w.writerow([e, repr(c.tau), repr(c.tau_prime), repr(tl), repr(hd)])
        return buf.getvalue()


# -- loop ---------------------------------------------------------------------------


def _check_dataset(samples, name: str) -> tuple[int, int]:
    if not samples:
        raise ValueError(f"{name} set is empty")
    shape = np.shape(samples[0][0])
    for k, (V, A) in enumerate(samples):
        if np.shape(V) != shape or np.shape(A) != shape:
            raise ValueError(f"{name} sample {k} has shape {np.shape(V)}, expected {shape}")
    return shape


def _samples(ds):
    return ds.samples if hasattr(ds, "samples") else list(ds)


def batch_loss(params: NrrParams, batch, lam: float = 0.0) -> Tensor:
    """Mean combined loss over ``(V, A, features)`` triples."""
    losses = [combined_loss(A, nrr_forward_train(V, params, F), V, lam) for V, A, F in batch]
    total = losses[0]
    for l in losses[1:]:
        total = total + l
    return ad.scale(total, 1.0 / len(losses))


def sgd_step(params: NrrParams, lr: float) -> None:
    for t in params.tensors():
        if t.grad is not None:
            t.data -= lr * t.grad


def mean_hd(params: NrrParams, samples) -> float:
    return float(np.mean([hamming_distance(A, nrr_infer(V, params, F)) for V, A, F in samples]))


def _run_candidate(init: NrrParams, train, val, cfg: TrainConfig, tau: float, tau_prime: float):
    params = init.with_temperatures(tau, tau_prime)
    result = CandidateResult(tau, tau_prime)
    rng = np.random.default_rng([cfg.seed, 1])
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train))
        running, count = 0.0, 0
        for start in range(0, len(train), cfg.batch_size):
            batch = [train[i] for i in order[start : start + cfg.batch_size]]
            loss = batch_loss(params, batch, cfg.lam)
            value = loss.item()
            if not math.isfinite(value):
                result.viable, result.note = False, f"non-finite loss in epoch {epoch + 1}"
                return params, result
            loss.backward()
            sgd_step(params, cfg.learning_rate)
            running += value * len(batch)
            count += len(batch)
        result.train_loss.append(running / count)
        result.val_hd.append(mean_hd(params, val))
        log.info("tau=%g tau'=%g epoch %d loss %.6f val HD %.4f", tau, tau_prime, epoch + 1, result.train_loss[-1], result.val_hd[-1])
    if cfg.epochs > 1 and not result.train_loss[-1] < result.train_loss[0]:
        result.viable, result.note = False, "training loss did not decrease"
    return params, result


def train(train_set, val_set, config: TrainConfig) -> tuple[NrrParams, TrainReport]:
    """Grid-search (tau, tau') and return the candidate with the lowest validation HD.

    Every candidate starts from the same seeded initialisation and sees the
    same shuffling sequence. Candidates whose mean training loss does not
    drop from the first to the last epoch are excluded (not applicable for a
    single epoch). Ties go to the earliest grid entry.
    """
    train_samples, val_samples = _samples(train_set), _samples(val_set)
    shape = _check_dataset(train_samples, "training")
    if _check_dataset(val_samples, "validation") != shape:
        raise ValueError("training and validation sets have different (n, m)")
    if config.rank > min(shape):
        raise ValueError(f"rank {config.rank} exceeds min(n, m) = {min(shape)}")
    train_c = [(as_profile(V), np.asarray(A), agent_features(V, config.rank)) for V, A in train_samples]
    val_c = [(as_profile(V), np.asarray(A), agent_features(V, config.rank)) for V, A in val_samples]

    init = init_params(config.rank, config.seed, config.hidden)
    best, results = None, []
    for tau, tau_prime in itertools.product(config.tau_grid, config.tau_prime_grid):
        params, res = _run_candidate(init, train_c, val_c, config, tau, tau_prime)
        results.append(res)
        if res.viable and (best is None or res.final_val_hd < best[1].final_val_hd):
            best = (params, res)
    if best is None:
        raise NoViableCandidate("no viable candidate: every (tau, tau') was excluded")
    report = TrainReport(config, results, (best[1].tau, best[1].tau_prime))
    return best[0], report
