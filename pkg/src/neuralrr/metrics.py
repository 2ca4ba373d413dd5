"""Evaluation metrics and the model wrappers used by the evaluation loop."""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .fairdiv import AgentPermutation, as_profile, is_ef1, muw_allocation, round_robin, utilitarian_welfare
from .model import nrr_infer, nrr_order


def hamming_distance(target, pred) -> float:
    A, B = np.asarray(target, dtype=np.float64), np.asarray(pred, dtype=np.float64)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch: {A.shape} vs {B.shape}")
    return float(np.abs(A - B).sum() / (2 * A.shape[1]))


def ef1_ratio(profiles, preds) -> float:
    profiles, preds = list(profiles), list(preds)
    if not profiles:
        raise ValueError("ef1_ratio needs at least one allocation")
    if len(profiles) != len(preds):
        raise ValueError(f"{len(profiles)} profiles but {len(preds)} allocations")
    return sum(is_ef1(V, A) for V, A in zip(profiles, preds)) / len(profiles)


def uw_loss(V, pred) -> float:
    V = as_profile(V)
    best = utilitarian_welfare(V, muw_allocation(V))
    if best <= 0:
        raise ValueError("maximum welfare is 0; welfare loss is undefined")
    return 1.0 - utilitarian_welfare(V, pred) / best


def mean_valuation_order(V) -> AgentPermutation:
    """Agents by descending mean value, ties to the lower index."""
    means = np.asarray(V, dtype=np.float64).mean(axis=1)
    return AgentPermutation(tuple(np.argsort(-means, kind="stable").tolist()))


def kendall_tau(a: AgentPermutation, b: AgentPermutation) -> float:
    """Kendall's tau-a between two strict orders of the same agents."""
    n = len(a)
    if n != len(b):
        raise ValueError(f"orders have different lengths {n} and {len(b)}")
    if n < 2:
        raise ValueError("Kendall's tau needs at least 2 agents")
    pa, pb = np.asarray(a.position), np.asarray(b.position)
    score = 0
    for i, j in itertools.combinations(range(n), 2):
        score += np.sign(pa[i] - pa[j]) * np.sign(pb[i] - pb[j])
    return float(score) / (n * (n - 1) / 2)


# -- mechanisms -----------------------------------------------------------------------


class RRModel:
    name = "rr"

    def __call__(self, V):
        return round_robin(V)

    def order(self, V) -> AgentPermutation:
        return AgentPermutation.identity(np.shape(V)[0])


class MUWModel:
    name = "muw"

    def __call__(self, V):
        return muw_allocation(V)


class NRRModel:
    name = "nrr"

    def __init__(self, params):
        self.params = params

    def __call__(self, V):
        return nrr_infer(V, self.params)

    def order(self, V) -> AgentPermutation:
        return nrr_order(V, self.params)


# -- aggregate -------------------------------------------------------------------------


@dataclass
class EvalSummary:
    model: str
    n: int
    m: int
    hd: list[float]
    ef1: list[bool]
    uwloss: list[float]
    kendall_tau: list[float] | None = None
    meta: dict = field(default_factory=dict)

    @property
    def hd_mean(self) -> float:
        return float(np.mean(self.hd))

    @property
    def ef1_ratio(self) -> float:
        return float(np.mean(self.ef1))

    @property
    def uwloss_mean(self) -> float:
        return float(np.mean(self.uwloss))

    @property
    def kendall_tau_mean(self) -> float | None:
        return None if self.kendall_tau is None else float(np.mean(self.kendall_tau))


CSV_COLUMNS = ["model", "n", "m", "sample_index", "hd", "ef1", "uwloss", "kendall_tau"]


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def summaries_to_csv(summaries, per_sample: bool = True) -> str:
    """One row per sample (optional) plus an aggregate ``sample_index=mean`` row per summary."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for s in summaries:
        if per_sample:
            kts = s.kendall_tau or [None] * len(s.hd)
            for k, (hd, ef, uw, kt) in enumerate(zip(s.hd, s.ef1, s.uwloss, kts)):
                w.writerow([s.model, s.n, s.m, k, _fmt(hd), int(ef), _fmt(uw), _fmt(kt)])
        w.writerow([s.model, s.n, s.m, "mean", _fmt(s.hd_mean), _fmt(s.ef1_ratio), _fmt(s.uwloss_mean), _fmt(s.kendall_tau_mean)])
    return buf.getvalue()


def evaluate(model: Callable, dataset, name: str | None = None) -> EvalSummary:
    """Run ``model`` on every profile of ``dataset`` and score it against the labels.

    Kendall's tau against the mean-valuation order is included when the
    model exposes an ``order(V)`` method.
    """
    samples = dataset.samples if hasattr(dataset, "samples") else list(dataset)
    if not samples:
        raise ValueError("cannot evaluate on an empty dataset")
    n, m = np.shape(samples[0][0])
    order_fn = getattr(model, "order", None)
    hd, ef, uw, kt = [], [], [], []
    for k, (V, A) in enumerate(samples):
        pred = np.asarray(model(V))
        if pred.shape != np.shape(V):
            raise ValueError(f"sample {k}: model returned shape {pred.shape}, expected {np.shape(V)}")
        hd.append(hamming_distance(A, pred))
        ef.append(is_ef1(V, pred))
        uw.append(uw_loss(V, pred))
        if order_fn is not None and n >= 2:
            kt.append(kendall_tau(order_fn(V), mean_valuation_order(V)))
    meta = dict(getattr(dataset, "meta", {}) or {})
    return EvalSummary(
        name or getattr(model, "name", type(model).__name__), n, m, hd, ef, uw, kt if kt else None, meta
    )
