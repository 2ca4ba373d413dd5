"""Synthetic low-rank valuation datasets labelled by a reference mechanism.

Profiles follow ``v_ij = mu_i + eps_ij`` with ``mu_i ~ U[1, 2]`` and
``eps_ij ~ U[0, 0.01]``. The random stream is numpy's PCG64 seeded with the
dataset seed; per profile it draws all ``mu`` first, then ``eps`` row-major.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fairdiv import check_allocation, muw_allocation
from .jsonio import dumps, read_json, atomic_write_text

GENERATOR = "uniform-lowrank"
RNG_NAME = "numpy.PCG64"
LABELERS = {"muw": muw_allocation}
VALUE_RANGE = (1.0, 2.01)
META_KEYS = ("n", "m", "count", "seed", "generator", "labeler", "resample_count")


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    meta: dict
    samples: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)

    @property
    def n(self) -> int:
        return int(self.meta["n"])

    @property
    def m(self) -> int:
        return int(self.meta["m"])

    def __len__(self) -> int:
        return len(self.samples)

    def profiles(self) -> list[np.ndarray]:
        return [V for V, _ in self.samples]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        if self.meta != other.meta or len(self) != len(other):
            return False
        return all(
            np.array_equal(V1, V2) and np.array_equal(A1, A2)
            for (V1, A1), (V2, A2) in zip(self.samples, other.samples)
        )


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def sample_profile(n: int, m: int, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Draw one profile; returns it with the number of rows redrawn because of ties."""
    if n < 1 or m < 1:
        raise ValueError("n and m must be >= 1")
    mu = rng.uniform(1.0, 2.0, size=n)
    eps = rng.uniform(0.0, 0.01, size=(n, m))
    V = mu[:, None] + eps
    redrawn = 0
    for i in range(n):
        while np.unique(V[i]).size < m:
            V[i] = mu[i] + rng.uniform(0.0, 0.01, size=m)
            redrawn += 1
    return V, redrawn


def generate_dataset(n: int, m: int, count: int, seed: int, labeler: str = "muw") -> Dataset:
    if count < 1:
        raise ValueError("sample count must be >= 1")
    if labeler not in LABELERS:
        raise ValueError(f"unknown labeler {labeler!r}; choose from {sorted(LABELERS)}")
    rng = make_rng(seed)
    label = LABELERS[labeler]
    samples, redrawn = [], 0
    for _ in range(count):
        V, r = sample_profile(n, m, rng)
        redrawn += r
        samples.append((V, label(V)))
    meta = {
        "n": n,
        "m": m,
        "count": count,
        "seed": seed,
        "generator": GENERATOR,
        "labeler": labeler,
        "resample_count": redrawn,
        "rng": RNG_NAME,
    }
    return Dataset(meta, samples)


def dataset_to_text(ds: Dataset) -> str:
    doc = {
        "meta": ds.meta,
        "samples": [{"valuations": V, "allocation": A.astype(int)} for V, A in ds.samples],
    }
    return dumps(doc) + "\n"


def save_dataset(ds: Dataset, path) -> str:
    """Write ``ds`` as JSON and return the SHA-256 digest of the file."""
    text = dataset_to_text(ds)
    atomic_write_text(path, text)
    return hashlib.sha256(text.encode()).hexdigest()


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def validate_dataset(ds: Dataset) -> None:
    meta = ds.meta
    missing = [k for k in META_KEYS if k not in meta]
    if missing:
        raise DatasetError(f"meta is missing {missing}")
    n, m = int(meta["n"]), int(meta["m"])
    if not ds.samples:
        raise DatasetError("dataset has no samples")
    if int(meta["count"]) != len(ds.samples):
        raise DatasetError(f"meta count {meta['count']} but {len(ds.samples)} samples")
    label = LABELERS.get(meta["labeler"])
    if label is None:
        raise DatasetError(f"unknown labeler {meta['labeler']!r}")
    lo, hi = VALUE_RANGE
    for k, (V, A) in enumerate(ds.samples):
        if V.shape != (n, m):
            raise DatasetError(f"sample {k}: valuations have shape {V.shape}, expected {(n, m)}")
        if V.min() < lo or V.max() > hi:
            raise DatasetError(f"sample {k}: valuations outside [{lo}, {hi}]")
        try:
            check_allocation(A, (n, m))
        except ValueError as exc:
            raise DatasetError(f"sample {k}: {exc}") from None
        if not np.array_equal(A, label(V)):
            raise DatasetError(f"sample {k}: allocation is not the {meta['labeler']} label of its valuations")


def load_dataset(path) -> Dataset:
    try:
        doc = read_json(path)
        meta = doc["meta"]
        raw = doc["samples"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DatasetError(f"{path}: malformed dataset file ({exc})") from None
    samples = []
    for k, s in enumerate(raw):
        try:
            V = np.array(s["valuations"], dtype=np.float64)
            A = np.array(s["allocation"], dtype=np.int64)
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"sample {k}: malformed entry ({exc})") from None
        samples.append((V, A))
    ds = Dataset(meta, samples)
    validate_dataset(ds)
    return ds
