"""Offline dataset construction and per-island train/validation partitioning."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .benchmarks import BenchmarkProblem
from .core import Bounds, EmptyRequestError, InsufficientDataError, RngStream


@dataclass
class OfflineDataset:
    """All real-evaluated samples available to a run.

    X rows are candidates, y their true fitness labels. budget_used counts
    the real evaluations spent building the set.
    """

    X: np.ndarray
    y: np.ndarray
    budget_used: int

    def __len__(self) -> int:
        return self.X.shape[0]


@dataclass
class IslandDataSplit:
    """One island's training set D_i and held-out validation set V_i."""

    train_X: np.ndarray
    train_y: np.ndarray
    val_X: np.ndarray
    val_y: np.ndarray


def latin_hypercube(n: int, bounds: Bounds, rng: RngStream) -> np.ndarray:
    """n stratified samples: one per stratum per dimension, uniform jitter inside."""
    if n == 0:
        raise EmptyRequestError("latin_hypercube needs n >= 1")
    gen = rng.generator
    d = bounds.dim
    points = np.empty((n, d))
    for j in range(d):
        strata = gen.permutation(n)
        offsets = gen.random(n)
        unit = (strata + offsets) / n
        points[:, j] = bounds.lower[j] + unit * (bounds.upper[j] - bounds.lower[j])
    return points


def build_offline_dataset(problem: BenchmarkProblem, n: int, rng: RngStream) -> OfflineDataset:
    """LHS design evaluated once on the true function; spends exactly n FEs."""
    if n == 0:
        return OfflineDataset(np.empty((0, problem.d)), np.empty(0), 0)
    X = latin_hypercube(n, problem.bounds, rng)
    y = np.array([problem.evaluate(x) for x in X])
    return OfflineDataset(X, y, n)


def train_size(total: int) -> int:
    return math.ceil((2.0 / 3.0) * total)


def partition_island_data(dataset: OfflineDataset, rng: RngStream) -> IslandDataSplit:
    """Uniform random ceil(2/3) train subset; complement is validation."""
    total = len(dataset)
    if total < 3:
        raise InsufficientDataError(f"need at least 3 samples to split, got {total}")
    k = train_size(total)
    idx = rng.generator.permutation(total)
    train_idx, val_idx = idx[:k], idx[k:]
    return IslandDataSplit(
        train_X=dataset.X[train_idx],
        train_y=dataset.y[train_idx],
        val_X=dataset.X[val_idx],
        val_y=dataset.y[val_idx],
    )


def save_dataset_csv(dataset: OfflineDataset, path: str | Path) -> None:
    d = dataset.X.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x_{j}" for j in range(d)] + ["f"])
        for x, f in zip(dataset.X, dataset.y):
            writer.writerow([repr(float(v)) for v in x] + [repr(float(f))])


def load_dataset_csv(path: str | Path) -> OfflineDataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[-1] != "f" or not header[0].startswith("x_"):
            raise InsufficientDataError(f"{path} is not a dataset cache file")
        rows = [[float(v) for v in row] for row in reader]
    arr = np.array(rows)
    return OfflineDataset(arr[:, :-1], arr[:, -1], arr.shape[0])
