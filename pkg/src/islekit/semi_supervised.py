"""Neighbor-discrepancy scoring, pseudo-labeling, and per-iteration surrogate refit.

One fine-tuning cycle temporarily augments an island's training data with a
few pseudo-labeled population members, re-solves the linear output layer,
scores the result on the island's real-labeled validation set, and discards
the pseudo samples again. The island's stored training data never changes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BoardStalenessError, ContractViolationError
from .ensemble import inverse_rmse_weights
from .surrogate import (
    RbfnModel,
    design_matrix,
    predict_batch,
    refit_weights_from_design,
)


@dataclass
class DiscrepancyReport:
    """Per-individual mean and spread of the neighbor models' predictions."""

    means: np.ndarray
    divs: np.ndarray


@dataclass
class PseudoBatch:
    candidates: np.ndarray
    labels: np.ndarray


def neighbor_discrepancy(population: np.ndarray, neighbor_models: list[RbfnModel]) -> DiscrepancyReport:
    """Mean neighbor prediction and population standard deviation per member."""
    if not neighbor_models:
        raise ContractViolationError("discrepancy needs at least one neighbor model")
    population = np.atleast_2d(population)
    preds = np.array([predict_batch(m, population) for m in neighbor_models])
    means = preds.mean(axis=0)
    divs = preds.std(axis=0)  # population std: divide by the neighbor count
    return DiscrepancyReport(means=means, divs=divs)


def select_pseudo_candidates(report: DiscrepancyReport, l: int) -> np.ndarray:
    """Indices of the l lowest-discrepancy members, ties broken by index."""
    n = report.divs.size
    if l > n:
        raise ContractViolationError(f"cannot select {l} of {n} members")
    return np.argsort(report.divs, kind="stable")[:l]


def pseudo_labels(
    candidates: np.ndarray,
    neighbor_models: list[RbfnModel],
    neighbor_rmses,
) -> PseudoBatch:
    """Labels from the RMSE-weighted neighbor ensemble."""
    candidates = np.atleast_2d(candidates)
    weights = inverse_rmse_weights(neighbor_rmses)
    if len(neighbor_models) != weights.size:
        raise ContractViolationError("models and rmses must align")
    labels = np.zeros(candidates.shape[0])
    for model, w in zip(neighbor_models, weights):
        labels += w * predict_batch(model, candidates)
    return PseudoBatch(candidates=candidates, labels=labels)


def _validation_rmse_from_design(design: np.ndarray, model: RbfnModel, y: np.ndarray) -> float:
    err = design[:, :-1] @ model.out_weights + design[:, -1] * model.bias - y
    return float(np.sqrt(np.mean(err * err)))


def fine_tune_island(island, board, l: int) -> tuple[RbfnModel, float]:
    """One semi-supervised fine-tuning cycle for an island.

    Reads the neighbors' latest (model, rmse) pairs from the board, builds l
    pseudo-labeled samples from the island's current population, refits the
    linear layer on train data plus pseudo samples, and scores the refit
    model on the real validation set. Returns (model, rmse) without mutating
    the island.

    With no neighbors (single island) the refit runs on the training data
    alone.
    """
    if island.neighbors:
        pairs = []
        for j in island.neighbors:
            try:
                pairs.append(board.get(j))
            except Exception as exc:
                raise BoardStalenessError(f"island {island.index} missing neighbor {j}") from exc
        models = [m for m, _ in pairs]
        rmses = np.array([r for _, r in pairs])
        take = min(l, len(island.population))
        if take > 0:
            report = neighbor_discrepancy(island.population.members, models)
            idx = select_pseudo_candidates(report, take)
            batch = pseudo_labels(island.population.members[idx], models, rmses)
            pseudo_rows = design_matrix(island.model.centers, island.model.sigma, batch.candidates)
            design = np.vstack([island.train_design, pseudo_rows])
            labels = np.concatenate([island.train_y, batch.labels])
        else:
            design, labels = island.train_design, island.train_y
    else:
        design, labels = island.train_design, island.train_y
    model = refit_weights_from_design(island.model, design, labels)
    rmse = _validation_rmse_from_design(island.val_design, model, island.val_y)
    return model, rmse
