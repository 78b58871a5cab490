"""Inverse-RMSE ensemble weighting and weighted surrogate prediction."""

from __future__ import annotations

import numpy as np

from .core import ContractViolationError
from .surrogate import RbfnModel, predict_batch


def inverse_rmse_weights(rmses) -> np.ndarray:
    """Simplex weights favoring low validation error.

    w_k = (S - rmse_k) / ((m - 1) * S) with S the rmse sum. A single model
    gets weight 1; an all-zero rmse vector (every model perfect) falls back
    to uniform weights.
    """
    rmses = np.asarray(rmses, dtype=float)
    if rmses.ndim != 1 or rmses.size == 0:
        raise ContractViolationError("rmses must be a non-empty vector")
    if not np.all(np.isfinite(rmses)) or np.any(rmses < 0):
        raise ContractViolationError("rmses must be finite and non-negative")
    m = rmses.size
    if m == 1:
        return np.ones(1)
    total = float(rmses.sum())
    if total == 0.0:
        return np.full(m, 1.0 / m)
    weights = (total - rmses) / ((m - 1) * total)
    # rmse_k <= S for m >= 2, so weights cannot go negative
    assert np.all(weights >= 0.0)
    return weights


def weighted_prediction(models: list[RbfnModel], weights: np.ndarray, x: np.ndarray) -> float:
    if len(models) != len(weights):
        raise ContractViolationError(f"{len(models)} models but {len(weights)} weights")
    return float(sum(w * predict_batch(m, x.reshape(1, -1))[0] for m, w in zip(models, weights)))


def weighted_prediction_batch(models: list[RbfnModel], weights: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Ensemble scores for every row of X."""
    if len(models) != len(weights):
        raise ContractViolationError(f"{len(models)} models but {len(weights)} weights")
    X = np.atleast_2d(X)
    out = np.zeros(X.shape[0])
    for model, w in zip(models, weights):
        out += w * predict_batch(model, X)
    return out
