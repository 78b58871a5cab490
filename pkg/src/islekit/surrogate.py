"""Gaussian RBF network surrogates with a closed-form linear output layer."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .core import ContractViolationError, InsufficientDataError, RngStream

# singular values below RCOND * s_max are treated as zero in the pseudoinverse
RCOND = 1e-10


@dataclass(frozen=True)
class RbfnModel:
    """Trained surrogate: fixed Gaussian units plus a linear output layer.

    Attributes:
        centers: C x d unit locations.
        sigma: shared positive spread of the Gaussian kernel.
        out_weights: length-C linear weights.
        bias: output offset.
        version: strictly increases on every refit of the linear layer.
    """

    centers: np.ndarray
    sigma: float
    out_weights: np.ndarray
    bias: float
    version: int = 1


def default_center_count(n_train: int) -> int:
    return math.ceil(math.sqrt(n_train))


def kmeans_centers(
    points: np.ndarray,
    n_centers: int,
    rng: RngStream,
    max_iter: int = 100,
    tol: float = 1e-9,
) -> np.ndarray:
    """Lloyd's algorithm seeded from n_centers distinct data rows.

    Runs until the assignment reaches a fixpoint, center movement drops
    below tol, or max_iter passes. An emptied cluster is re-seeded to the
    point currently farthest from its own center.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if n_centers < 1:
        raise ContractViolationError("need at least one center")
    if n < n_centers:
        raise InsufficientDataError(f"{n} points cannot seed {n_centers} centers")
    gen = rng.generator
    centers = points[gen.choice(n, size=n_centers, replace=False)].copy()

    prev_assign = None
    for _ in range(max_iter):
        dists = cdist(points, centers, "sqeuclidean")
        assign = np.argmin(dists, axis=1)
        for c in range(n_centers):
            if not np.any(assign == c):
                own = dists[np.arange(n), assign]
                far = int(np.argmax(own))
                centers[c] = points[far]
                assign[far] = c
                dists = cdist(points, centers, "sqeuclidean")
        if prev_assign is not None and np.array_equal(assign, prev_assign):
            break
        prev_assign = assign
        new_centers = np.array([points[assign == c].mean(axis=0) for c in range(n_centers)])
        movement = float(np.max(np.linalg.norm(new_centers - centers, axis=1)))
        centers = new_centers
        if movement < tol:
            break
    return centers


def compute_sigma(centers: np.ndarray) -> float:
    """Shared spread d_max / sqrt(2C); degenerate center sets fall back to 1."""
    n_centers = centers.shape[0]
    if n_centers == 1:
        return 1.0
    d_max = float(np.max(pdist(centers)))
    if d_max == 0.0:
        return 1.0
    return d_max / math.sqrt(2.0 * n_centers)


def design_matrix(centers: np.ndarray, sigma: float, X: np.ndarray) -> np.ndarray:
    """[Phi | 1] rows for X: Gaussian unit activations plus the bias column."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    sq = cdist(X, centers, "sqeuclidean")
    phi = np.exp(-sq / (2.0 * sigma**2))
    return np.hstack([phi, np.ones((X.shape[0], 1))])


def _solve_linear(design: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float]:
    solution, *_ = np.linalg.lstsq(design, y, rcond=RCOND)
    return solution[:-1], float(solution[-1])


def train_rbfn(X: np.ndarray, y: np.ndarray, n_centers: int, rng: RngStream) -> RbfnModel:
    """Fit centers by k-means, sigma by the spread heuristic, weights by least squares."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[0] < n_centers:
        raise InsufficientDataError(f"{X.shape[0]} samples cannot fit {n_centers} centers")
    centers = kmeans_centers(X, n_centers, rng)
    sigma = compute_sigma(centers)
    weights, bias = _solve_linear(design_matrix(centers, sigma, X), y)
    return RbfnModel(centers=centers, sigma=sigma, out_weights=weights, bias=bias, version=1)


def predict(model: RbfnModel, x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ContractViolationError("non-finite input to predict")
    row = design_matrix(model.centers, model.sigma, x.reshape(1, -1))[0]
    return float(row[:-1] @ model.out_weights + row[-1] * model.bias)


def predict_batch(model: RbfnModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if not np.all(np.isfinite(X)):
        raise ContractViolationError("non-finite input to predict_batch")
    design = design_matrix(model.centers, model.sigma, X)
    return design[:, :-1] @ model.out_weights + design[:, -1] * model.bias


def validation_rmse(model: RbfnModel, X: np.ndarray, y: np.ndarray) -> float:
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise InsufficientDataError("validation set is empty")
    err = predict_batch(model, X) - y
    return float(np.sqrt(np.mean(err * err)))


def refit_weights(model: RbfnModel, X: np.ndarray, y: np.ndarray) -> RbfnModel:
    """Re-solve the linear layer on new data; centers and sigma stay fixed."""
    if np.asarray(y).size == 0:
        raise InsufficientDataError("refit needs at least one sample")
    weights, bias = _solve_linear(design_matrix(model.centers, model.sigma, X), np.asarray(y, dtype=float))
    return replace(model, out_weights=weights, bias=bias, version=model.version + 1)


def refit_weights_from_design(model: RbfnModel, design: np.ndarray, y: np.ndarray) -> RbfnModel:
    """Same as refit_weights but on precomputed [Phi | 1] rows (hot path)."""
    weights, bias = _solve_linear(design, np.asarray(y, dtype=float))
    return replace(model, out_weights=weights, bias=bias, version=model.version + 1)


def model_to_json(model: RbfnModel) -> dict:
    return {
        "centers": model.centers.tolist(),
        "sigma": model.sigma,
        "weights": model.out_weights.tolist(),
        "bias": model.bias,
        "version": model.version,
    }


def model_from_json(payload: dict) -> RbfnModel:
    return RbfnModel(
        centers=np.array(payload["centers"], dtype=float),
        sigma=float(payload["sigma"]),
        out_weights=np.array(payload["weights"], dtype=float),
        bias=float(payload["bias"]),
        version=int(payload["version"]),
    )
