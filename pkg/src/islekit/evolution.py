"""Real-coded variation operators, surrogate-scored selection, and the island epoch."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Bounds, ContractViolationError, RngStream, clamp
from .ensemble import inverse_rmse_weights, weighted_prediction_batch
from .semi_supervised import fine_tune_island
from .surrogate import RbfnModel


@dataclass
class EvolutionParams:
    """Operator parameters; p_mut = None resolves to 1/d at call time."""

    eta_c: float = 15.0
    eta_m: float = 15.0
    p_cross: float = 1.0
    p_mut: float | None = None

    def mutation_rate(self, d: int) -> float:
        return 1.0 / d if self.p_mut is None else self.p_mut


@dataclass
class Population:
    """Island population; scores hold the last ensemble evaluation, ascending."""

    members: np.ndarray
    scores: np.ndarray | None = None

    def __len__(self) -> int:
        return self.members.shape[0]

    def best_index(self) -> int:
        if self.scores is None:
            return 0
        return int(np.argmin(self.scores))


def sbx_crossover(
    p1: np.ndarray,
    p2: np.ndarray,
    params: EvolutionParams,
    rng: RngStream,
    bounds: Bounds,
) -> tuple[np.ndarray, np.ndarray]:
    """Simulated binary crossover; each gene mixes with probability 0.5.

    The whole pair passes through unchanged with probability 1 - p_cross.
    Children are clamped to bounds.
    """
    if p1.shape != p2.shape:
        raise ContractViolationError("parents must have equal dimension")
    gen = rng.generator
    if gen.random() > params.p_cross:
        return p1.copy(), p2.copy()
    d = p1.size
    mix = gen.random(d) <= 0.5
    u = gen.random(d)
    exponent = 1.0 / (params.eta_c + 1.0)
    beta = np.where(u <= 0.5, (2.0 * u) ** exponent, (1.0 / (2.0 * (1.0 - u))) ** exponent)
    beta = np.where(mix, beta, 1.0)  # beta = 1 leaves genes equal to parents
    c1 = 0.5 * ((1.0 + beta) * p1 + (1.0 - beta) * p2)
    c2 = 0.5 * ((1.0 - beta) * p1 + (1.0 + beta) * p2)
    return clamp(c1, bounds), clamp(c2, bounds)


def polynomial_mutation(
    x: np.ndarray,
    params: EvolutionParams,
    rng: RngStream,
    bounds: Bounds,
) -> np.ndarray:
    """Bounded polynomial mutation, applied per gene with probability p_mut."""
    if x.size != bounds.dim:
        raise ContractViolationError("candidate dimension does not match bounds")
    gen = rng.generator
    d = x.size
    rate = params.mutation_rate(d)
    mask = gen.random(d) < rate
    u = gen.random(d)
    if not np.any(mask):
        return x.copy()
    span = bounds.upper - bounds.lower
    delta1 = (x - bounds.lower) / span
    delta2 = (bounds.upper - x) / span
    power = 1.0 / (params.eta_m + 1.0)
    low_side = u <= 0.5
    val_low = 2.0 * u + (1.0 - 2.0 * u) * (1.0 - delta1) ** (params.eta_m + 1.0)
    val_high = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * (1.0 - delta2) ** (params.eta_m + 1.0)
    deltaq = np.where(low_side, val_low**power - 1.0, 1.0 - val_high**power)
    mutated = np.where(mask, x + deltaq * span, x)
    return clamp(mutated, bounds)


def generate_offspring(
    pop: Population,
    params: EvolutionParams,
    rng: RngStream,
    bounds: Bounds,
) -> np.ndarray:
    """Random disjoint pairing, SBX then PM; returns exactly len(pop) children.

    An odd member count gets one extra child: a mutated copy of the current
    best member.
    """
    members = pop.members
    m = members.shape[0]
    gen = rng.generator
    order = gen.permutation(m)
    children = []
    for k in range(m // 2):
        a, b = members[order[2 * k]], members[order[2 * k + 1]]
        c1, c2 = sbx_crossover(a, b, params, rng, bounds)
        children.append(polynomial_mutation(c1, params, rng, bounds))
        children.append(polynomial_mutation(c2, params, rng, bounds))
    if m % 2 == 1:
        best = members[pop.best_index()]
        children.append(polynomial_mutation(best, params, rng, bounds))
    return np.array(children)


def environmental_selection(
    union: np.ndarray,
    models: list[RbfnModel],
    rmses,
    n: int,
) -> Population:
    """Keep the n lowest ensemble scores; ties broken by union index."""
    union = np.asarray(union)
    if union.shape[0] < n:
        raise ContractViolationError(f"union of {union.shape[0]} cannot fill population of {n}")
    weights = inverse_rmse_weights(rmses)
    scores = weighted_prediction_batch(models, weights, union)
    order = np.argsort(scores, kind="stable")[:n]
    return Population(members=union[order].copy(), scores=scores[order])


def _selection_ensemble(island, read_board, neighbor_ensemble: bool):
    """Models and rmses used for scoring: neighbors' latest plus the island's own."""
    if neighbor_ensemble and island.neighbors:
        pairs = [read_board.get(j) for j in island.neighbors]
        models = [m for m, _ in pairs] + [island.model]
        rmses = np.array([r for _, r in pairs] + [island.rmse])
    else:
        models = [island.model]
        rmses = np.array([island.rmse])
    return models, rmses


def island_iteration(
    island,
    read_board,
    publish_board,
    params: EvolutionParams,
    rng: RngStream,
    *,
    n: int,
    l: int,
    bounds: Bounds,
    fine_tuning: bool = True,
    neighbor_ensemble: bool = True,
) -> None:
    """One intra-island generation: fine-tune, publish, vary, select.

    Neighbor models are read from read_board; the refit model is published to
    publish_board, so schedulers decide what other islands observe and when.
    Mutates the island in place.
    """
    if fine_tuning:
        model, rmse = fine_tune_island(island, read_board, l)
        island.model, island.rmse = model, rmse
        publish_board.publish(island.index, model, rmse)
    children = generate_offspring(island.population, params, rng, bounds)
    union = np.vstack([island.population.members, children])
    models, rmses = _selection_ensemble(island, read_board, neighbor_ensemble)
    island.population = environmental_selection(union, models, rmses, n)


def intra_island_epoch(
    island,
    read_board,
    publish_board,
    t_iter: int,
    params: EvolutionParams,
    rng: RngStream,
    *,
    n: int,
    l: int,
    bounds: Bounds,
    fine_tuning: bool = True,
    neighbor_ensemble: bool = True,
    trace: list | None = None,
) -> tuple[Population, np.ndarray]:
    """t_iter consecutive iterations of one island; returns (population, elite)."""
    for it in range(t_iter):
        island_iteration(
            island,
            read_board,
            publish_board,
            params,
            rng,
            n=n,
            l=l,
            bounds=bounds,
            fine_tuning=fine_tuning,
            neighbor_ensemble=neighbor_ensemble,
        )
        if trace is not None:
            scores = island.population.scores
            trace.append(
                (island.index, it, float(scores[0]), float(np.mean(scores)), island.rmse)
            )
    finalize_epoch(island, read_board, neighbor_ensemble=neighbor_ensemble)
    return island.population, island.elite


def finalize_epoch(island, read_board, *, neighbor_ensemble: bool = True) -> None:
    """Pin the island's epoch elite: its rank-1 member under the final scoring."""
    if island.population.scores is None:
        # nothing selected this epoch: score the standing population
        models, rmses = _selection_ensemble(island, read_board, neighbor_ensemble)
        weights = inverse_rmse_weights(rmses)
        island.population.scores = weighted_prediction_batch(
            models, weights, island.population.members
        )
    best = island.population.best_index()
    island.elite = island.population.members[best].copy()
    island.elite_score = float(island.population.scores[best])
