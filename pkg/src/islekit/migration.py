"""Inter-island knowledge transfer: topology, adaptive routing, and migration.

Each directed neighbor edge carries an attractiveness tau (a decaying
accumulator of past migration usefulness), a differential factor v (how much
the two surrogates disagree), and a migration probability mp derived from
their product. Effects of a migration round are measured one epoch later,
after the receiving islands have optimized with the immigrants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import ContractViolationError, RngStream
from .evolution import Population
from .surrogate import RbfnModel, predict, predict_batch

RING = "ring"
VON_NEUMANN = "von_neumann"
FULLY_CONNECTED = "fully_connected"
TOPOLOGY_KINDS = (RING, VON_NEUMANN, FULLY_CONNECTED)


@dataclass(frozen=True)
class Topology:
    kind: str
    T: int
    rows: int = 0
    cols: int = 0

    @classmethod
    def make(cls, kind: str, T: int) -> "Topology":
        if kind not in TOPOLOGY_KINDS:
            raise ContractViolationError(f"unknown topology kind {kind!r}")
        if kind == VON_NEUMANN:
            side = math.isqrt(T)
            if side * side != T:
                raise ContractViolationError(f"von_neumann topology needs a square T, got {T}")
            return cls(kind=kind, T=T, rows=side, cols=side)
        return cls(kind=kind, T=T)


def neighbors(topology: Topology, island: int) -> list[int]:
    """Sorted neighbor ids; self-edges and duplicates removed."""
    T = topology.T
    if not 0 <= island < T:
        raise ContractViolationError(f"island {island} outside 0..{T - 1}")
    if topology.kind == FULLY_CONNECTED:
        return [j for j in range(T) if j != island]
    if topology.kind == RING:
        cand = {(island - 1) % T, (island + 1) % T}
    else:
        rows, cols = topology.rows, topology.cols
        r, c = divmod(island, cols)
        cand = {
            ((r - 1) % rows) * cols + c,
            ((r + 1) % rows) * cols + c,
            r * cols + (c - 1) % cols,
            r * cols + (c + 1) % cols,
        }
    cand.discard(island)
    return sorted(cand)


@dataclass(frozen=True)
class EdgeState:
    """Directed-edge routing state: attractiveness, differential factor, probability."""

    tau: float = 1.0
    v: float = 1.0
    mp: float = 0.0


@dataclass
class MigrationRecord:
    """All individuals moved along one directed edge in one round."""

    source: int
    target: int
    migrants: np.ndarray
    ranks_at_arrival: list[int]
    effectiveness: list[int]
    pre_migration_mean: float


def _rank_among(resident_scores: np.ndarray, score: float) -> int:
    """1-based rank of `score` among residents plus itself; ties rank it last."""
    return int(np.sum(resident_scores <= score)) + 1


def rank_effectiveness(target_pop: Population, immigrant: np.ndarray, target_model: RbfnModel) -> int:
    """r = n - rank of the immigrant under the target island's model, floored at 0."""
    scores = predict_batch(target_model, target_pop.members)
    rank = _rank_among(scores, predict(target_model, immigrant))
    return max(len(target_pop) - rank, 0)


def rank_share(records: list[MigrationRecord]) -> dict[int, float]:
    """Per-source share of total immigrant effectiveness at one target island."""
    if not records:
        return {}
    sums = {r.source: float(sum(r.effectiveness)) for r in records}
    total = sum(sums.values())
    if total == 0.0:
        return {s: 1.0 / len(sums) for s in sums}
    return {s: v / total for s, v in sums.items()}


def population_improvement(pre_mean: float, post_pop: Population, target_model: RbfnModel) -> float:
    """Raw theta: drop in the target's mean predicted fitness since migration."""
    return float(pre_mean - np.mean(predict_batch(target_model, post_pop.members)))


def differential_factor(
    source_pop: Population, source_model: RbfnModel, target_model: RbfnModel
) -> float:
    """Raw v: mean absolute model disagreement over the source population."""
    members = source_pop.members
    return float(
        np.mean(np.abs(predict_batch(target_model, members) - predict_batch(source_model, members)))
    )


def update_attractiveness(edge: EdgeState, theta_norm: float, phi: float, rho: float) -> EdgeState:
    return replace(edge, tau=(1.0 - rho) * edge.tau + theta_norm * phi)


def migration_probabilities(edges: list[EdgeState]) -> list[EdgeState]:
    """MPs proportional to tau * v; an all-zero product vector falls back to uniform."""
    products = np.array([e.tau * e.v for e in edges])
    total = float(products.sum())
    if total <= 0.0:
        probs = np.full(len(edges), 1.0 / len(edges))
    else:
        probs = products / total
    return [replace(e, mp=float(p)) for e, p in zip(edges, probs)]


def roulette_select(probs, rng: RngStream) -> int:
    probs = np.asarray(probs, dtype=float)
    if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
        raise ContractViolationError("probabilities must be a simplex")
    u = rng.generator.random()
    idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    return min(idx, probs.size - 1)


def _minmax_normalize(raw: dict, keys) -> dict:
    values = [raw[k] for k in keys]
    lo, hi = min(values), max(values)
    if hi == lo:
        return {k: 1.0 for k in keys}  # degenerate range: do not zero anything out
    return {k: (raw[k] - lo) / (hi - lo) for k in keys}


class MigrationLedger:
    """Per-edge routing state plus pending effect snapshots for one round.

    The ledger is only ever touched by the coordinator between epochs.
    """

    def __init__(
        self,
        topology: Topology,
        rho: float,
        migrants_fraction: float = 0.1,
        use_attractiveness: bool = True,
        use_differential: bool = True,
    ):
        self.topology = topology
        self.rho = rho
        self.migrants_fraction = migrants_fraction
        self.use_attractiveness = use_attractiveness
        self.use_differential = use_differential
        self.out_neighbors = {i: neighbors(topology, i) for i in range(topology.T)}
        self.edges: dict[tuple[int, int], EdgeState] = {}
        for i, outs in self.out_neighbors.items():
            for o in outs:
                self.edges[(i, o)] = EdgeState(tau=1.0, v=1.0, mp=1.0 / len(outs))
        self.pending: tuple[dict[int, float], list[MigrationRecord]] | None = None
        self.pending_rows: list[dict] = []
        self.log_rows: list[dict] = []

    def out_edges(self, i: int) -> list[EdgeState]:
        return [self.edges[(i, o)] for o in self.out_neighbors[i]]

    def probabilities(self, i: int) -> np.ndarray:
        return np.array([e.mp for e in self.out_edges(i)])

    def measure_pending(self, islands) -> dict[int, float] | None:
        """Score the previous round: theta per island, phi per edge, tau update."""
        if self.pending is None:
            return None
        pre_means, records = self.pending
        raw_theta = {
            o: population_improvement(pre_means[o], islands[o].population, islands[o].model)
            for o in pre_means
        }
        theta_norm = _minmax_normalize(raw_theta, list(raw_theta))
        by_target: dict[int, list[MigrationRecord]] = {}
        for rec in records:
            by_target.setdefault(rec.target, []).append(rec)
        phi: dict[tuple[int, int], float] = {}
        for target, recs in by_target.items():
            for source, share in rank_share(recs).items():
                phi[(source, target)] = share
        if self.use_attractiveness:
            for key, edge in self.edges.items():
                delta_phi = phi.get(key, 0.0)
                self.edges[key] = update_attractiveness(
                    edge, theta_norm[key[1]], delta_phi, self.rho
                )
        for row in self.pending_rows:
            row["theta_raw"] = raw_theta[row["target"]]
        self.log_rows.extend(self.pending_rows)
        self.pending_rows = []
        self.pending = None
        return raw_theta

    def refresh_differentials(self, islands) -> None:
        if not self.use_differential:
            for key, edge in self.edges.items():
                self.edges[key] = replace(edge, v=1.0)
            return
        raw = {
            (i, o): differential_factor(islands[i].population, islands[i].model, islands[o].model)
            for (i, o) in self.edges
        }
        norm = _minmax_normalize(raw, list(raw))
        for key, edge in self.edges.items():
            self.edges[key] = replace(edge, v=norm[key])

    def refresh_probabilities(self) -> None:
        for i, outs in self.out_neighbors.items():
            updated = migration_probabilities([self.edges[(i, o)] for o in outs])
            for o, edge in zip(outs, updated):
                self.edges[(i, o)] = edge

    def update_routing(self, islands) -> None:
        """Effect measurement for the previous round, then fresh v and MPs."""
        self.measure_pending(islands)
        self.refresh_differentials(islands)
        self.refresh_probabilities()


def perform_migration(
    islands,
    ledger: MigrationLedger,
    rng: RngStream,
    epoch: int = 0,
) -> list[MigrationRecord]:
    """Copy selected individuals along roulette-chosen edges.

    Sources keep their copies; targets grow past n until their next
    environmental selection. Arrival ranks and pre-migration means are
    snapshotted here for the next round's effect measurement.
    """
    gen = rng.generator
    pre_members = {i: isl.population.members.copy() for i, isl in enumerate(islands)}
    pre_means = {
        i: float(np.mean(predict_batch(isl.model, pre_members[i])))
        for i, isl in enumerate(islands)
    }
    resident_scores = {
        i: predict_batch(isl.model, pre_members[i]) for i, isl in enumerate(islands)
    }

    outgoing: dict[tuple[int, int], list[tuple[np.ndarray, int, int]]] = {}
    for i, isl in enumerate(islands):
        outs = ledger.out_neighbors[i]
        if not outs:
            continue
        members = pre_members[i]
        count = math.ceil(ledger.migrants_fraction * members.shape[0])
        chosen = gen.choice(members.shape[0], size=count, replace=False)
        probs = ledger.probabilities(i)
        for idx in chosen:
            migrant = members[idx].copy()
            target = outs[roulette_select(probs, rng)]
            score = float(predict(islands[target].model, migrant))
            rank = _rank_among(resident_scores[target], score)
            r = max(pre_members[target].shape[0] - rank, 0)
            outgoing.setdefault((i, target), []).append((migrant, rank, r))

    records = []
    arrivals: dict[int, list[np.ndarray]] = {}
    for (source, target), items in sorted(outgoing.items()):
        migrants = np.array([m for m, _, _ in items])
        records.append(
            MigrationRecord(
                source=source,
                target=target,
                migrants=migrants,
                ranks_at_arrival=[rank for _, rank, _ in items],
                effectiveness=[r for _, _, r in items],
                pre_migration_mean=pre_means[target],
            )
        )
        arrivals.setdefault(target, []).extend(m for m, _, _ in items)

    for target, migrants in arrivals.items():
        pop = islands[target].population
        islands[target].population = Population(
            members=np.vstack([pop.members, np.array(migrants)]), scores=None
        )

    rows = []
    for rec in records:
        edge = ledger.edges[(rec.source, rec.target)]
        rows.append(
            {
                "epoch": epoch,
                "source": rec.source,
                "target": rec.target,
                "mp": edge.mp,
                "tau": edge.tau,
                "v": edge.v,
                "num_migrants": len(rec.migrants),
                "rank_sum": int(sum(rec.effectiveness)),
                "theta_raw": None,  # filled when the round's effects are measured
            }
        )
    ledger.pending = (pre_means, records)
    ledger.pending_rows = rows
    return records
