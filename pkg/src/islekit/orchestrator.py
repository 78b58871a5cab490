"""Run coordination: initialization, the epoch loop, global surrogate, schedulers.

A run builds the offline dataset, trains one surrogate per island on its own
data split, then alternates intra-island optimization epochs with adaptive
migration until the iteration budget or the early-stop rule ends the run.
The only true-function evaluations are the offline dataset and one final
assessment of the reported best candidate.
"""

from __future__ import annotations

import math
import threading
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from multiprocessing import get_context

import numpy as np

from .benchmarks import BenchmarkProblem
from .core import (
    Bounds,
    ConfigError,
    ContractViolationError,
    InitializationError,
    RngStream,
    clamp,
    derive_stream,
)
from .ensemble import inverse_rmse_weights, weighted_prediction_batch
from .evolution import (
    EvolutionParams,
    Population,
    finalize_epoch,
    intra_island_epoch,
    island_iteration,
)
from .migration import (
    MigrationLedger,
    Topology,
    TOPOLOGY_KINDS,
    neighbors,
    perform_migration,
)
from .sampling import (
    IslandDataSplit,
    build_offline_dataset,
    partition_island_data,
    train_size,
)
from .surrogate import (
    default_center_count,
    design_matrix,
    train_rbfn,
    validation_rmse,
)
from .sampling import latin_hypercube

SCHEDULERS = ("serial", "parallel")


class SharedBoard:
    """T-slot registry of each island's latest (model, rmse), read atomically."""

    def __init__(self, T: int):
        self._slots: list[tuple | None] = [None] * T
        self._lock = threading.Lock()

    def publish(self, i: int, model, rmse: float) -> None:
        with self._lock:
            self._slots[i] = (model, float(rmse))

    def get(self, i: int) -> tuple:
        with self._lock:
            slot = self._slots[i]
        if slot is None:
            raise InitializationError(f"board slot {i} was never published")
        return slot

    def snapshot(self) -> "SharedBoard":
        new = SharedBoard(len(self._slots))
        with self._lock:
            new._slots = list(self._slots)
        return new

    def all_rmses(self) -> np.ndarray:
        return np.array([self.get(i)[1] for i in range(len(self._slots))])

    def all_models(self) -> list:
        return [self.get(i)[0] for i in range(len(self._slots))]

    def __getstate__(self):
        return {"slots": self._slots}

    def __setstate__(self, state):
        self._slots = state["slots"]
        self._lock = threading.Lock()


@dataclass
class IslandState:
    """One island's data, cached design rows, population, and current model."""

    index: int
    neighbors: list[int]
    train_X: np.ndarray
    train_y: np.ndarray
    val_X: np.ndarray
    val_y: np.ndarray
    train_design: np.ndarray
    val_design: np.ndarray
    population: Population
    model: object
    rmse: float
    elite: np.ndarray | None = None
    elite_score: float | None = None


@dataclass
class RunConfig:
    """Algorithm parameters; defaults follow the reference configuration."""

    T: int = 36
    n: int = 100
    t_iter: int = 90
    max_iter: int = 1800
    es: int | None = 3
    rho: float = 0.1
    l: int = 3
    migrants_fraction: float = 0.1
    topology: str = "von_neumann"
    eta_c: float = 15.0
    eta_m: float = 15.0
    p_cross: float = 1.0
    p_mut: float | None = None
    budget: int = 500
    seed: int = 0
    scheduler: str = "serial"
    threads: int = 1
    snapshot: bool = False
    trace: bool = False
    # ablation flags
    diverse_data: bool = True
    fine_tuning: bool = True
    migration: bool = True
    attractiveness: bool = True
    differential: bool = True

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        config = cls(**data)
        config.validate()
        return config

    def validate(self) -> None:
        if self.T < 1:
            raise ConfigError("T must be at least 1")
        if self.n < 2:
            raise ConfigError("n must be at least 2")
        if self.t_iter < 1:
            raise ConfigError("t_iter must be at least 1")
        if self.max_iter < 1 or self.max_iter % self.t_iter != 0:
            raise ConfigError("max_iter must be a positive multiple of t_iter")
        if self.es is not None and self.es < 1:
            raise ConfigError("es must be a positive count or null to disable")
        if not 0.0 < self.rho < 1.0:
            raise ConfigError("rho must lie strictly between 0 and 1")
        if self.l < 0 or self.l > self.n:
            raise ConfigError("l must lie in 0..n")
        if not 0.0 < self.migrants_fraction <= 1.0:
            raise ConfigError("migrants_fraction must lie in (0, 1]")
        if self.topology not in TOPOLOGY_KINDS:
            raise ConfigError(
                f"topology must be one of {', '.join(TOPOLOGY_KINDS)}"
            )
        if self.topology == "von_neumann":
            side = math.isqrt(self.T)
            if side * side != self.T:
                raise ConfigError("T must be a perfect square for the von_neumann topology")
        if self.eta_c <= 0 or self.eta_m <= 0:
            raise ConfigError("eta_c and eta_m must be positive")
        if not 0.0 <= self.p_cross <= 1.0:
            raise ConfigError("p_cross must lie in [0, 1]")
        if self.p_mut is not None and not 0.0 <= self.p_mut <= 1.0:
            raise ConfigError("p_mut must lie in [0, 1] or null for 1/d")
        if self.budget < 3:
            raise ConfigError("budget must be at least 3")
        if self.scheduler not in SCHEDULERS:
            raise ConfigError(f"scheduler must be one of {', '.join(SCHEDULERS)}")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")

    def evolution_params(self) -> EvolutionParams:
        return EvolutionParams(
            eta_c=self.eta_c, eta_m=self.eta_m, p_cross=self.p_cross, p_mut=self.p_mut
        )


@dataclass
class RunResult:
    """Outcome of one run; the headline is the history-best estimated elite."""

    best_candidate: np.ndarray
    best_estimated_fitness: float
    final_real_fitness: float
    last_elite_estimated_fitness: float
    elite_history: list[float]
    epochs: int
    stopped_early: bool
    per_epoch: list[dict]
    wall_time: dict[str, float]
    config_echo: dict
    trace_rows: list[tuple] = field(default_factory=list)
    migration_rows: list[dict] = field(default_factory=list)

    def to_json(self, include_timing: bool = True) -> dict:
        per_epoch = [
            {
                "global_fitness": row["global_fitness"],
                "per_island_elite_fitness": row["per_island_elite_fitness"],
                "wall_ms": row["wall_ms"] if include_timing else 0.0,
            }
            for row in self.per_epoch
        ]
        return {
            "config_echo": self.config_echo,
            "best_estimated_fitness": self.best_estimated_fitness,
            "final_real_fitness": self.final_real_fitness,
            "epochs": self.epochs,
            "stopped_early": self.stopped_early,
            "per_epoch": per_epoch,
        }


def global_weights(board: SharedBoard) -> np.ndarray:
    """Inverse-RMSE weights over every island's latest validation score."""
    return inverse_rmse_weights(board.all_rmses())


def global_elite(elites: list[np.ndarray], board: SharedBoard) -> tuple[np.ndarray, float]:
    """Best island elite under the all-island weighted surrogate; index tiebreak."""
    weights = global_weights(board)
    models = board.all_models()
    scores = weighted_prediction_batch(models, weights, np.array(elites))
    best = int(np.argmin(scores))
    return np.array(elites[best]).copy(), float(scores[best])


def early_stop(fitness_history, es: int) -> bool:
    """True when the running best has not improved for es consecutive epochs."""
    history = np.asarray(fitness_history, dtype=float)
    if history.size == 0:
        raise ContractViolationError("early_stop needs a non-empty history")
    return bool(np.argmin(history) < history.size - es)


def _init_islands(config: RunConfig, problem: BenchmarkProblem, dataset, root: RngStream, topology: Topology):
    islands = []
    if not config.diverse_data:
        # homogeneous mode: every island trains on the full dataset and
        # validates on one shared holdout third
        idx = derive_stream(root, "shared/holdout").generator.permutation(len(dataset))
        val_idx = idx[train_size(len(dataset)):]
        shared_split = IslandDataSplit(
            train_X=dataset.X,
            train_y=dataset.y,
            val_X=dataset.X[val_idx],
            val_y=dataset.y[val_idx],
        )
    for i in range(config.T):
        if config.diverse_data:
            split = partition_island_data(dataset, derive_stream(root, f"init/island/{i}/partition"))
        else:
            split = shared_split
        model = train_rbfn(
            split.train_X,
            split.train_y,
            default_center_count(split.train_X.shape[0]),
            derive_stream(root, f"init/island/{i}/kmeans"),
        )
        rmse = validation_rmse(model, split.val_X, split.val_y)
        members = latin_hypercube(
            config.n, problem.bounds, derive_stream(root, f"init/island/{i}/population")
        )
        islands.append(
            IslandState(
                index=i,
                neighbors=neighbors(topology, i),
                train_X=split.train_X,
                train_y=split.train_y,
                val_X=split.val_X,
                val_y=split.val_y,
                train_design=design_matrix(model.centers, model.sigma, split.train_X),
                val_design=design_matrix(model.centers, model.sigma, split.val_X),
                population=Population(members=members),
                model=model,
                rmse=rmse,
            )
        )
    return islands


def _epoch_task(island, read_board, t_iter, params, rng, n, l, bounds, fine_tuning, want_trace):
    """Whole-epoch unit of work for one island (runs inside a pool worker)."""
    trace = [] if want_trace else None
    intra_island_epoch(
        island,
        read_board,
        read_board,  # publishes stay worker-local; the coordinator republishes
        t_iter,
        params,
        rng,
        n=n,
        l=l,
        bounds=bounds,
        fine_tuning=fine_tuning,
        neighbor_ensemble=fine_tuning,
        trace=trace,
    )
    return island, trace or []


def _serial_epoch(islands, board, config, params, bounds, epoch, root, want_trace):
    read_board = board.snapshot() if config.snapshot else board
    rngs = [derive_stream(root, f"epoch/{epoch}/island/{i}") for i in range(config.T)]
    rows = []
    for it in range(config.t_iter):
        for isl in islands:
            island_iteration(
                isl,
                read_board,
                board,
                params,
                rngs[isl.index],
                n=config.n,
                l=config.l,
                bounds=bounds,
                fine_tuning=config.fine_tuning,
                neighbor_ensemble=config.fine_tuning,
            )
            if want_trace:
                scores = isl.population.scores
                rows.append((isl.index, it, float(scores[0]), float(np.mean(scores)), isl.rmse))
    for isl in islands:
        finalize_epoch(isl, read_board, neighbor_ensemble=config.fine_tuning)
    return rows


def _parallel_epoch(islands, board, config, params, bounds, epoch, root, want_trace, pool):
    snap = board.snapshot()
    futures = [
        pool.submit(
            _epoch_task,
            isl,
            snap,
            config.t_iter,
            params,
            derive_stream(root, f"epoch/{epoch}/island/{isl.index}"),
            config.n,
            config.l,
            bounds,
            config.fine_tuning,
            want_trace,
        )
        for isl in islands
    ]
    rows = []
    for fut in futures:
        updated, trace = fut.result()
        islands[updated.index] = updated
        board.publish(updated.index, updated.model, updated.rmse)
        rows.extend(trace)
    return rows


def run(config: RunConfig, problem: BenchmarkProblem, observer=None) -> RunResult:
    """Execute one full optimization run on the given problem."""
    config.validate()
    if problem.fe_counter != 0:
        raise ConfigError("problem already has evaluations on its counter; use a fresh instance")
    if problem.fe_limit is None:
        problem.fe_limit = config.budget + 1
    elif problem.fe_limit < config.budget + 1:
        raise ConfigError("problem fe_limit cannot cover budget plus the final assessment")

    t_start = time.perf_counter()
    root = RngStream(config.seed)
    bounds = problem.bounds
    dataset = build_offline_dataset(problem, config.budget, derive_stream(root, "dataset"))
    topology = Topology.make(config.topology, config.T)
    islands = _init_islands(config, problem, dataset, root, topology)
    board = SharedBoard(config.T)
    for isl in islands:
        board.publish(isl.index, isl.model, isl.rmse)
    ledger = MigrationLedger(
        topology,
        config.rho,
        config.migrants_fraction,
        use_attractiveness=config.attractiveness,
        use_differential=config.differential,
    )
    init_seconds = time.perf_counter() - t_start

    params = config.evolution_params()
    max_epochs = config.max_iter // config.t_iter
    elite_scores: list[float] = []
    elite_candidates: list[np.ndarray] = []
    per_epoch: list[dict] = []
    trace_rows: list[tuple] = []
    stopped_early = False
    intra_seconds = 0.0
    migration_seconds = 0.0

    pool = None
    try:
        if config.scheduler == "parallel":
            pool = ProcessPoolExecutor(
                max_workers=min(config.threads, config.T),
                mp_context=get_context("fork"),
            )
        for epoch in range(max_epochs):
            e_start = time.perf_counter()
            if config.scheduler == "parallel":
                rows = _parallel_epoch(
                    islands, board, config, params, bounds, epoch, root, config.trace, pool
                )
            else:
                rows = _serial_epoch(
                    islands, board, config, params, bounds, epoch, root, config.trace
                )
            if config.trace:
                offset = epoch * config.t_iter
                trace_rows.extend(
                    sorted((i, offset + it, b, m, r) for i, it, b, m, r in rows)
                )
            weights = global_weights(board)
            models = board.all_models()
            island_elites = np.array([isl.elite for isl in islands])
            elite_fitness = weighted_prediction_batch(models, weights, island_elites)
            best_island = int(np.argmin(elite_fitness))
            elite_candidates.append(island_elites[best_island].copy())
            elite_scores.append(float(elite_fitness[best_island]))
            intra_seconds += time.perf_counter() - e_start

            if observer is not None:
                observer(
                    {
                        "epoch": epoch,
                        "islands": islands,
                        "board": board,
                        "ledger": ledger,
                        "global_elite": elite_candidates[-1],
                        "global_fitness": elite_scores[-1],
                    }
                )
            epoch_ms = (time.perf_counter() - e_start) * 1000.0
            per_epoch.append(
                {
                    "global_fitness": elite_scores[-1],
                    "per_island_elite_fitness": [float(v) for v in elite_fitness],
                    "wall_ms": epoch_ms,
                }
            )
            if config.es is not None and early_stop(elite_scores, config.es):
                stopped_early = True
                break
            if epoch < max_epochs - 1 and config.migration and config.T > 1:
                m_start = time.perf_counter()
                ledger.update_routing(islands)
                perform_migration(
                    islands, ledger, derive_stream(root, f"epoch/{epoch}/migration"), epoch=epoch
                )
                migration_seconds += time.perf_counter() - m_start
    finally:
        if pool is not None:
            pool.shutdown()

    best_epoch = int(np.argmin(elite_scores))
    best_candidate = elite_candidates[best_epoch]
    final_real = problem.evaluate(clamp(best_candidate, bounds))
    if problem.fe_counter != config.budget + 1:
        raise ContractViolationError(
            f"real-evaluation accounting is off: {problem.fe_counter} != {config.budget + 1}"
        )
    total_seconds = time.perf_counter() - t_start
    return RunResult(
        best_candidate=best_candidate,
        best_estimated_fitness=float(elite_scores[best_epoch]),
        final_real_fitness=float(final_real),
        last_elite_estimated_fitness=float(elite_scores[-1]),
        elite_history=[float(s) for s in elite_scores],
        epochs=len(elite_scores),
        stopped_early=stopped_early,
        per_epoch=per_epoch,
        wall_time={
            "init": init_seconds,
            "intra": intra_seconds,
            "migration": migration_seconds,
            "total": total_seconds,
        },
        config_echo=asdict(config),
        trace_rows=trace_rows,
        migration_rows=list(ledger.log_rows) + list(ledger.pending_rows),
    )
