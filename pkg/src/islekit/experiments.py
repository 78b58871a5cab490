"""Experiment harness: config files, ablation variants, campaigns, analyses.

A campaign sweeps the cartesian product of functions, dimensions, variants,
and seeds, persists per-cell results, and aggregates over seeds. Analyses
cover performance profiles (ratio-to-best CDFs) and parallel speedup tables.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .benchmarks import make_problem
from .core import ConfigError, ContractViolationError
from .orchestrator import RunConfig, RunResult, run

# Each tag is a fixed set of RunConfig overrides; the full algorithm is the
# empty transformation and the blank control strips all three mechanisms.
VARIANTS: dict[str, dict] = {
    "Full": {},
    "NoH": {"diverse_data": False},
    "NoF": {"fine_tuning": False},
    "NoM": {"migration": False},
    "NoA": {"attractiveness": False},
    "NoD": {"differential": False},
    "Blank": {"diverse_data": False, "fine_tuning": False, "migration": False},
}

CAMPAIGN_COLUMNS = (
    "function",
    "dim",
    "variant",
    "seed",
    "best_estimated",
    "final_real",
    "epochs",
    "stopped_early",
    "wall_ms",
)

TRACE_COLUMNS = ("island", "iter", "best_score", "mean_score", "rmse")

MIGRATION_COLUMNS = (
    "epoch",
    "source",
    "target",
    "mp",
    "tau",
    "v",
    "num_migrants",
    "rank_sum",
    "theta_raw",
)


def load_config(path) -> RunConfig:
    """Read a JSON config file; unset fields keep the reference defaults."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return RunConfig.from_dict(data)


def apply_variant(config: RunConfig, tag: str) -> RunConfig:
    if tag not in VARIANTS:
        raise ConfigError(
            f"unknown variant {tag!r}; choose from {', '.join(VARIANTS)}"
        )
    data = asdict(config)
    data.update(VARIANTS[tag])
    return RunConfig(**data)


def load_manifest(path) -> dict:
    """Read a campaign manifest; returns it normalized with defaults filled."""
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"manifest {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("manifest must hold a JSON object")
    known = {"config", "functions", "dims", "variants", "seeds", "threads", "out"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown manifest key(s): {', '.join(sorted(unknown))}")
    for key in ("functions", "dims", "seeds"):
        if key not in data or not isinstance(data[key], list) or not data[key]:
            raise ConfigError(f"manifest key {key!r} must be a non-empty list")
    manifest = {
        "config": data.get("config", {}),
        "functions": list(data["functions"]),
        "dims": [int(d) for d in data["dims"]],
        "variants": list(data.get("variants", ["Full"])),
        "seeds": [int(s) for s in data["seeds"]],
        "threads": int(data.get("threads", 1)),
        "out": data.get("out", "."),
    }
    if not isinstance(manifest["config"], dict):
        raise ConfigError("manifest key 'config' must be an object")
    for tag in manifest["variants"]:
        if tag not in VARIANTS:
            raise ConfigError(f"manifest names unknown variant {tag!r}")
    if manifest["threads"] < 1:
        raise ConfigError("manifest key 'threads' must be at least 1")
    return manifest


@dataclass
class CampaignCell:
    """One completed (or failed) run of the sweep."""

    function: str
    dim: int
    variant: str
    seed: int
    best_estimated: float | None = None
    final_real: float | None = None
    epochs: int | None = None
    stopped_early: bool | None = None
    wall_ms: float | None = None
    error: str | None = None
    result: RunResult | None = None

    def csv_row(self) -> dict:
        return {
            "function": self.function,
            "dim": self.dim,
            "variant": self.variant,
            "seed": self.seed,
            "best_estimated": repr(self.best_estimated),
            "final_real": repr(self.final_real),
            "epochs": self.epochs,
            "stopped_early": self.stopped_early,
            "wall_ms": repr(self.wall_ms),
        }


@dataclass
class CampaignReport:
    run_id: str
    cells: list[CampaignCell]
    aggregates: list[dict]
    csv_path: str | None = None
    aggregate_path: str | None = None
    error_path: str | None = None

    @property
    def failures(self) -> list[CampaignCell]:
        return [c for c in self.cells if c.error is not None]


def _run_cell(config: RunConfig, function: str, dim: int, variant: str, seed: int) -> CampaignCell:
    cell = CampaignCell(function=function, dim=dim, variant=variant, seed=seed)
    try:
        cfg = apply_variant(config, variant)
        cfg.seed = seed
        problem = make_problem(function, dim, seed=seed, fe_limit=cfg.budget + 1)
        result = run(cfg, problem)
    except Exception as exc:  # per-cell failures must not sink the sweep
        cell.error = f"{type(exc).__name__}: {exc}"
        return cell
    cell.best_estimated = result.best_estimated_fitness
    cell.final_real = result.final_real_fitness
    cell.epochs = result.epochs
    cell.stopped_early = result.stopped_early
    cell.wall_ms = result.wall_time["total"] * 1000.0
    cell.result = result
    return cell


def _aggregate(cells: list[CampaignCell]) -> list[dict]:
    out = []
    groups: dict[tuple, list[CampaignCell]] = {}
    for cell in cells:
        if cell.error is None:
            groups.setdefault((cell.function, cell.dim, cell.variant), []).append(cell)
    for (function, dim, variant), members in groups.items():
        real = np.array([c.final_real for c in members])
        est = np.array([c.best_estimated for c in members])
        out.append(
            {
                "function": function,
                "dim": dim,
                "variant": variant,
                "seeds": len(members),
                "final_real_mean": float(real.mean()),
                "final_real_std": float(real.std()),  # population std
                "best_estimated_mean": float(est.mean()),
                "best_estimated_std": float(est.std()),
                "epochs_mean": float(np.mean([c.epochs for c in members])),
                "wall_ms_mean": float(np.mean([c.wall_ms for c in members])),
            }
        )
    return out


def campaign_run_id(manifest: dict) -> str:
    """Timestamp plus a manifest digest; unique per invocation, stable shape."""
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    payload = {k: v for k, v in manifest.items() if k != "out"}
    digest = hashlib.sha256(
        json.dumps(payload, sort_keys=True, default=str).encode()
    ).hexdigest()[:8]
    return f"{stamp}_{digest}"


def _fresh_path(directory: Path, stem: str, suffix: str) -> Path:
    """Never overwrite: bump a counter until the name is unclaimed."""
    candidate = directory / f"{stem}{suffix}"
    counter = 1
    while candidate.exists():
        candidate = directory / f"{stem}-{counter}{suffix}"
        counter += 1
    return candidate


def run_campaign(
    config: RunConfig,
    functions: list[str],
    dims: list[int],
    variants: list[str],
    seeds: list[int],
    threads: int = 1,
    out_dir=None,
    run_id: str | None = None,
) -> CampaignReport:
    """Sweep functions x dims x variants x seeds; persist rows when out_dir set."""
    for name, values in (
        ("functions", functions),
        ("dims", dims),
        ("variants", variants),
        ("seeds", seeds),
    ):
        if not values:
            raise ConfigError(f"campaign needs a non-empty {name} list")
    for tag in variants:
        if tag not in VARIANTS:
            raise ConfigError(f"unknown variant {tag!r}")
    config.validate()

    grid = list(itertools.product(functions, dims, variants, seeds))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            cells = list(
                pool.map(lambda args: _run_cell(config, *args), grid)
            )
    else:
        cells = [_run_cell(config, *args) for args in grid]

    aggregates = _aggregate(cells)
    if run_id is None:
        run_id = campaign_run_id(
            {
                "config": asdict(config),
                "functions": functions,
                "dims": dims,
                "variants": variants,
                "seeds": seeds,
            }
        )
    report = CampaignReport(run_id=run_id, cells=cells, aggregates=aggregates)
    if out_dir is not None:
        _persist_campaign(report, Path(out_dir))
    return report


def _persist_campaign(report: CampaignReport, out_dir: Path) -> None:
    rows = [c.csv_row() for c in report.cells if c.error is None]
    failures = [
        {
            "function": c.function,
            "dim": c.dim,
            "variant": c.variant,
            "seed": c.seed,
            "error": c.error,
        }
        for c in report.failures
    ]
    results = {
        f"{c.function}_d{c.dim}_{c.variant}_s{c.seed}": c.result.to_json()
        for c in report.cells
        if c.result is not None
    }
    paths = persist_campaign_files(
        out_dir, report.run_id, rows, report.aggregates, failures, results
    )
    report.csv_path = paths["csv"]
    report.aggregate_path = paths["aggregates"]
    report.error_path = paths.get("errors")


@dataclass
class PerformanceProfile:
    solvers: list[str]
    taus: np.ndarray
    cdfs: np.ndarray  # solvers x taus
    ratios: np.ndarray  # solvers x problems

    def curve(self, solver: str) -> np.ndarray:
        return self.cdfs[self.solvers.index(solver)]


def performance_profile(
    results, solvers: list[str] | None = None, tau_grid=None
) -> PerformanceProfile:
    """CDFs of each solver's ratio to the per-problem best result."""
    matrix = np.asarray(results, dtype=float)
    if matrix.ndim != 2 or matrix.size == 0:
        raise ContractViolationError("results must be a non-empty solvers x problems matrix")
    if not np.all(np.isfinite(matrix)) or np.any(matrix <= 0):
        raise ContractViolationError(
            "profile results must be positive and finite; shift the data first"
        )
    if solvers is None:
        solvers = [f"solver_{i}" for i in range(matrix.shape[0])]
    if len(solvers) != matrix.shape[0]:
        raise ContractViolationError("one solver label per matrix row")
    ratios = matrix / matrix.min(axis=0, keepdims=True)
    if tau_grid is None:
        taus = np.unique(ratios)
    else:
        taus = np.sort(np.asarray(tau_grid, dtype=float))
    cdfs = np.array(
        [(ratios[s][None, :] <= taus[:, None]).mean(axis=1) for s in range(len(solvers))]
    )
    return PerformanceProfile(solvers=list(solvers), taus=taus, cdfs=cdfs, ratios=ratios)


def profile_from_campaign_rows(rows: list[dict]) -> PerformanceProfile:
    """Pivot campaign CSV rows: variants are solvers, (function, dim) are problems."""
    if not rows:
        raise ContractViolationError("no campaign rows to profile")
    groups: dict[tuple, dict[tuple, list[float]]] = {}
    for row in rows:
        problem = (row["function"], int(row["dim"]))
        solver = row["variant"]
        groups.setdefault(solver, {}).setdefault(problem, []).append(
            float(row["final_real"])
        )
    solvers = sorted(groups)
    problems = sorted({p for by_problem in groups.values() for p in by_problem})
    matrix = np.empty((len(solvers), len(problems)))
    for s, solver in enumerate(solvers):
        for p, problem in enumerate(problems):
            values = groups[solver].get(problem)
            if not values:
                raise ContractViolationError(
                    f"variant {solver} has no rows for {problem[0]} d={problem[1]}"
                )
            matrix[s, p] = float(np.mean(values))
    return performance_profile(matrix, solvers=solvers)


@dataclass
class SpeedupReport:
    thread_counts: list[int]
    medians: dict[int, float]  # threads -> median R_s over seeds
    rows: list[dict] = field(default_factory=list)  # per (seed, threads) timing


def speedup_report(
    config: RunConfig,
    thread_counts: list[int],
    seeds: list[int],
    function: str = "elliptic",
    dim: int = 50,
) -> SpeedupReport:
    """Wall-time ratio of the serial scheduler to the parallel one per thread count."""
    if not thread_counts:
        raise ConfigError("speedup needs at least one thread count")
    if not seeds:
        raise ConfigError("speedup needs at least one seed")
    config.validate()
    ratios: dict[int, list[float]] = {k: [] for k in thread_counts}
    rows = []
    for seed in seeds:
        base = asdict(config)
        base["seed"] = seed
        serial_cfg = RunConfig(**{**base, "scheduler": "serial", "threads": 1})
        problem = make_problem(function, dim, seed=seed, fe_limit=serial_cfg.budget + 1)
        t_serial = run(serial_cfg, problem).wall_time["total"]
        rows.append({"seed": seed, "threads": 0, "scheduler": "serial", "seconds": t_serial})
        for k in thread_counts:
            par_cfg = RunConfig(**{**base, "scheduler": "parallel", "threads": k})
            problem = make_problem(function, dim, seed=seed, fe_limit=par_cfg.budget + 1)
            t_par = run(par_cfg, problem).wall_time["total"]
            ratios[k].append(t_serial / t_par)
            rows.append(
                {"seed": seed, "threads": k, "scheduler": "parallel", "seconds": t_par}
            )
    medians = {k: float(statistics.median(v)) for k, v in ratios.items()}
    return SpeedupReport(thread_counts=list(thread_counts), medians=medians, rows=rows)


def write_trace_csv(trace_rows, path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(TRACE_COLUMNS)
        for island, it, best, mean, rmse in trace_rows:
            writer.writerow([int(island), int(it), repr(best), repr(mean), repr(rmse)])


def write_migration_csv(migration_rows, path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=MIGRATION_COLUMNS)
        writer.writeheader()
        for row in migration_rows:
            out = dict(row)
            if out.get("theta_raw") is None:
                out["theta_raw"] = ""
            writer.writerow(out)


def write_convergence_csv(per_epoch, path) -> None:
    """Plot-ready epoch series: the global elite and each island's elite."""
    islands = len(per_epoch[0]["per_island_elite_fitness"]) if per_epoch else 0
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            ["epoch", "global_fitness"] + [f"island_{i}" for i in range(islands)]
        )
        for epoch, row in enumerate(per_epoch):
            writer.writerow(
                [epoch, repr(row["global_fitness"])]
                + [repr(v) for v in row["per_island_elite_fitness"]]
            )


def persist_campaign_files(
    out_dir,
    run_id: str,
    rows: list[dict],
    aggregates: list[dict],
    failures: list[dict],
    results: dict[str, dict] | None = None,
) -> dict[str, str]:
    """Write the campaign artifact set from plain dicts; returns written paths.

    Filenames carry the run id and are never reused, so reruns append new
    files next to the old ones instead of overwriting them.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths: dict[str, str] = {}

    csv_path = _fresh_path(out_dir, f"campaign_{run_id}", ".csv")
    with open(csv_path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=CAMPAIGN_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in CAMPAIGN_COLUMNS})
    paths["csv"] = str(csv_path)

    agg_path = _fresh_path(out_dir, f"campaign_{run_id}_aggregates", ".csv")
    agg_fields = (
        "function",
        "dim",
        "variant",
        "seeds",
        "final_real_mean",
        "final_real_std",
        "best_estimated_mean",
        "best_estimated_std",
        "epochs_mean",
        "wall_ms_mean",
    )
    with open(agg_path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=agg_fields)
        writer.writeheader()
        for row in aggregates:
            writer.writerow(row)
    paths["aggregates"] = str(agg_path)

    if failures:
        err_path = _fresh_path(out_dir, f"campaign_{run_id}_errors", ".csv")
        with open(err_path, "w", newline="") as handle:
            writer = csv.DictWriter(
                handle, fieldnames=("function", "dim", "variant", "seed", "error")
            )
            writer.writeheader()
            for row in failures:
                writer.writerow(row)
        paths["errors"] = str(err_path)

    if results:
        cell_dir = out_dir / f"campaign_{run_id}"
        cell_dir.mkdir(exist_ok=True)
        for stem, payload in results.items():
            with open(cell_dir / f"{stem}.json", "w") as handle:
                json.dump(payload, handle, indent=2)
        paths["cells"] = str(cell_dir)
    return paths
