"""Request and response bodies for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class ProblemsResponse(BaseModel):
    functions: list[str]


class RunRequest(BaseModel):
    function: str
    dim: int = Field(ge=2)
    seed: int = 0
    config: dict = Field(default_factory=dict)
    variant: str = "Full"
    threads: int | None = Field(default=None, ge=1)
    include_trace: bool = False


class PerEpochRow(BaseModel):
    global_fitness: float
    per_island_elite_fitness: list[float]
    wall_ms: float


class RunPayload(BaseModel):
    config_echo: dict
    best_estimated_fitness: float
    final_real_fitness: float
    epochs: int
    stopped_early: bool
    per_epoch: list[PerEpochRow]


class MigrationRow(BaseModel):
    epoch: int
    source: int
    target: int
    mp: float
    tau: float
    v: float
    num_migrants: int
    rank_sum: int
    theta_raw: float | None = None


class RunResponse(BaseModel):
    result: RunPayload
    trace: list[list[float]] | None = None
    migration: list[MigrationRow] | None = None


class CampaignRequest(BaseModel):
    functions: list[str] = Field(min_length=1)
    dims: list[int] = Field(min_length=1)
    seeds: list[int] = Field(min_length=1)
    variants: list[str] = Field(default_factory=lambda: ["Full"], min_length=1)
    config: dict = Field(default_factory=dict)
    threads: int = Field(default=1, ge=1)
    include_results: bool = True


class CampaignRow(BaseModel):
    function: str
    dim: int
    variant: str
    seed: int
    best_estimated: float
    final_real: float
    epochs: int
    stopped_early: bool
    wall_ms: float


class CampaignFailure(BaseModel):
    function: str
    dim: int
    variant: str
    seed: int
    error: str


class CampaignResponse(BaseModel):
    run_id: str
    rows: list[CampaignRow]
    aggregates: list[dict]
    failures: list[CampaignFailure]
    results: dict[str, RunPayload] | None = None


class ProfileRequest(BaseModel):
    # either a ready matrix with labels or raw campaign rows to pivot
    results: list[list[float]] | None = None
    solvers: list[str] | None = None
    rows: list[dict] | None = None
    tau_grid: list[float] | None = None


class ProfileResponse(BaseModel):
    solvers: list[str]
    taus: list[float]
    cdfs: list[list[float]]


class SpeedupRequest(BaseModel):
    thread_counts: list[int] = Field(min_length=1)
    seeds: list[int] = Field(min_length=1)
    config: dict = Field(default_factory=dict)
    function: str = "elliptic"
    dim: int = Field(default=50, ge=2)


class SpeedupResponse(BaseModel):
    thread_counts: list[int]
    medians: dict[int, float]
    rows: list[dict]


class ErrorBody(BaseModel):
    error: str
    detail: str
