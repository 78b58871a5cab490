"""HTTP facade over the optimizer: runs, campaigns, and analyses as endpoints."""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..benchmarks import available_functions, make_problem
from ..core import BudgetExceededError, ConfigError, ContractViolationError
from ..experiments import (
    apply_variant,
    performance_profile,
    profile_from_campaign_rows,
    run_campaign,
    speedup_report,
)
from ..orchestrator import RunConfig, run
from .schemas import (
    CampaignFailure,
    CampaignRequest,
    CampaignResponse,
    CampaignRow,
    HealthResponse,
    ProblemsResponse,
    ProfileRequest,
    ProfileResponse,
    RunRequest,
    RunResponse,
    SpeedupRequest,
    SpeedupResponse,
)


def _config_from_request(config: dict, variant: str, seed: int, threads: int | None) -> RunConfig:
    cfg = apply_variant(RunConfig.from_dict(config), variant)
    cfg.seed = seed
    if threads is not None:
        cfg.threads = threads
        cfg.scheduler = "parallel" if threads > 1 else "serial"
    cfg.validate()
    return cfg


def create_app() -> FastAPI:
    app = FastAPI(title="islekit", version=__version__)

    @app.exception_handler(ConfigError)
    async def config_error(request: Request, exc: ConfigError):
        return JSONResponse(status_code=400, content={"error": "config", "detail": str(exc)})

    @app.exception_handler(ContractViolationError)
    async def contract_error(request: Request, exc: ContractViolationError):
        return JSONResponse(status_code=400, content={"error": "contract", "detail": str(exc)})

    @app.exception_handler(BudgetExceededError)
    async def budget_error(request: Request, exc: BudgetExceededError):
        return JSONResponse(status_code=409, content={"error": "budget", "detail": str(exc)})

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__)

    @app.get("/problems", response_model=ProblemsResponse)
    def problems():
        return ProblemsResponse(functions=available_functions())

    @app.post("/runs", response_model=RunResponse, response_model_exclude_none=True)
    def runs(body: RunRequest):
        cfg = _config_from_request(body.config, body.variant, body.seed, body.threads)
        cfg.trace = body.include_trace
        problem = make_problem(body.function, body.dim, seed=body.seed, fe_limit=cfg.budget + 1)
        result = run(cfg, problem)
        return RunResponse(
            result=result.to_json(),
            trace=[list(row) for row in result.trace_rows] if body.include_trace else None,
            migration=result.migration_rows if body.include_trace else None,
        )

    @app.post("/campaigns", response_model=CampaignResponse, response_model_exclude_none=True)
    def campaigns(body: CampaignRequest):
        config = RunConfig.from_dict(body.config)
        report = run_campaign(
            config,
            body.functions,
            body.dims,
            body.variants,
            body.seeds,
            threads=body.threads,
        )
        rows = [
            CampaignRow(
                function=c.function,
                dim=c.dim,
                variant=c.variant,
                seed=c.seed,
                best_estimated=c.best_estimated,
                final_real=c.final_real,
                epochs=c.epochs,
                stopped_early=c.stopped_early,
                wall_ms=c.wall_ms,
            )
            for c in report.cells
            if c.error is None
        ]
        failures = [
            CampaignFailure(
                function=c.function, dim=c.dim, variant=c.variant, seed=c.seed, error=c.error
            )
            for c in report.failures
        ]
        results = None
        if body.include_results:
            results = {
                f"{c.function}_d{c.dim}_{c.variant}_s{c.seed}": c.result.to_json()
                for c in report.cells
                if c.result is not None
            }
        return CampaignResponse(
            run_id=report.run_id,
            rows=rows,
            aggregates=report.aggregates,
            failures=failures,
            results=results,
        )

    @app.post("/profiles", response_model=ProfileResponse)
    def profiles(body: ProfileRequest):
        if body.rows is not None:
            profile = profile_from_campaign_rows(body.rows)
        elif body.results is not None:
            profile = performance_profile(
                body.results, solvers=body.solvers, tau_grid=body.tau_grid
            )
        else:
            raise ConfigError("profile request needs either 'rows' or 'results'")
        return ProfileResponse(
            solvers=profile.solvers,
            taus=[float(t) for t in profile.taus],
            cdfs=[[float(v) for v in row] for row in profile.cdfs],
        )

    @app.post("/speedups", response_model=SpeedupResponse)
    def speedups(body: SpeedupRequest):
        config = RunConfig.from_dict(body.config)
        report = speedup_report(
            config, body.thread_counts, body.seeds, function=body.function, dim=body.dim
        )
        return SpeedupResponse(
            thread_counts=report.thread_counts,
            medians=report.medians,
            rows=report.rows,
        )

    return app
