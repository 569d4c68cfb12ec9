"""HTTP service exposing solver runs.

The service is stateless: each request carries a complete YAML run
configuration, the run executes synchronously, and the response returns every
artifact (run.json content, convergence trace, any extra oracle files) as
payload; clients decide what to write to disk.  Configuration problems come
back as 422 with per-field diagnostics; solver divergence is a legitimate run
outcome and comes back as status="diverged" with the error record.
"""

from __future__ import annotations

from typing import Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .config import ConfigError, parse_config
from .runner import execute

__all__ = ["create_app", "RunRequest", "RunResponse", "ErrorRecord"]


class RunRequest(BaseModel):
    config_yaml: str = Field(..., description="YAML run configuration")
    seed: Optional[int] = Field(None, description="Overrides the config seed")
    export_ensembles: bool = Field(False, description="Include ensemble CSV exports in the response")


class ErrorRecord(BaseModel):
    code: str
    message: str
    details: Optional[list] = None


class RunResponse(BaseModel):
    status: str
    run: Optional[dict] = None
    convergence_csv: Optional[str] = None
    extras: Optional[dict] = None
    error: Optional[ErrorRecord] = None


class HealthResponse(BaseModel):
    status: str
    version: str


def _run(request: RunRequest, mode_override: Optional[str]) -> RunResponse:
    try:
        config = parse_config(request.config_yaml, seed_override=request.seed, mode_override=mode_override)
        artifacts = execute(config, export_ensembles=request.export_ensembles)
    except ConfigError as err:
        raise HTTPException(
            status_code=422,
            detail={"code": "config_error", "message": str(err), "details": err.problems},
        ) from None
    error = None
    if artifacts.status == "diverged":
        error = ErrorRecord(code="diverged", message=artifacts.run["error"]["message"])
    return RunResponse(
        status=artifacts.status,
        run=artifacts.run,
        convergence_csv=artifacts.convergence_csv,
        extras=artifacts.extras or None,
        error=error,
    )


def create_app() -> FastAPI:
    app = FastAPI(
        title="teamsde",
        version=__version__,
        description="Team-optimal and person-by-person-optimal strategies for distributed stochastic differential systems",
    )

    @app.get("/v1/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__)

    @app.post("/v1/run", response_model=RunResponse)
    def run(request: RunRequest):
        return _run(request, mode_override=None)

    @app.post("/v1/solve", response_model=RunResponse)
    def solve(request: RunRequest):
        return _run(request, mode_override="team_pbp")

    @app.post("/v1/evaluate", response_model=RunResponse)
    def evaluate(request: RunRequest):
        return _run(request, mode_override="evaluate_only")

    @app.post("/v1/check", response_model=RunResponse)
    def check(request: RunRequest):
        return _run(request, mode_override="checks_only")

    @app.post("/v1/oracle", response_model=RunResponse)
    def oracle(request: RunRequest):
        return _run(request, mode_override="oracle")

    @app.post("/v1/tree", response_model=RunResponse)
    def tree(request: RunRequest):
        return _run(request, mode_override="oracle")

    return app
