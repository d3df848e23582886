"""FastAPI service exposing the experiment runner.

Each task endpoint accepts a full experiment config (the endpoint pins the
task field), runs it synchronously, and returns the result rows.  The CLI is
a thin client of these handlers; remote deployments run them behind uvicorn.
"""

from __future__ import annotations

import json
import tempfile
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import FieldSenseError, InvalidParameterError, ResourceLimitError
from ..experiments import ExperimentConfig, report, run_experiment
from .models import (
    HealthResponse,
    ReportRequest,
    ReportResponse,
    ResultSetModel,
    RunRequest,
)

app = FastAPI(title="fieldsense", version=__version__)

TASK_ENDPOINTS = {
    "ground-state": "ground_state",
    "propagator": "propagator",
    "protocol": "protocol",
    "mass": "mass",
    "noise-scaling": "noise_scaling",
    "ion-map": "ion_map",
}


@app.exception_handler(FieldSenseError)
async def _domain_error(request: Request, exc: FieldSenseError):
    if isinstance(exc, ResourceLimitError):
        status = 413
    elif isinstance(exc, InvalidParameterError):
        status = 422
    else:
        status = 400
    return JSONResponse(status_code=status, content={"detail": str(exc)})


@app.get("/v1/health", response_model=HealthResponse)
def health() -> HealthResponse:
    return HealthResponse(status="ok", version=__version__)


def run_task(task: str, config: ExperimentConfig) -> ResultSetModel:
    """Shared handler: force the task field and execute."""
    forced = config.model_copy(update={"task": task})
    result = run_experiment(forced)
    return ResultSetModel.from_result(result)


def _make_endpoint(task_name: str):
    def endpoint(request: RunRequest) -> ResultSetModel:
        return run_task(task_name, request.config)

    endpoint.__name__ = f"run_{task_name}"
    return endpoint


for route, task_name in TASK_ENDPOINTS.items():
    app.post(f"/v1/{route}", response_model=ResultSetModel)(_make_endpoint(task_name))


@app.post("/v1/sweep", response_model=ResultSetModel)
def run_sweep(request: RunRequest) -> ResultSetModel:
    """Run the config as-is (task taken from the config; sweep axes honored)."""
    if not request.config.sweep:
        raise InvalidParameterError("sweep endpoint requires at least one sweep axis")
    return ResultSetModel.from_result(run_experiment(request.config))


@app.post("/v1/report", response_model=ReportResponse)
def make_report(request: ReportRequest) -> ReportResponse:
    result = request.results.to_result()
    with tempfile.TemporaryDirectory() as tmp:
        csv_path, json_path = report(result, request.kind, tmp, prefix="report")
        csv_text = Path(csv_path).read_text()
        sidecar = json.loads(Path(json_path).read_text())
    return ReportResponse(kind=request.kind, csv=csv_text, sidecar=sidecar)
