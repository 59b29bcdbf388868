"""FastAPI application exposing the service operations.

Stateless compute endpoints: every request carries its full configuration
including seeds, and identical requests return identical payloads (apart
from wall-clock fields).  Run with ``smooth-lsvi serve`` or any ASGI server
pointed at ``smooth_lsvi.service.app:app``.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from ..lsvi import DesignFailure, EnvFailure
from . import models, service

app = FastAPI(title="smooth-lsvi", version="0.1.0")


def _guarded(fn, request):
    try:
        return fn(request)
    except service.UsageError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    except DesignFailure as exc:
        raise HTTPException(status_code=409, detail=f"design failure: {exc}") from exc
    except EnvFailure as exc:
        raise HTTPException(status_code=502, detail=f"environment failure: {exc}") from exc


@app.get("/v1/health")
def health() -> dict:
    return {"status": "ok"}


@app.post("/v1/kernel/check", response_model=models.KernelCheckReport)
def kernel_check(request: models.KernelCheckRequest) -> models.KernelCheckReport:
    return _guarded(service.run_kernel_check, request)


@app.post("/v1/train", response_model=models.TrainResponse)
def train(request: models.TrainRequest) -> models.TrainResponse:
    return _guarded(service.run_train, request)


@app.post("/v1/eval", response_model=models.EvalResponse)
def evaluate(request: models.EvalRequest) -> models.EvalResponse:
    return _guarded(service.run_eval, request)


@app.post("/v1/sweep", response_model=models.SweepResponse)
def sweep(request: models.SweepRequest) -> models.SweepResponse:
    return _guarded(service.run_sweep_service, request)
