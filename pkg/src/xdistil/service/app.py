"""FastAPI app: one endpoint per pipeline operation.

Error mapping: contract violations are 422, configuration problems 400,
file/checkpoint problems 400 with error_kind "io". Bodies follow
ErrorResponse so clients can map failures back to exit codes.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import CheckpointError, ConfigError, ContractError, XdistilError
from . import handlers
from .schemas import (AugmentResponse, ErrorResponse, EvalResponse,
                      GradcheckResponse, HealthResponse, RunRequest,
                      SelectTaskResponse, SwapResponse, TrainResponse)

app = FastAPI(
    title="xdistil",
    version=__version__,
    description="Progressive transformer distillation as a service: "
                "staged teacher-student transfer, SVD embedding compression, "
                "KNN transfer-set augmentation, and cross-vocabulary "
                "embedding swap.",
)

ERROR_RESPONSES = {
    400: {"model": ErrorResponse, "description": "configuration or IO problem"},
    422: {"model": ErrorResponse, "description": "contract violation"},
}


def _error(status: int, kind: str, exc: Exception) -> JSONResponse:
    return JSONResponse(status_code=status,
                        content={"error_kind": kind, "detail": str(exc)})


@app.exception_handler(ContractError)
async def _contract_error(request: Request, exc: ContractError):
    return _error(422, "contract", exc)


@app.exception_handler(ConfigError)
async def _config_error(request: Request, exc: ConfigError):
    return _error(400, "config", exc)


@app.exception_handler(CheckpointError)
async def _checkpoint_error(request: Request, exc: CheckpointError):
    return _error(400, "io", exc)


@app.exception_handler(OSError)
async def _os_error(request: Request, exc: OSError):
    return _error(400, "io", exc)


@app.exception_handler(XdistilError)
async def _internal_error(request: Request, exc: XdistilError):
    return _error(500, "internal", exc)


@app.get("/v1/health", response_model=HealthResponse)
def health() -> HealthResponse:
    return HealthResponse(version=__version__)


@app.post("/v1/finetune", response_model=TrainResponse, responses=ERROR_RESPONSES)
def finetune(request: RunRequest) -> TrainResponse:
    return TrainResponse(**handlers.handle_finetune(request.config))


@app.post("/v1/distil", response_model=TrainResponse, responses=ERROR_RESPONSES)
def distil(request: RunRequest) -> TrainResponse:
    return TrainResponse(**handlers.handle_distil(request.config))


@app.post("/v1/select-task", response_model=SelectTaskResponse, responses=ERROR_RESPONSES)
def select_task(request: RunRequest) -> SelectTaskResponse:
    return SelectTaskResponse(**handlers.handle_select_task(request.config))


@app.post("/v1/augment", response_model=AugmentResponse, responses=ERROR_RESPONSES)
def augment(request: RunRequest) -> AugmentResponse:
    return AugmentResponse(**handlers.handle_augment(request.config))


@app.post("/v1/swap-embeddings", response_model=SwapResponse, responses=ERROR_RESPONSES)
def swap_embeddings(request: RunRequest) -> SwapResponse:
    return SwapResponse(**handlers.handle_swap_embeddings(request.config))


@app.post("/v1/eval", response_model=EvalResponse, responses=ERROR_RESPONSES)
def eval_checkpoint(request: RunRequest) -> EvalResponse:
    return EvalResponse(**handlers.handle_eval(request.config))


@app.post("/v1/gradcheck", response_model=GradcheckResponse, responses=ERROR_RESPONSES)
def gradcheck(request: RunRequest) -> GradcheckResponse:
    return GradcheckResponse(**handlers.handle_gradcheck(request.config))
