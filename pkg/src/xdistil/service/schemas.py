"""Request/response models for the HTTP surface."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field

from ..config import RunConfig


class RunRequest(BaseModel):
    """Every operation takes a full run configuration.

    Paths inside the config refer to the service host's filesystem; runs
    write their artifacts under config.output_dir.
    """

    config: RunConfig = Field(default_factory=RunConfig)


class HealthResponse(BaseModel):
    status: str = "ok"
    version: str


class ErrorResponse(BaseModel):
    error_kind: str   # "contract" | "config" | "io" | "internal"
    detail: str


class TrainResponse(BaseModel):
    metrics: dict
    checkpoint: str
    report: str
    stages: Optional[list[dict]] = None
    teacher_hash_unchanged: Optional[bool] = None
    wall_ms: Optional[float] = None


class SelectTaskResponse(BaseModel):
    best_source: str
    averages: dict[str, float]
    report: str


class AugmentResponse(BaseModel):
    pairs_written: int
    k: int
    source_pairs: int
    output: str
    report: str


class SwapResponse(BaseModel):
    checkpoint: str
    new_vocab_size: int
    embedding_changed: bool
    encoder_unchanged: bool
    embeddings_frozen: bool
    report: str


class EvalResponse(BaseModel):
    metrics: dict
    report: str


class GradcheckResponse(BaseModel):
    suites: dict[str, float]
    max_rel_error: float
    tolerance: float
    passed: bool
    report: str
