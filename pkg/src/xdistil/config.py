"""Run configuration: a JSON document validated against a strict schema.

Unknown keys are rejected. Values can be overridden on the command line
with dotted keys (`--set model.num_layers=4`); the XDISTIL_SEED
environment variable overrides the seed last.
"""

from __future__ import annotations

import json
import os
from typing import Literal, Optional, Sequence

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigError


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSection(_Strict):
    """Defaults describe the bundled synthetic-task student."""

    num_layers: int = 2
    hidden_dim: int = 8
    num_heads: int = 4
    ff_dim: int = 32
    max_seq_len: int = 16
    num_classes: int = 3
    attention_scaling: Literal["sqrt_head_dim", "sqrt_seq_len"] = "sqrt_head_dim"


class TrainSection(_Strict):
    """Budget for plain fine-tuning (teacher prep, eval-matrix cells)."""

    epochs: int = 16
    lr: float = 1e-3
    batch_size: int = 32
    validation_fraction: float = 0.1


class DistilSection(_Strict):
    epochs: list[int] = Field(default=[3, 1, 2, 1, 2])
    lr_new: float = 3e-4
    lr_joint: float = 1e-4
    batch_size: int = 32
    scratch_epochs: int = 12
    no_multilayer_attn: bool = False
    no_hidden_states_last_layer_only: bool = False
    no_embedding_factorization: bool = False
    no_freezing: bool = False
    init_from_scratch: bool = False
    per_layer_alignment: bool = False
    soft_label_source: Literal["labeled", "labeled+transfer"] = "labeled"
    stage1_data: Literal["transfer", "labeled", "both"] = "transfer"

    @field_validator("epochs")
    @classmethod
    def _five_stages(cls, v: list[int]) -> list[int]:
        if len(v) != 5:
            raise ValueError(f"distil.epochs must list 5 stages, got {len(v)}")
        return v


class DataSection(_Strict):
    vocab: Optional[str] = None
    labeled: Optional[str] = None
    eval: Optional[str] = None
    transfer_pairs: Optional[str] = None
    corpus: Optional[str] = None
    pairs: Optional[str] = None
    ner: Optional[str] = None
    eval_matrix: Optional[str] = None
    teacher_ckpt: Optional[str] = None
    student_ckpt: Optional[str] = None
    model_ckpt: Optional[str] = None
    embeddings: Optional[str] = None
    new_vocab: Optional[str] = None


class AugmentSection(_Strict):
    k: int = 10
    embedder: Literal["hashed_bow", "precomputed"] = "hashed_bow"
    embedder_dim: int = 256
    precomputed: Optional[str] = None


class RunConfig(_Strict):
    seed: int = 0
    precision: Literal["f32", "f64"] = "f32"
    output_dir: str = "runs/out"
    model: ModelSection = Field(default_factory=ModelSection)
    train: TrainSection = Field(default_factory=TrainSection)
    distil: DistilSection = Field(default_factory=DistilSection)
    data: DataSection = Field(default_factory=DataSection)
    augment: AugmentSection = Field(default_factory=AugmentSection)


def apply_override(doc: dict, dotted_key: str, raw_value: str) -> None:
    """Set a dotted key in a nested dict; the value parses as JSON if it can."""
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value
    keys = dotted_key.split(".")
    node = doc
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override {dotted_key!r}: {key!r} is not a section")
    node[keys[-1]] = value


def validate_config(doc: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def load_config(
    path: Optional[str],
    overrides: Sequence[str] = (),
    precision: Optional[str] = None,
) -> RunConfig:
    """Read a JSON config file and apply overrides.

    Precedence, lowest to highest: file, --set overrides, --precision
    flag, then the XDISTIL_SEED environment variable for the seed.
    """
    if path is None:
        doc: dict = {}
    else:
        try:
            with open(path, encoding="utf-8") as f:
                doc = json.load(f)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path!r} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"config {path!r} must be a JSON object")

    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        apply_override(doc, key.strip(), value)

    if precision is not None:
        doc["precision"] = precision

    env_seed = os.environ.get("XDISTIL_SEED")
    if env_seed is not None:
        try:
            doc["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError(f"XDISTIL_SEED must be an integer, got {env_seed!r}") from None

    return validate_config(doc)
