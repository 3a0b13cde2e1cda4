"""Five-stage progressive knowledge transfer.

Canonical schedule:

    1  hidden-state + attention alignment on the unlabeled transfer set,
       encoder and the width-alignment map trainable
    2  logit regression on soft-labeled data, classifier head only
    3  logit regression, encoder and classifier jointly
    4  cross-entropy on hard labels, classifier head only
    5  cross-entropy, encoder and classifier jointly

Freezing is enforced at the optimizer level and verified by hashing the
frozen parameter subset across every stage. Ablation flags rewrite the
schedule; the from-scratch baseline reduces it to plain CE training.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np

from . import checkpoint as ckpt
from . import losses as L
from . import tensor as T
from .data import LabeledSet, TransferSet
from .errors import ConfigError, ContractError, DataError, XdistilError
from .factorize import svd_project
from .losses import AlignmentMap
from .metrics import MetricsWriter, emit
from .tensor import Adam, GradTape, Tensor
from .transformer import ModelConfig, TransformerModel, init_model

DATA_TRANSFER = "unlabeled_transfer"
DATA_SOFT = "soft_labeled_transfer"
DATA_HARD = "hard_labeled"


@dataclass(frozen=True)
class StagePlan:
    stage: int
    losses: tuple[str, ...]
    data: str
    trainable: str            # "encoder_and_alignment" | "classifier_only" | "encoder_and_classifier"
    epochs: int
    lr: float
    batch_size: int
    last_layer_only: bool = False


def trainable_predicate(kind: str) -> Callable[[str], bool]:
    if kind == "classifier_only":
        return lambda name: name.startswith("classifier.")
    if kind == "encoder_and_alignment":
        return lambda name: not name.startswith("classifier.")
    if kind == "encoder_and_classifier":
        return lambda name: not name.startswith("align.")
    raise ConfigError(f"unknown trainable kind {kind!r}")


@dataclass
class DistilConfig:
    """Everything a distillation run needs besides the datasets."""

    student: ModelConfig
    teacher_ckpt: Optional[str] = None
    seed: int = 0
    epochs: tuple[int, int, int, int, int] = (3, 1, 2, 1, 2)
    lr_new: float = 3e-4        # stages introducing new parameters (1, 2, 4)
    lr_joint: float = 1e-4      # end-to-end stages (3, 5)
    batch_size: int = 32
    scratch_epochs: int = 12    # CE budget for the from-scratch baseline
    # ablation switches
    no_multilayer_attn: bool = False
    no_hidden_states_last_layer_only: bool = False
    no_embedding_factorization: bool = False
    no_freezing: bool = False
    init_from_scratch: bool = False
    # behavior knobs
    per_layer_alignment: bool = False
    soft_label_source: str = "labeled"     # "labeled" | "labeled+transfer"
    stage1_data: str = "transfer"          # "transfer" | "labeled" | "both"
    student_ckpt: Optional[str] = None
    validation_fraction: float = 0.1
    precision: str = "f32"                 # "f32" | "f64"

    @property
    def dtype(self):
        return np.float64 if self.precision == "f64" else np.float32


@dataclass
class StageReport:
    stage: int
    steps: int
    epochs: int
    lr: float
    loss_history: list[dict]
    hashes_before: dict[str, str]
    hashes_after: dict[str, str]

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "steps": self.steps,
            "epochs": self.epochs,
            "lr": self.lr,
            "loss_history": self.loss_history,
            "hashes_before": self.hashes_before,
            "hashes_after": self.hashes_after,
        }


@dataclass
class TrainReport:
    stages: list[StageReport] = field(default_factory=list)
    final_metrics: dict = field(default_factory=dict)
    wall_ms: float = 0.0
    teacher_hash_before: Optional[str] = None
    teacher_hash_after: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "stages": [s.to_dict() for s in self.stages],
            "final_metrics": self.final_metrics,
            "wall_ms": self.wall_ms,
            "teacher_hash_before": self.teacher_hash_before,
            "teacher_hash_after": self.teacher_hash_after,
        }


def make_plan(config: DistilConfig) -> list[StagePlan]:
    """Expand a config into the stage list (canonical or ablated)."""
    other_flags = (
        config.no_multilayer_attn,
        config.no_hidden_states_last_layer_only,
        config.no_embedding_factorization,
        config.no_freezing,
    )
    if config.init_from_scratch:
        if any(other_flags):
            raise ConfigError(
                "init_from_scratch is a no-distillation baseline and cannot be "
                "combined with other ablation flags"
            )
        return [StagePlan(5, ("ce",), DATA_HARD, "encoder_and_classifier",
                          config.scratch_epochs, config.lr_new, config.batch_size)]

    if len(config.epochs) != 5:
        raise ConfigError(f"epochs must list 5 stages, got {config.epochs}")

    stage1_losses: tuple[str, ...] = ("layer", "attn")
    last_layer_only = False
    if config.no_hidden_states_last_layer_only:
        stage1_losses = ("layer",)
        last_layer_only = True
    elif config.no_multilayer_attn:
        stage1_losses = ("layer",)

    e, bs = config.epochs, config.batch_size
    plans = [
        StagePlan(1, stage1_losses, DATA_TRANSFER, "encoder_and_alignment",
                  e[0], config.lr_new, bs, last_layer_only),
        StagePlan(2, ("logit",), DATA_SOFT, "classifier_only", e[1], config.lr_new, bs),
        StagePlan(3, ("logit",), DATA_SOFT, "encoder_and_classifier", e[2], config.lr_joint, bs),
        StagePlan(4, ("ce",), DATA_HARD, "classifier_only", e[3], config.lr_new, bs),
        StagePlan(5, ("ce",), DATA_HARD, "encoder_and_classifier", e[4], config.lr_joint, bs),
    ]
    if config.no_freezing:
        plans = [p for p in plans if p.stage not in (2, 4)]
    return plans


# ---------------------------------------------------------------------------
# evaluation helpers
# ---------------------------------------------------------------------------

def evaluate(model: TransformerModel, labeled: LabeledSet, batch_size: int = 64) -> dict:
    """Accuracy and macro F1 on hard labels (no gradients recorded)."""
    if len(labeled) == 0:
        raise DataError("cannot evaluate on an empty set")
    preds = []
    for batch in labeled.batches(batch_size):
        out = model.forward(batch)
        preds.append(out.logits.data.argmax(axis=1))
    pred = np.concatenate(preds)
    gold = labeled.labels
    accuracy = float((pred == gold).mean())
    f1s = []
    for c in range(labeled.num_classes):
        tp = int(((pred == c) & (gold == c)).sum())
        fp = int(((pred == c) & (gold != c)).sum())
        fn = int(((pred != c) & (gold == c)).sum())
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * precision * recall / (precision + recall) if precision + recall else 0.0)
    return {"accuracy": accuracy, "f1_macro": float(np.mean(f1s)), "n": int(len(labeled))}


def soft_label(teacher: TransformerModel,
               dataset: Union[LabeledSet, TransferSet],
               batch_size: int = 64) -> Union[LabeledSet, TransferSet]:
    """Attach the teacher's logits (not probabilities) to every example."""
    chunks = []
    for batch in dataset.batches(batch_size):
        chunks.append(teacher.forward(batch).logits.data.copy())
    logits = np.concatenate(chunks)
    return replace(dataset, teacher_logits=logits)


def _hash_groups(student: TransformerModel, align: Optional[AlignmentMap]) -> dict[str, str]:
    arrays = student.named_arrays()
    groups = {
        "encoder": {k: v for k, v in arrays.items() if not k.startswith("classifier.")},
        "classifier": {k: v for k, v in arrays.items() if k.startswith("classifier.")},
        "all": arrays,
    }
    if align is not None:
        groups["alignment"] = {p.name: p.data for p in align.parameters()}
    return {name: ckpt.fingerprint(arrs) for name, arrs in groups.items()}


# ---------------------------------------------------------------------------
# stage execution
# ---------------------------------------------------------------------------

def _validate_stage_data(plan: StagePlan, dataset) -> None:
    if len(dataset) == 0:
        raise DataError(f"stage {plan.stage}: dataset is empty")
    if plan.data == DATA_HARD:
        if not isinstance(dataset, LabeledSet):
            raise ContractError(f"stage {plan.stage} needs hard-labeled data")
    elif plan.data == DATA_SOFT:
        if dataset.teacher_logits is None:
            raise ContractError(
                f"stage {plan.stage} needs teacher soft targets; run soft_label first"
            )
    elif plan.data == DATA_TRANSFER:
        if isinstance(dataset, LabeledSet):
            raise ContractError(f"stage {plan.stage} runs on unlabeled transfer data")
    else:
        raise ConfigError(f"unknown stage data kind {plan.data!r}")


def run_stage(
    plan: StagePlan,
    student: TransformerModel,
    align: AlignmentMap,
    dataset,
    teacher: Optional[TransformerModel] = None,
    seed: int = 0,
    metrics: Optional[MetricsWriter] = None,
    pinned: frozenset[str] = frozenset(),
) -> StageReport:
    """Run one stage; only parameters selected by the plan may change.

    `pinned` parameter names stay frozen regardless of the plan (used to
    honor externally frozen tensors such as swapped embeddings).
    """
    _validate_stage_data(plan, dataset)
    needs_teacher = any(k in plan.losses for k in ("layer", "attn"))
    if needs_teacher and teacher is None:
        raise ContractError(f"stage {plan.stage} losses {plan.losses} require a teacher")

    predicate = trainable_predicate(plan.trainable)
    all_params = student.parameters() + align.parameters()
    for p in all_params:
        p.frozen = (p.name in pinned) or not predicate(p.name)

    hashes_before = _hash_groups(student, align)
    frozen_before = ckpt.fingerprint(
        {p.name: p.data for p in all_params if p.frozen}
    )

    optimizer = Adam(all_params, lr=plan.lr)
    loss_history: list[dict] = []
    step = 0
    rng = np.random.default_rng(seed)
    for _ in range(plan.epochs):
        for batch in dataset.batches(plan.batch_size, rng=rng):
            t0 = time.perf_counter()
            teacher_out = teacher.forward(batch) if needs_teacher else None
            with GradTape() as tape:
                student_out = student.forward(batch)
                parts: dict[str, Tensor] = {}
                if "layer" in plan.losses:
                    parts["layer"] = L.layer_loss(
                        student_out.hidden, teacher_out.hidden, align,
                        batch.mask, last_layer_only=plan.last_layer_only)
                if "attn" in plan.losses:
                    parts["attn"] = L.attn_loss(
                        student_out.attn, teacher_out.attn, align, batch.mask)
                if "logit" in plan.losses:
                    parts["logit"] = L.logit_loss(
                        student_out.logits, Tensor(batch.teacher_logits))
                if "ce" in plan.losses:
                    parts["ce"] = L.ce_loss(student_out.logits, batch.labels)
                total = None
                for part in parts.values():
                    total = part if total is None else T.add(total, part)
                tape.backward(total)
            optimizer.step()
            optimizer.zero_grad()
            step += 1
            record = {"stage": plan.stage, "step": step, "lr": plan.lr,
                      "wall_ms": (time.perf_counter() - t0) * 1000.0}
            for key, value in parts.items():
                record[f"loss_{key}"] = value.item()
            emit(metrics, record)
            loss_history.append(record)

    frozen_after = ckpt.fingerprint(
        {p.name: p.data for p in all_params if p.frozen}
    )
    if frozen_after != frozen_before:
        raise XdistilError(
            f"stage {plan.stage}: a frozen parameter changed during the stage"
        )
    return StageReport(
        stage=plan.stage,
        steps=step,
        epochs=plan.epochs,
        lr=plan.lr,
        loss_history=loss_history,
        hashes_before=hashes_before,
        hashes_after=_hash_groups(student, align),
    )


# ---------------------------------------------------------------------------
# entry points
# ---------------------------------------------------------------------------

def fine_tune(
    model: TransformerModel,
    labeled: LabeledSet,
    epochs: int,
    lr: float,
    batch_size: int = 32,
    seed: int = 0,
    metrics: Optional[MetricsWriter] = None,
    validation_fraction: float = 0.1,
) -> tuple[TransformerModel, dict]:
    """Plain CE training; returns the model and validation metrics.

    Respects parameters that are already frozen (e.g. swapped-in word
    embeddings). Zero epochs leaves the model untouched.
    """
    train, val = labeled.split_validation(validation_fraction)
    optimizer = Adam(model.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    step = 0
    for _ in range(epochs):
        for batch in train.batches(batch_size, rng=rng):
            t0 = time.perf_counter()
            with GradTape() as tape:
                out = model.forward(batch)
                loss = L.ce_loss(out.logits, batch.labels)
                tape.backward(loss)
            optimizer.step()
            optimizer.zero_grad()
            step += 1
            emit(metrics, {"stage": 0, "step": step, "loss_ce": loss.item(),
                           "lr": lr, "wall_ms": (time.perf_counter() - t0) * 1000.0})
    return model, evaluate(model, val)


def distil(
    config: DistilConfig,
    transfer_set: Optional[TransferSet],
    labeled_set: LabeledSet,
    metrics: Optional[MetricsWriter] = None,
    output_ckpt: Optional[str] = None,
) -> tuple[TransformerModel, TrainReport]:
    """Run the staged transfer end to end; deterministic under the seed."""
    t_start = time.perf_counter()
    plans = make_plan(config)
    dtype = config.dtype
    report = TrainReport()

    needs_teacher = any(
        p.data in (DATA_SOFT,) or any(k in p.losses for k in ("layer", "attn"))
        for p in plans
    )
    teacher = None
    if needs_teacher:
        if config.teacher_ckpt is None:
            raise ConfigError("distillation requires data.teacher_ckpt")
        teacher = ckpt.load_model(config.teacher_ckpt, dtype=dtype)
        report.teacher_hash_before = ckpt.fingerprint(teacher.named_arrays())
        _check_compat(config.student, teacher.config, plans)

    # student init: seed checkpoint > SVD-factorized teacher embeddings > random
    if config.student_ckpt is not None:
        student = init_model(config.student, config.seed, "from_student_seed",
                             config.student_ckpt, dtype=dtype)
    else:
        student = init_model(config.student, config.seed, "random", dtype=dtype)
        if teacher is not None and not config.no_embedding_factorization \
                and not config.init_from_scratch:
            projected = svd_project(
                teacher.params["embeddings.word"].data.astype(np.float64),
                config.student.hidden_dim,
            ).projected
            student.set_param("embeddings.word", projected.astype(dtype))

    align = AlignmentMap(
        config.student.hidden_dim,
        teacher.config.hidden_dim if teacher is not None else config.student.hidden_dim,
        config.student.num_layers,
        teacher.config.num_layers if teacher is not None else config.student.num_layers,
        per_layer=config.per_layer_alignment,
        seed=config.seed + 101,
        dtype=dtype,
    )

    labeled_train, labeled_val = labeled_set.split_validation(config.validation_fraction)
    pinned = frozenset(p.name for p in student.parameters() if p.frozen)

    datasets = _stage_datasets(config, plans, teacher, transfer_set, labeled_train)

    for plan in plans:
        stage_report = run_stage(
            plan, student, align, datasets[plan.data],
            teacher=teacher,
            seed=config.seed + 1000 * plan.stage,
            metrics=metrics,
            pinned=pinned,
        )
        report.stages.append(stage_report)

    if teacher is not None:
        report.teacher_hash_after = ckpt.fingerprint(teacher.named_arrays())
        if report.teacher_hash_after != report.teacher_hash_before:
            raise XdistilError("teacher parameters changed during distillation")

    report.final_metrics = evaluate(student, labeled_val)
    report.wall_ms = (time.perf_counter() - t_start) * 1000.0
    if output_ckpt is not None:
        ckpt.save_model(student, output_ckpt)
    return student, report


def _check_compat(student_cfg: ModelConfig, teacher_cfg: ModelConfig,
                  plans: list[StagePlan]) -> None:
    if teacher_cfg.vocab_size != student_cfg.vocab_size:
        raise ContractError(
            f"teacher and student must share the tokenizer vocabulary: "
            f"{teacher_cfg.vocab_size} vs {student_cfg.vocab_size}"
        )
    if student_cfg.num_layers > teacher_cfg.num_layers:
        raise ContractError(
            f"student has more layers ({student_cfg.num_layers}) than teacher "
            f"({teacher_cfg.num_layers})"
        )
    if student_cfg.hidden_dim > teacher_cfg.hidden_dim:
        raise ContractError(
            f"student is wider ({student_cfg.hidden_dim}) than teacher "
            f"({teacher_cfg.hidden_dim})"
        )
    uses_attn = any("attn" in p.losses for p in plans)
    if uses_attn and student_cfg.num_heads != teacher_cfg.num_heads:
        raise ContractError(
            f"attention transfer assumes equal head counts, got student "
            f"{student_cfg.num_heads} vs teacher {teacher_cfg.num_heads}"
        )
    if teacher_cfg.num_classes != student_cfg.num_classes:
        raise ContractError(
            f"teacher and student head sizes disagree: {teacher_cfg.num_classes} "
            f"vs {student_cfg.num_classes}"
        )


def _stage_datasets(config, plans, teacher, transfer_set, labeled_train):
    """Materialize each data kind the plan needs (soft labels precomputed)."""
    kinds = {p.data for p in plans}
    datasets = {}
    if DATA_TRANSFER in kinds:
        if config.stage1_data == "transfer":
            if transfer_set is None:
                raise ConfigError("stage 1 is configured to use the transfer set")
            datasets[DATA_TRANSFER] = transfer_set
        elif config.stage1_data == "labeled":
            datasets[DATA_TRANSFER] = TransferSet.from_labeled(labeled_train)
        elif config.stage1_data == "both":
            if transfer_set is None:
                raise ConfigError("stage 1 is configured to use the transfer set")
            datasets[DATA_TRANSFER] = TransferSet.concat(
                transfer_set, TransferSet.from_labeled(labeled_train))
        else:
            raise ConfigError(f"unknown stage1_data {config.stage1_data!r}")
    if DATA_SOFT in kinds:
        soft = soft_label(teacher, TransferSet.from_labeled(labeled_train))
        if config.soft_label_source == "labeled+transfer":
            if transfer_set is None:
                raise ConfigError("soft_label_source includes the transfer set")
            soft = TransferSet.concat(soft, soft_label(teacher, transfer_set))
        elif config.soft_label_source != "labeled":
            raise ConfigError(f"unknown soft_label_source {config.soft_label_source!r}")
        datasets[DATA_SOFT] = soft
    if DATA_HARD in kinds:
        datasets[DATA_HARD] = labeled_train
    return datasets
