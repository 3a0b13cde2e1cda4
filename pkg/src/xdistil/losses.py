"""Distillation objectives: hidden-state, attention, logit, and CE losses.

Student layers are aligned to the last L_S teacher layers; a learnable
linear map (shared across layers by default) upscales student hidden
states to the teacher width. Teacher activations are treated as
constants: no gradient ever flows into the teacher.

All four losses are nonnegative quantities to be minimized.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .tensor import Parameter, Tensor


class AlignmentMap:
    """Width upscale (student dim -> teacher dim) plus the layer pairing.

    Student layer i (0-based) is paired with teacher layer
    i + (teacher_layers - student_layers), covering exactly the last
    student_layers teacher layers.
    """

    def __init__(self, student_dim: int, teacher_dim: int,
                 student_layers: int, teacher_layers: int,
                 per_layer: bool = False, seed: int = 0, dtype=np.float32):
        if student_layers > teacher_layers:
            raise ContractError(
                f"student has more layers ({student_layers}) than teacher "
                f"({teacher_layers}); cannot align"
            )
        self.student_dim = student_dim
        self.teacher_dim = teacher_dim
        self.student_layers = student_layers
        self.teacher_layers = teacher_layers
        self.per_layer = per_layer

        rng = np.random.default_rng(seed)

        def init_weight() -> np.ndarray:
            if student_dim == teacher_dim:
                # learnable, initialized at identity (single code path)
                return np.eye(teacher_dim, dtype=dtype)
            w = rng.normal(0.0, 0.02, size=(teacher_dim, student_dim))
            return w.astype(dtype)

        n_maps = student_layers if per_layer else 1
        self.weights = [
            Parameter(f"align.{i}.weight" if per_layer else "align.weight", init_weight())
            for i in range(n_maps)
        ]
        self.biases = [
            Parameter(f"align.{i}.bias" if per_layer else "align.bias",
                      np.zeros(teacher_dim, dtype=dtype))
            for i in range(n_maps)
        ]

    def parameters(self) -> list[Parameter]:
        return [*self.weights, *self.biases]

    def teacher_index(self, student_index: int) -> int:
        return student_index + (self.teacher_layers - self.student_layers)

    def project(self, hidden: Tensor, student_index: int) -> Tensor:
        """Upscale one student hidden-state tensor to teacher width."""
        i = student_index if self.per_layer else 0
        w, b = self.weights[i], self.biases[i]
        return T.add(T.matmul(hidden, T.transpose(w.tensor, (1, 0))), b.tensor)


def _per_example_lengths(pad_mask: np.ndarray) -> np.ndarray:
    lengths = np.asarray(pad_mask).sum(axis=1)
    return np.maximum(lengths, 1.0)


def layer_loss(
    student_hidden: Sequence[Tensor],
    teacher_hidden: Sequence[Tensor],
    align: AlignmentMap,
    pad_mask: np.ndarray,
    last_layer_only: bool = False,
) -> Tensor:
    """Mean squared alignment error over paired layers and real positions.

    Per example: sum over aligned layers and non-PAD positions of
    ||W h_s + b - h_t||^2 / (2 * n_layers * n_positions), then averaged
    over the batch. Teacher tensors are detached.
    """
    n_student = len(student_hidden)
    if len(teacher_hidden) < n_student:
        raise ContractError(
            f"teacher has {len(teacher_hidden)} layers, student needs at least {n_student}"
        )
    if last_layer_only:
        pairs = [(n_student - 1, len(teacher_hidden) - 1)]
    else:
        pairs = [(i, align.teacher_index(i)) for i in range(n_student)]
    n_aligned = len(pairs)

    dt = student_hidden[0].dtype
    lengths = _per_example_lengths(pad_mask)
    mask3 = Tensor(np.asarray(pad_mask, dtype=dt)[:, :, None])
    inv_norm = Tensor((1.0 / (2.0 * n_aligned * lengths)).astype(dt))

    total: Optional[Tensor] = None
    for s_idx, t_idx in pairs:
        proj = align.project(student_hidden[s_idx], s_idx)
        diff = T.sub(proj, teacher_hidden[t_idx].detach())
        sq = T.mul(T.mul(diff, diff), mask3)
        per_example = T.reduce_sum(sq, axis=(1, 2))
        total = per_example if total is None else T.add(total, per_example)
    return T.reduce_mean(T.mul(total, inv_norm))


def attn_loss(
    student_attn: Sequence[Tensor],
    teacher_attn: Sequence[Tensor],
    align: AlignmentMap,
    pad_mask: np.ndarray,
) -> Tensor:
    """Mean squared error between paired attention maps.

    Attention matrices are seq x seq, so no width projection is needed,
    but teacher and student must have the same number of heads. Only
    non-PAD query rows contribute. Per example the sum is divided by
    2 * n_layers * n_heads * n_positions, then batch-averaged.
    """
    n_student = len(student_attn)
    if len(teacher_attn) < n_student:
        raise ContractError(
            f"teacher has {len(teacher_attn)} attention layers, student needs "
            f"at least {n_student}"
        )
    s_heads = student_attn[0].shape[1]
    t_heads = teacher_attn[0].shape[1]
    if s_heads != t_heads:
        raise ContractError(
            f"attention transfer assumes an equal head count on both models, "
            f"got student {s_heads} vs teacher {t_heads}"
        )

    dt = student_attn[0].dtype
    lengths = _per_example_lengths(pad_mask)
    query_mask = Tensor(np.asarray(pad_mask, dtype=dt)[:, None, :, None])
    inv_norm = Tensor((1.0 / (2.0 * n_student * s_heads * lengths)).astype(dt))

    total: Optional[Tensor] = None
    for i in range(n_student):
        t_idx = align.teacher_index(i)
        diff = T.sub(student_attn[i], teacher_attn[t_idx].detach())
        sq = T.mul(T.mul(diff, diff), query_mask)
        per_example = T.reduce_sum(sq, axis=(1, 2, 3))
        total = per_example if total is None else T.add(total, per_example)
    return T.reduce_mean(T.mul(total, inv_norm))


def logit_loss(student_logits: Tensor, teacher_logits: Tensor) -> Tensor:
    """Batch mean of half the squared distance between logit vectors."""
    if student_logits.shape != teacher_logits.shape:
        raise ShapeError(
            f"logit shapes disagree: {student_logits.shape} vs {teacher_logits.shape}"
        )
    diff = T.sub(student_logits, teacher_logits.detach())
    per_example = T.reduce_sum(T.mul(diff, diff), axis=1)
    return T.reduce_mean(T.scale(per_example, 0.5))


def ce_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Batch mean cross-entropy against hard labels."""
    return T.cross_entropy(logits, labels)
