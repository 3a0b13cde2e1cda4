"""Registered gradient-check suites, run in 64-bit mode.

Three suites: tensor primitives, encoder forward + CE, and the full
distillation composite (student forward plus all four transfer losses
against a fixed teacher). The CLI gate passes when every suite's max
relative error is below GRAD_TOL.
"""

from __future__ import annotations

import numpy as np

from . import losses as L
from . import tensor as T
from .losses import AlignmentMap
from .tensor import Parameter, Tensor, check_gradients
from .transformer import Batch, ModelConfig, TransformerModel

GRAD_TOL = 1e-4
PRIMITIVE_TOL = 1e-6


def suite_primitives(seed: int = 0) -> float:
    """Every tensor primitive against central differences on small tensors."""
    rng = np.random.default_rng(seed)
    counter = iter(range(1000))

    def param(shape):
        return Parameter(f"p{next(counter)}", rng.normal(size=shape), dtype=np.float64)

    def weighted(op_output_shape, op, *params):
        w = Tensor(rng.normal(size=op_output_shape))
        fn = lambda: T.reduce_sum(T.mul(op(*[p.tensor for p in params]), w))
        report = check_gradients(fn, list(params))
        return max(report.values())

    worst = 0.0
    a, b = param((3, 4)), param((4,))
    worst = max(worst, weighted((3, 4), T.add, a, b))
    a, b = param((3, 4)), param((3, 1))
    worst = max(worst, weighted((3, 4), T.sub, a, b))
    a, b = param((3, 4)), param((4,))
    worst = max(worst, weighted((3, 4), T.mul, a, b))
    a, b = param((3, 4)), param((4, 5))
    worst = max(worst, weighted((3, 5), T.matmul, a, b))
    a, b = param((2, 3, 4)), param((4, 5))
    worst = max(worst, weighted((2, 3, 5), T.matmul, a, b))
    x = param((3, 5))
    worst = max(worst, weighted((3, 5), lambda t: T.softmax(t, axis=-1), x))
    x = param((3, 5))
    worst = max(worst, weighted((3, 5), T.gelu, x))
    x, g, bb = param((3, 6)), param((6,)), param((6,))
    worst = max(worst, weighted((3, 6), T.layer_norm, x, g, bb))
    table = param((7, 4))
    ids = rng.integers(0, 7, size=(2, 3))
    worst = max(worst, weighted((2, 3, 4), lambda t: T.embedding(t, ids), table))
    x = param((3, 4))
    worst = max(worst, weighted((3,), lambda t: T.reduce_sum(t, axis=1), x))
    x = param((3, 4))
    report = check_gradients(lambda: T.reduce_mean(T.mul(x.tensor, x.tensor)), [x])
    worst = max(worst, max(report.values()))
    x = param((2, 3, 4))
    worst = max(worst, weighted((3, 2, 4), lambda t: T.transpose(t, (1, 0, 2)), x))
    x = param((2, 3, 4))
    worst = max(worst, weighted((6, 4), lambda t: T.reshape(t, (6, 4)), x))
    x = param((2, 3, 4))
    worst = max(worst, weighted((2, 4), lambda t: T.take(t, 1, axis=1), x))
    z = param((4, 3))
    labels = rng.integers(0, 3, size=4)
    report = check_gradients(lambda: T.cross_entropy(z.tensor, labels), [z])
    worst = max(worst, max(report.values()))
    return worst


def _toy_batch(rng: np.random.Generator, vocab_size: int, batch: int,
               seq: int) -> Batch:
    ids = rng.integers(4, vocab_size, size=(batch, seq))
    segments = np.zeros((batch, seq), dtype=np.int64)
    segments[:, seq // 2:] = 1
    mask = np.ones((batch, seq))
    ids[-1, seq - 2:] = 0   # PAD tail on the last example
    mask[-1, seq - 2:] = 0.0
    return Batch(ids=ids, segments=segments, mask=mask)


def suite_transformer(seed: int = 0, max_probes: int = 8) -> float:
    """2-layer encoder forward + cross-entropy composite."""
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(num_layers=2, hidden_dim=8, num_heads=2, ff_dim=16,
                      max_seq_len=8, vocab_size=12, num_classes=3)
    model = TransformerModel.init_random(cfg, seed=seed, dtype=np.float64)
    batch = _toy_batch(rng, cfg.vocab_size, batch=2, seq=6)
    labels = rng.integers(0, cfg.num_classes, size=batch.size)

    def f():
        return T.cross_entropy(model.forward(batch).logits, labels)

    report = check_gradients(f, model.parameters(), max_probes_per_param=max_probes,
                             seed=seed)
    return max(report.values())


def suite_distillation(seed: int = 0, max_probes: int = 6,
                       student_cfg: ModelConfig | None = None,
                       teacher_cfg: ModelConfig | None = None) -> float:
    """Student forward + hidden/attention/logit/CE losses vs a fixed teacher."""
    rng = np.random.default_rng(seed)
    if student_cfg is None:
        student_cfg = ModelConfig(num_layers=2, hidden_dim=16, num_heads=4,
                                  ff_dim=32, max_seq_len=8, vocab_size=12,
                                  num_classes=3)
    if teacher_cfg is None:
        teacher_cfg = ModelConfig(num_layers=4, hidden_dim=32, num_heads=4,
                                  ff_dim=64, max_seq_len=8, vocab_size=12,
                                  num_classes=3)
    student = TransformerModel.init_random(student_cfg, seed=seed, dtype=np.float64)
    teacher = TransformerModel.init_random(teacher_cfg, seed=seed + 1, dtype=np.float64)
    align = AlignmentMap(student_cfg.hidden_dim, teacher_cfg.hidden_dim,
                         student_cfg.num_layers, teacher_cfg.num_layers,
                         seed=seed, dtype=np.float64)
    batch = _toy_batch(rng, student_cfg.vocab_size, batch=2, seq=6)
    labels = rng.integers(0, student_cfg.num_classes, size=batch.size)
    teacher_out = teacher.forward(batch)  # constants w.r.t. the student

    def f():
        out = student.forward(batch)
        loss = L.layer_loss(out.hidden, teacher_out.hidden, align, batch.mask)
        loss = T.add(loss, L.attn_loss(out.attn, teacher_out.attn, align, batch.mask))
        loss = T.add(loss, L.logit_loss(out.logits, teacher_out.logits))
        loss = T.add(loss, L.ce_loss(out.logits, labels))
        return loss

    params = student.parameters() + align.parameters()
    report = check_gradients(f, params, max_probes_per_param=max_probes, seed=seed)
    return max(report.values())


SUITES = {
    "primitives": suite_primitives,
    "transformer_composite": suite_transformer,
    "distillation_composite": suite_distillation,
}


def run_suites(seed: int = 0) -> dict[str, float]:
    return {name: fn(seed) for name, fn in SUITES.items()}
