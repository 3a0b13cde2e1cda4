"""One handler per pipeline operation.

Every handler takes a validated RunConfig, writes report.jsonl (and any
artifacts) under config.output_dir, and returns the JSON-safe result
that becomes the HTTP response body / the CLI's stdout line.
"""

from __future__ import annotations

import json
import os
from typing import Callable

import numpy as np

from .. import checkpoint as ckpt
from ..config import RunConfig
from ..data import (LabeledSet, TransferSet, read_corpus, read_labeled,
                    read_ner, read_pairs, write_pairs)
from ..errors import ConfigError
from ..metrics import MetricsWriter
from ..toolkit import (EvalMatrix, HashedEmbedder, PrecomputedEmbedder,
                       SentencePairBank, TokenTaskData, build_transfer_pairs,
                       evaluate_tokens, fine_tune_tokens, select_best_source,
                       swap_embeddings)
from ..trainer import DistilConfig, distil, evaluate, fine_tune
from ..transformer import ModelConfig, TransformerModel, Vocab, init_model
from ..verify import GRAD_TOL, run_suites


def _require(value, key: str):
    if value is None:
        raise ConfigError(f"this operation requires {key} in the configuration")
    return value


def _dtype(cfg: RunConfig):
    return np.float64 if cfg.precision == "f64" else np.float32


def _model_config(cfg: RunConfig, vocab: Vocab) -> ModelConfig:
    m = cfg.model
    return ModelConfig(
        num_layers=m.num_layers, hidden_dim=m.hidden_dim, num_heads=m.num_heads,
        ff_dim=m.ff_dim, max_seq_len=m.max_seq_len, vocab_size=len(vocab),
        num_classes=m.num_classes, attention_scaling=m.attention_scaling,
    )


def _prepare_output(cfg: RunConfig) -> str:
    os.makedirs(cfg.output_dir, exist_ok=True)
    return os.path.join(cfg.output_dir, "report.jsonl")


def _write_report(path: str, records: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True) + "\n")


def handle_finetune(cfg: RunConfig) -> dict:
    """CE training on labeled classification data, or token-level BIO data."""
    report_path = _prepare_output(cfg)
    vocab = Vocab.from_file(_require(cfg.data.vocab, "data.vocab"))
    dtype = _dtype(cfg)
    out_ckpt = os.path.join(cfg.output_dir, "model.xdtc")

    if cfg.data.ner is not None:
        sentences = read_ner(cfg.data.ner)
        data = TokenTaskData.build(sentences, vocab, cfg.model.max_seq_len)
        model_cfg = _model_config(cfg, vocab)
        if model_cfg.num_classes != len(data.tag_names):
            raise ConfigError(
                f"model.num_classes={model_cfg.num_classes} but the tag set has "
                f"{len(data.tag_names)} tags: {data.tag_names}"
            )
        model = _initial_model(cfg, model_cfg, dtype)
        with MetricsWriter(report_path) as metrics:
            model, result = fine_tune_tokens(
                model, data, epochs=cfg.train.epochs, lr=cfg.train.lr,
                batch_size=cfg.train.batch_size, seed=cfg.seed, metrics=metrics,
                validation_fraction=cfg.train.validation_fraction)
    else:
        examples = read_labeled(_require(cfg.data.labeled, "data.labeled"))
        labeled = LabeledSet.build(examples, vocab, cfg.model.max_seq_len,
                                   cfg.model.num_classes)
        model = _initial_model(cfg, _model_config(cfg, vocab), dtype)
        with MetricsWriter(report_path) as metrics:
            model, result = fine_tune(
                model, labeled, epochs=cfg.train.epochs, lr=cfg.train.lr,
                batch_size=cfg.train.batch_size, seed=cfg.seed, metrics=metrics,
                validation_fraction=cfg.train.validation_fraction)

    ckpt.save_model(model, out_ckpt)
    return {"metrics": result, "checkpoint": out_ckpt, "report": report_path}


def _initial_model(cfg: RunConfig, model_cfg: ModelConfig, dtype) -> TransformerModel:
    if cfg.data.model_ckpt is not None:
        return init_model(model_cfg, cfg.seed, "from_checkpoint",
                          cfg.data.model_ckpt, dtype=dtype)
    if cfg.data.student_ckpt is not None:
        return init_model(model_cfg, cfg.seed, "from_student_seed",
                          cfg.data.student_ckpt, dtype=dtype)
    return init_model(model_cfg, cfg.seed, "random", dtype=dtype)


def handle_distil(cfg: RunConfig) -> dict:
    """The staged teacher-to-student transfer on the configured datasets."""
    report_path = _prepare_output(cfg)
    vocab = Vocab.from_file(_require(cfg.data.vocab, "data.vocab"))
    examples = read_labeled(_require(cfg.data.labeled, "data.labeled"))
    labeled = LabeledSet.build(examples, vocab, cfg.model.max_seq_len,
                               cfg.model.num_classes)
    transfer = None
    if cfg.data.transfer_pairs is not None:
        pairs = read_pairs(cfg.data.transfer_pairs)
        transfer = TransferSet.build(pairs, vocab, cfg.model.max_seq_len)

    d = cfg.distil
    distil_cfg = DistilConfig(
        student=_model_config(cfg, vocab),
        teacher_ckpt=cfg.data.teacher_ckpt,
        seed=cfg.seed,
        epochs=tuple(d.epochs),
        lr_new=d.lr_new,
        lr_joint=d.lr_joint,
        batch_size=d.batch_size,
        scratch_epochs=d.scratch_epochs,
        no_multilayer_attn=d.no_multilayer_attn,
        no_hidden_states_last_layer_only=d.no_hidden_states_last_layer_only,
        no_embedding_factorization=d.no_embedding_factorization,
        no_freezing=d.no_freezing,
        init_from_scratch=d.init_from_scratch,
        per_layer_alignment=d.per_layer_alignment,
        soft_label_source=d.soft_label_source,
        stage1_data=d.stage1_data,
        student_ckpt=cfg.data.student_ckpt,
        validation_fraction=cfg.train.validation_fraction,
        precision=cfg.precision,
    )

    out_ckpt = os.path.join(cfg.output_dir, "student.xdtc")
    with MetricsWriter(report_path) as metrics:
        _, report = distil(distil_cfg, transfer, labeled,
                           metrics=metrics, output_ckpt=out_ckpt)
    return {
        "metrics": report.final_metrics,
        "checkpoint": out_ckpt,
        "report": report_path,
        "stages": [{"stage": s.stage, "steps": s.steps} for s in report.stages],
        "teacher_hash_unchanged": report.teacher_hash_before == report.teacher_hash_after,
        "wall_ms": report.wall_ms,
    }


def handle_select_task(cfg: RunConfig) -> dict:
    """Best source task by mean transfer score (CSV matrix input)."""
    report_path = _prepare_output(cfg)
    matrix = EvalMatrix.from_csv(_require(cfg.data.eval_matrix, "data.eval_matrix"))
    best, averages = select_best_source(matrix)
    result = {"best_source": best, "averages": averages}
    _write_report(report_path, [result])
    result["report"] = report_path
    return result


def handle_augment(cfg: RunConfig) -> dict:
    """KNN transfer-pair construction from a sentence corpus."""
    report_path = _prepare_output(cfg)
    corpus = read_corpus(_require(cfg.data.corpus, "data.corpus"))
    pairs = read_pairs(_require(cfg.data.pairs, "data.pairs"))
    if cfg.augment.embedder == "precomputed":
        embedder = PrecomputedEmbedder(
            _require(cfg.augment.precomputed, "augment.precomputed"), corpus)
    else:
        embedder = HashedEmbedder(dim=cfg.augment.embedder_dim)
    bank = SentencePairBank(pairs=pairs, corpus=corpus, embedder=embedder)
    augmented = build_transfer_pairs(bank, k=cfg.augment.k)
    out_path = os.path.join(cfg.output_dir, "augmented_pairs.tsv")
    write_pairs(out_path, augmented)
    result = {"pairs_written": len(augmented), "k": cfg.augment.k,
              "source_pairs": len(pairs), "output": out_path}
    _write_report(report_path, [result])
    result["report"] = report_path
    return result


def handle_swap_embeddings(cfg: RunConfig) -> dict:
    """Install projected wide embeddings for a new vocabulary."""
    report_path = _prepare_output(cfg)
    student = ckpt.load_model(_require(cfg.data.student_ckpt, "data.student_ckpt"),
                              dtype=_dtype(cfg))
    new_vocab = Vocab.from_file(_require(cfg.data.new_vocab, "data.new_vocab"))
    _, arrays = ckpt.load_tensors(_require(cfg.data.embeddings, "data.embeddings"))
    if "embeddings.word" not in arrays:
        raise ConfigError(
            "the embeddings file must contain a tensor named 'embeddings.word'")
    swapped = swap_embeddings(student, new_vocab, arrays["embeddings.word"])
    out_ckpt = os.path.join(cfg.output_dir, "swapped.xdtc")
    ckpt.save_model(swapped, out_ckpt)

    before = ckpt.tensor_hashes(student.named_arrays())
    after = ckpt.tensor_hashes(swapped.named_arrays())
    encoder_unchanged = all(
        before[name] == after[name] for name in before if name != "embeddings.word")
    result = {
        "checkpoint": out_ckpt,
        "new_vocab_size": len(new_vocab),
        "embedding_changed": before["embeddings.word"] != after["embeddings.word"],
        "encoder_unchanged": encoder_unchanged,
        "embeddings_frozen": True,
    }
    _write_report(report_path, [result])
    result["report"] = report_path
    return result


def handle_eval(cfg: RunConfig) -> dict:
    """Evaluate a checkpoint on labeled classification or BIO data."""
    report_path = _prepare_output(cfg)
    model = ckpt.load_model(_require(cfg.data.model_ckpt, "data.model_ckpt"),
                            dtype=_dtype(cfg))
    vocab = Vocab.from_file(_require(cfg.data.vocab, "data.vocab"))
    if len(vocab) != model.config.vocab_size:
        raise ConfigError(
            f"vocab file has {len(vocab)} entries, checkpoint expects "
            f"{model.config.vocab_size}")
    if cfg.data.ner is not None:
        data = TokenTaskData.build(read_ner(cfg.data.ner), vocab,
                                   model.config.max_seq_len)
        result = {"metrics": evaluate_tokens(model, data)}
    else:
        examples = read_labeled(_require(cfg.data.eval, "data.eval"))
        labeled = LabeledSet.build(examples, vocab, model.config.max_seq_len,
                                   model.config.num_classes)
        result = {"metrics": evaluate(model, labeled)}
    _write_report(report_path, [result])
    result["report"] = report_path
    return result


def handle_gradcheck(cfg: RunConfig) -> dict:
    """Run every registered gradient suite (64-bit internally)."""
    report_path = _prepare_output(cfg)
    suites = run_suites(seed=cfg.seed)
    worst = max(suites.values())
    result = {"suites": suites, "max_rel_error": worst,
              "tolerance": GRAD_TOL, "passed": bool(worst < GRAD_TOL)}
    _write_report(report_path, [result])
    result["report"] = report_path
    return result


HANDLERS: dict[str, Callable[[RunConfig], dict]] = {
    "finetune": handle_finetune,
    "distil": handle_distil,
    "select-task": handle_select_task,
    "augment": handle_augment,
    "swap-embeddings": handle_swap_embeddings,
    "eval": handle_eval,
    "gradcheck": handle_gradcheck,
}
