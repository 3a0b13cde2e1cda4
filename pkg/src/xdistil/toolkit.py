"""Transfer tooling: source-task selection, KNN transfer-set augmentation,
cross-vocabulary embedding swap, and token-level (BIO) evaluation.

The default sentence embedder is a hashed bag-of-tokens vector; the
interface also accepts precomputed vectors from a named-tensor file so a
stronger external encoder can be plugged in.
"""

from __future__ import annotations

import csv
import hashlib
import time
from dataclasses import dataclass, replace as dc_replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor as T
from .data import LabeledSet
from .errors import ContractError, DataError
from .factorize import adapt_embeddings
from .metrics import MetricsWriter, emit
from .tensor import Adam, GradTape
from .trainer import fine_tune
from .transformer import Batch, ModelConfig, TransformerModel, Vocab, tokenize

UNIT_NORM_TOL = 1e-6


# ---------------------------------------------------------------------------
# source-task selection
# ---------------------------------------------------------------------------

@dataclass
class EvalMatrix:
    """Transfer scores: rows are source tasks, columns are target tasks."""

    sources: list[str]
    targets: list[str]
    scores: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.shape != (len(self.sources), len(self.targets)):
            raise ContractError(
                f"scores shape {self.scores.shape} does not match "
                f"{len(self.sources)} sources x {len(self.targets)} targets"
            )
        if self.scores.size and not np.isfinite(self.scores).all():
            raise ContractError("eval matrix contains non-finite scores")

    def source_averages(self) -> dict[str, float]:
        return {s: float(self.scores[i].mean()) for i, s in enumerate(self.sources)}

    @classmethod
    def from_csv(cls, path: str) -> "EvalMatrix":
        """First column: source name; header row lists target names."""
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
        if len(rows) < 2 or len(rows[0]) < 2:
            raise DataError(f"{path}: expected a header row and at least one source row")
        targets = rows[0][1:]
        sources, scores = [], []
        for row in rows[1:]:
            if not row:
                continue
            if len(row) != len(targets) + 1:
                raise DataError(f"{path}: row {row!r} has wrong column count")
            sources.append(row[0])
            try:
                scores.append([float(x) for x in row[1:]])
            except ValueError:
                raise DataError(f"{path}: non-numeric score in row {row!r}") from None
        return cls(sources=sources, targets=targets, scores=np.asarray(scores))

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["source"] + self.targets)
            for i, s in enumerate(self.sources):
                writer.writerow([s] + [repr(float(x)) for x in self.scores[i]])


def select_best_source(matrix: EvalMatrix) -> tuple[str, dict[str, float]]:
    """Source with the highest mean score across targets.

    Ties break toward the earliest source in input order.
    """
    if not matrix.sources or not matrix.targets:
        raise ContractError("eval matrix is empty")
    means = matrix.scores.mean(axis=1)
    best = int(np.argmax(means))  # argmax returns the first maximum
    return matrix.sources[best], matrix.source_averages()


def build_eval_matrix(
    sources: list[str],
    targets: list[str],
    base_model: TransformerModel,
    datasets: dict[str, LabeledSet],
    epochs: int = 8,
    lr: float = 1e-3,
    batch_size: int = 32,
    seed: int = 0,
    parallel: bool = False,
) -> EvalMatrix:
    """Fine-tune on each source, then re-fine-tune that encoder per target.

    Each cell derives its own seed and trains its own model copy, so the
    matrix is deterministic; with parallel=True the target cells of one
    source run on a thread pool with identical results.
    """
    for name in set(sources) | set(targets):
        if name not in datasets:
            raise DataError(f"no dataset for task {name!r}")
    scores = np.zeros((len(sources), len(targets)))
    for si, source in enumerate(sources):
        src_set = datasets[source]
        source_model = with_classifier(base_model, src_set.num_classes,
                                       seed=seed + 17 * si)
        source_model, _ = fine_tune(source_model, src_set, epochs=epochs, lr=lr,
                                    batch_size=batch_size, seed=seed + 17 * si)

        def run_cell(ti: int) -> float:
            tgt_set = datasets[targets[ti]]
            cell_seed = seed + 1000 + 31 * si + ti
            model = with_classifier(source_model, tgt_set.num_classes, seed=cell_seed)
            _, metrics = fine_tune(model, tgt_set, epochs=epochs, lr=lr,
                                   batch_size=batch_size, seed=cell_seed)
            return metrics["accuracy"]

        if parallel:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor() as pool:
                scores[si, :] = list(pool.map(run_cell, range(len(targets))))
        else:
            for ti in range(len(targets)):
                scores[si, ti] = run_cell(ti)
    return EvalMatrix(sources=list(sources), targets=list(targets), scores=scores)


def with_classifier(model: TransformerModel, num_classes: int,
                    seed: int) -> TransformerModel:
    """Copy of the model with a fresh classification head."""
    cfg = dc_replace(model.config, num_classes=num_classes)
    fresh = TransformerModel.init_random(cfg, seed=seed, dtype=model.dtype)
    for name, p in model.params.items():
        if not name.startswith("classifier."):
            fresh.set_param(name, p.data.copy(), frozen=p.frozen)
    return fresh


# ---------------------------------------------------------------------------
# KNN augmentation
# ---------------------------------------------------------------------------

def knn(query_vec: np.ndarray, corpus_vecs: np.ndarray,
        k: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """Exact top-k rows of `corpus_vecs` by cosine against a unit query.

    Returns (indices, similarities) by descending similarity, ties by
    ascending corpus index.
    """
    corpus_vecs = np.asarray(corpus_vecs)
    n = corpus_vecs.shape[0]
    if not 1 <= k <= n:
        raise ContractError(f"k={k} must be within [1, corpus size {n}]")
    sims = corpus_vecs @ np.asarray(query_vec)
    order = np.lexsort((np.arange(n), -sims))[:k]
    return order, sims[order]


class HashedEmbedder:
    """Hashed bag-of-tokens sentence vectors, L2-normalized.

    Token hashing uses blake2b, so vectors are stable across processes.
    """

    def __init__(self, dim: int = 256):
        self.dim = dim

    def _bucket(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.dim

    def __call__(self, sentence: str) -> np.ndarray:
        v = np.zeros(self.dim)
        for token in sentence.split():
            v[self._bucket(token)] += 1.0
        norm = np.linalg.norm(v)
        if norm == 0.0:
            v[0] = 1.0
            norm = 1.0
        return v / norm

    def embed_corpus(self, sentences: Sequence[str]) -> np.ndarray:
        return np.stack([self(s) for s in sentences])


class PrecomputedEmbedder:
    """Sentence vectors loaded from a named-tensor file keyed by line index.

    Tensor "i" is the vector for corpus line i. Vectors are re-normalized
    on load.
    """

    def __init__(self, path: str, corpus: Sequence[str]):
        from .checkpoint import load_tensors

        _, arrays = load_tensors(path)
        self._by_sentence: dict[str, np.ndarray] = {}
        for i, sentence in enumerate(corpus):
            key = str(i)
            if key not in arrays:
                raise ContractError(f"embedding file is missing vector {key!r}")
            vec = arrays[key].astype(np.float64)
            norm = np.linalg.norm(vec)
            if norm == 0.0:
                raise ContractError(f"embedding {key!r} is the zero vector")
            self._by_sentence.setdefault(sentence, vec / norm)

    def __call__(self, sentence: str) -> np.ndarray:
        try:
            return self._by_sentence[sentence]
        except KeyError:
            raise ContractError(
                f"no precomputed embedding for sentence {sentence!r}"
            ) from None


@dataclass
class SentencePairBank:
    """Source sentence pairs plus the corpus they are augmented from."""

    pairs: list[tuple[str, str]]
    corpus: list[str]
    embedder: Callable[[str], np.ndarray]


def build_transfer_pairs(bank: SentencePairBank, k: int = 10) -> list[tuple[str, str]]:
    """All k x k nearest-neighbor combinations per source pair.

    For each source pair, the k neighbors of each side are retrieved from
    the corpus and combined; exact duplicate pairs are dropped globally,
    keeping the first occurrence (stable order).
    """
    if not bank.corpus:
        raise ContractError("sentence corpus is empty")
    matrix = np.stack([np.asarray(bank.embedder(s), dtype=np.float64)
                       for s in bank.corpus])
    norms = np.linalg.norm(matrix, axis=1)
    if np.abs(norms - 1.0).max() > UNIT_NORM_TOL:
        raise ContractError("corpus embeddings are not unit-norm")

    out: list[tuple[str, str]] = []
    seen: set[tuple[str, str]] = set()
    for s1, s2 in bank.pairs:
        idx1, _ = knn(bank.embedder(s1), matrix, k)
        idx2, _ = knn(bank.embedder(s2), matrix, k)
        for i in idx1:
            for j in idx2:
                pair = (bank.corpus[int(i)], bank.corpus[int(j)])
                if pair not in seen:
                    seen.add(pair)
                    out.append(pair)
    return out


# ---------------------------------------------------------------------------
# cross-vocabulary embedding swap
# ---------------------------------------------------------------------------

def swap_embeddings(
    student: TransformerModel,
    new_vocab: Vocab,
    teacher_embeddings: np.ndarray,
) -> TransformerModel:
    """Replace word embeddings with a projected wide table; keep the encoder.

    The projected embeddings are installed frozen, so a subsequent
    fine-tune adapts the encoder but not the vocabulary representation.
    The input model is not modified.
    """
    teacher_embeddings = np.asarray(teacher_embeddings)
    d_student = student.config.hidden_dim
    if teacher_embeddings.ndim != 2:
        raise ContractError("teacher embedding table must be a matrix")
    if teacher_embeddings.shape[0] != len(new_vocab):
        raise ContractError(
            f"embedding rows {teacher_embeddings.shape[0]} do not match the new "
            f"vocabulary size {len(new_vocab)}"
        )
    if teacher_embeddings.shape[1] < d_student:
        raise ContractError(
            f"teacher embedding width {teacher_embeddings.shape[1]} is narrower "
            f"than the student width {d_student}"
        )
    projected = adapt_embeddings(teacher_embeddings.astype(np.float64), d_student)

    cfg = dc_replace(student.config, vocab_size=len(new_vocab))
    swapped = TransformerModel.init_random(cfg, seed=0, dtype=student.dtype)
    for name, p in student.params.items():
        if name == "embeddings.word":
            continue
        swapped.set_param(name, p.data.copy(), frozen=p.frozen)
    swapped.set_param("embeddings.word", projected.astype(student.dtype), frozen=True)
    return swapped


# ---------------------------------------------------------------------------
# token-level (BIO) tasks
# ---------------------------------------------------------------------------

def bio_spans(tags: Sequence[str]) -> list[tuple[int, int, str]]:
    """BIO tags -> (start, end_exclusive, label) spans, with standard repair:
    an I- tag that does not continue the open span starts a new one."""
    spans: list[tuple[int, int, str]] = []
    start: Optional[int] = None
    label: Optional[str] = None

    def close(end: int) -> None:
        nonlocal start, label
        if start is not None:
            spans.append((start, end, label))
        start, label = None, None

    for i, tag in enumerate(tags):
        if tag == "O":
            close(i)
            continue
        if "-" not in tag:
            raise DataError(f"invalid BIO tag {tag!r} at position {i}")
        prefix, tag_label = tag.split("-", 1)
        if prefix == "B" or (prefix == "I" and (start is None or label != tag_label)):
            close(i)
            start, label = i, tag_label
        elif prefix != "I":
            raise DataError(f"unknown BIO prefix in {tag!r} at position {i}")
    close(len(tags))
    return spans


def span_f1(gold: Sequence[Sequence[str]], pred: Sequence[Sequence[str]]) -> dict:
    """Exact-match entity span micro precision/recall/F1."""
    tp = fp = fn = 0
    for g_tags, p_tags in zip(gold, pred):
        g = set(bio_spans(list(g_tags)))
        p = set(bio_spans(list(p_tags)))
        tp += len(g & p)
        fp += len(p - g)
        fn += len(g - p)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"precision": precision, "recall": recall, "f1": f1}


@dataclass
class TokenTaskData:
    """Tokenized sentences with word-level tags aligned to first subtokens."""

    ids: np.ndarray
    segments: np.ndarray
    mask: np.ndarray
    word_positions: list[list[int]]   # sequence position of each word's first piece
    word_labels: list[list[int]]
    tag_names: list[str]

    def __len__(self) -> int:
        return self.ids.shape[0]

    @classmethod
    def build(cls, sentences: Sequence[tuple[list[str], list[str]]],
              vocab: Vocab, max_len: int,
              tag_names: Optional[list[str]] = None) -> "TokenTaskData":
        if not sentences:
            raise DataError("token task data is empty")
        if tag_names is None:
            tag_names = sorted({t for _, tags in sentences for t in tags})
        tag_to_id = {t: i for i, t in enumerate(tag_names)}
        all_ids, all_seg, all_mask, positions, labels = [], [], [], [], []
        for tokens, tags in sentences:
            if len(tokens) != len(tags):
                raise DataError("token/tag length mismatch")
            enc = tokenize(" ".join(tokens), vocab, max_len)
            # recompute word boundaries: first piece of each word, in order
            pos, lab, cursor = [], [], 1  # position 0 is [CLS]
            from .transformer import _wordpiece
            for token, tag in zip(tokens, tags):
                n_pieces = len(_wordpiece(token, vocab))
                if cursor + n_pieces > max_len - 1:  # room for [SEP]
                    break
                if tag not in tag_to_id:
                    raise DataError(f"tag {tag!r} not in tag set {tag_names}")
                pos.append(cursor)
                lab.append(tag_to_id[tag])
                cursor += n_pieces
            all_ids.append(enc.ids)
            all_seg.append(enc.segments)
            all_mask.append(enc.mask)
            positions.append(pos)
            labels.append(lab)
        return cls(
            ids=np.stack(all_ids), segments=np.stack(all_seg), mask=np.stack(all_mask),
            word_positions=positions, word_labels=labels, tag_names=list(tag_names),
        )

    def subset(self, indices: Sequence[int]) -> "TokenTaskData":
        idx = list(indices)
        return TokenTaskData(
            ids=self.ids[idx], segments=self.segments[idx], mask=self.mask[idx],
            word_positions=[self.word_positions[i] for i in idx],
            word_labels=[self.word_labels[i] for i in idx],
            tag_names=self.tag_names,
        )

    def split_validation(self, fraction: float = 0.1) -> tuple["TokenTaskData", "TokenTaskData"]:
        n = len(self)
        n_val = max(1, int(round(n * fraction)))
        if n_val >= n:
            raise DataError(f"cannot hold out {n_val} of {n} sentences")
        return self.subset(range(n - n_val)), self.subset(range(n - n_val, n))


def _token_batch(data: TokenTaskData, idx: np.ndarray):
    batch = Batch(ids=data.ids[idx], segments=data.segments[idx], mask=data.mask[idx])
    seq = data.ids.shape[1]
    flat_idx, flat_labels = [], []
    for row, i in enumerate(idx):
        for pos, lab in zip(data.word_positions[i], data.word_labels[i]):
            flat_idx.append(row * seq + pos)
            flat_labels.append(lab)
    return batch, np.asarray(flat_idx, dtype=np.int64), np.asarray(flat_labels, dtype=np.int64)


def fine_tune_tokens(
    model: TransformerModel,
    data: TokenTaskData,
    epochs: int,
    lr: float,
    batch_size: int = 32,
    seed: int = 0,
    metrics: Optional[MetricsWriter] = None,
    validation_fraction: float = 0.1,
) -> tuple[TransformerModel, dict]:
    """CE over labeled word positions; returns span F1 on the validation split."""
    if model.config.num_classes != len(data.tag_names):
        raise ContractError(
            f"model head has {model.config.num_classes} classes, tag set has "
            f"{len(data.tag_names)}"
        )
    train, val = data.split_validation(validation_fraction)
    optimizer = Adam(model.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    step = 0
    for _ in range(epochs):
        order = rng.permutation(len(train))
        for start in range(0, len(train), batch_size):
            idx = order[start:start + batch_size]
            batch, flat_idx, flat_labels = _token_batch(train, idx)
            if flat_idx.size == 0:
                continue
            t0 = time.perf_counter()
            with GradTape() as tape:
                out = model.forward(batch)
                logits = model.token_logits(out)
                flat = T.reshape(logits, (logits.shape[0] * logits.shape[1],
                                          logits.shape[2]))
                loss = T.cross_entropy(T.gather_rows(flat, flat_idx), flat_labels)
                tape.backward(loss)
            optimizer.step()
            optimizer.zero_grad()
            step += 1
            emit(metrics, {"stage": 0, "step": step, "loss_ce": loss.item(),
                           "lr": lr, "wall_ms": (time.perf_counter() - t0) * 1000.0})
    return model, evaluate_tokens(model, val)


def evaluate_tokens(model: TransformerModel, data: TokenTaskData,
                    batch_size: int = 64) -> dict:
    """Span-level F1 (exact match, BIO) plus word-level accuracy."""
    gold_tags, pred_tags = [], []
    correct = total = 0
    for start in range(0, len(data), batch_size):
        idx = np.arange(start, min(start + batch_size, len(data)))
        batch, _, _ = _token_batch(data, idx)
        logits = model.token_logits(model.forward(batch)).data
        pred_ids = logits.argmax(axis=-1)
        for row, i in enumerate(idx):
            g = [data.tag_names[l] for l in data.word_labels[i]]
            p = [data.tag_names[pred_ids[row, pos]] for pos in data.word_positions[i]]
            gold_tags.append(g)
            pred_tags.append(p)
            correct += sum(int(a == b) for a, b in zip(g, p))
            total += len(g)
    result = span_f1(gold_tags, pred_tags)
    result["token_accuracy"] = correct / total if total else 0.0
    result["n_sentences"] = len(data)
    return result
