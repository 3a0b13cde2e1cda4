"""Tokenized dataset containers and the plain-text file formats.

Formats:
    corpus      one sentence per line
    pairs       s1<TAB>s2
    labeled     s1<TAB>label  or  s1<TAB>s2<TAB>label (label is an int)
    ner         token<TAB>BIO-tag lines, blank line between sentences
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import ContractError, DataError
from .transformer import Batch, Vocab, tokenize


@dataclass
class LabeledSet:
    """Tokenized classification examples with hard labels."""

    ids: np.ndarray        # (n, seq)
    segments: np.ndarray
    mask: np.ndarray
    labels: np.ndarray     # (n,)
    num_classes: int
    teacher_logits: Optional[np.ndarray] = None   # (n, C) once soft-labeled

    def __len__(self) -> int:
        return self.ids.shape[0]

    @classmethod
    def build(cls, examples: Sequence[tuple[str, Optional[str], int]],
              vocab: Vocab, max_len: int, num_classes: int) -> "LabeledSet":
        if not examples:
            raise DataError("labeled set is empty")
        encoded = [tokenize(a, vocab, max_len, pair=b) for a, b, _ in examples]
        labels = np.asarray([lab for _, _, lab in examples], dtype=np.int64)
        if labels.min() < 0 or labels.max() >= num_classes:
            raise ContractError(
                f"label out of range [0, {num_classes}): found {labels.min()}..{labels.max()}"
            )
        return cls(
            ids=np.stack([e.ids for e in encoded]),
            segments=np.stack([e.segments for e in encoded]),
            mask=np.stack([e.mask for e in encoded]),
            labels=labels,
            num_classes=num_classes,
        )

    def subset(self, indices: np.ndarray) -> "LabeledSet":
        return replace(
            self,
            ids=self.ids[indices],
            segments=self.segments[indices],
            mask=self.mask[indices],
            labels=self.labels[indices],
            teacher_logits=None if self.teacher_logits is None else self.teacher_logits[indices],
        )

    def split_validation(self, fraction: float = 0.1) -> tuple["LabeledSet", "LabeledSet"]:
        """Deterministic split: the last `fraction` of examples in stable order."""
        n = len(self)
        n_val = max(1, int(round(n * fraction)))
        if n_val >= n:
            raise DataError(f"cannot hold out {n_val} of {n} examples")
        return self.subset(np.arange(n - n_val)), self.subset(np.arange(n - n_val, n))

    def batches(self, batch_size: int,
                rng: Optional[np.random.Generator] = None) -> Iterator[Batch]:
        order = np.arange(len(self)) if rng is None else rng.permutation(len(self))
        for start in range(0, len(self), batch_size):
            idx = order[start:start + batch_size]
            yield Batch(
                ids=self.ids[idx],
                segments=self.segments[idx],
                mask=self.mask[idx],
                labels=self.labels[idx],
                teacher_logits=None if self.teacher_logits is None else self.teacher_logits[idx],
            )


@dataclass
class TransferSet:
    """Tokenized unlabeled pairs, optionally with teacher soft targets."""

    ids: np.ndarray
    segments: np.ndarray
    mask: np.ndarray
    teacher_logits: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.ids.shape[0]

    @classmethod
    def build(cls, pairs: Sequence[tuple[str, Optional[str]]],
              vocab: Vocab, max_len: int) -> "TransferSet":
        if not pairs:
            raise DataError("transfer set is empty")
        encoded = [tokenize(a, vocab, max_len, pair=b) for a, b in pairs]
        return cls(
            ids=np.stack([e.ids for e in encoded]),
            segments=np.stack([e.segments for e in encoded]),
            mask=np.stack([e.mask for e in encoded]),
        )

    @classmethod
    def from_labeled(cls, labeled: LabeledSet) -> "TransferSet":
        """The labeled examples with labels stripped."""
        return cls(ids=labeled.ids.copy(), segments=labeled.segments.copy(),
                   mask=labeled.mask.copy())

    @classmethod
    def concat(cls, a: "TransferSet", b: "TransferSet") -> "TransferSet":
        logits = None
        if a.teacher_logits is not None and b.teacher_logits is not None:
            logits = np.concatenate([a.teacher_logits, b.teacher_logits])
        return cls(
            ids=np.concatenate([a.ids, b.ids]),
            segments=np.concatenate([a.segments, b.segments]),
            mask=np.concatenate([a.mask, b.mask]),
            teacher_logits=logits,
        )

    def batches(self, batch_size: int,
                rng: Optional[np.random.Generator] = None) -> Iterator[Batch]:
        order = np.arange(len(self)) if rng is None else rng.permutation(len(self))
        for start in range(0, len(self), batch_size):
            idx = order[start:start + batch_size]
            yield Batch(
                ids=self.ids[idx],
                segments=self.segments[idx],
                mask=self.mask[idx],
                teacher_logits=None if self.teacher_logits is None else self.teacher_logits[idx],
            )


# ---------------------------------------------------------------------------
# file readers / writers
# ---------------------------------------------------------------------------

def read_corpus(path: str) -> list[str]:
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f if line.strip()]


def read_pairs(path: str) -> list[tuple[str, str]]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected s1<TAB>s2, got {line!r}")
            out.append((parts[0], parts[1]))
    return out


def write_pairs(path: str, pairs: Sequence[tuple[str, str]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for a, b in pairs:
            f.write(f"{a}\t{b}\n")


def read_labeled(path: str) -> list[tuple[str, Optional[str], int]]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            try:
                if len(parts) == 2:
                    out.append((parts[0], None, int(parts[1])))
                elif len(parts) == 3:
                    out.append((parts[0], parts[1], int(parts[2])))
                else:
                    raise ValueError("wrong column count")
            except ValueError:
                raise DataError(
                    f"{path}:{lineno}: expected s1[<TAB>s2]<TAB>int_label, got {line!r}"
                ) from None
    return out


def write_labeled(path: str, examples: Sequence[tuple[str, Optional[str], int]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for a, b, label in examples:
            if b is None:
                f.write(f"{a}\t{label}\n")
            else:
                f.write(f"{a}\t{b}\t{label}\n")


def read_ner(path: str) -> list[tuple[list[str], list[str]]]:
    """token<TAB>tag lines, blank line between sentences."""
    sentences = []
    tokens: list[str] = []
    tags: list[str] = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                if tokens:
                    sentences.append((tokens, tags))
                    tokens, tags = [], []
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected token<TAB>tag, got {line!r}")
            tokens.append(parts[0])
            tags.append(parts[1])
    if tokens:
        sentences.append((tokens, tags))
    return sentences
