"""Tokenization, embeddings, and the transformer encoder.

The encoder exposes every layer's hidden states and every head's
attention maps so that distillation losses can align a student to a
teacher layer by layer. The classifier head reads the first ([CLS])
position of the final hidden layer.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .tensor import Parameter, Tensor

CLS_TOKEN = "[CLS]"
SEP_TOKEN = "[SEP]"
UNK_TOKEN = "[UNK]"
PAD_TOKEN = "[PAD]"
SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN)

ATTENTION_MASK_VALUE = -1e9


class Vocab:
    """Dense token -> id map with the BERT-style special tokens.

    The on-disk format is UTF-8, one token per line; the line number is
    the id. Continuation pieces carry the "##" prefix.
    """

    def __init__(self, tokens: Sequence[str]):
        self.id_to_token = list(tokens)
        self.token_to_id = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ContractError("vocab contains duplicate tokens")
        for special in SPECIAL_TOKENS:
            if special not in self.token_to_id:
                raise ContractError(f"vocab is missing special token {special}")
        self.cls_id = self.token_to_id[CLS_TOKEN]
        self.sep_id = self.token_to_id[SEP_TOKEN]
        self.unk_id = self.token_to_id[UNK_TOKEN]
        self.pad_id = self.token_to_id[PAD_TOKEN]

    def __len__(self) -> int:
        return len(self.id_to_token)

    @classmethod
    def from_file(cls, path: str) -> "Vocab":
        with open(path, encoding="utf-8") as f:
            tokens = [line.rstrip("\n") for line in f if line.rstrip("\n")]
        return cls(tokens)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for tok in self.id_to_token:
                f.write(tok + "\n")


def _wordpiece(word: str, vocab: Vocab) -> list[int]:
    """Greedy longest-match split; an unmatchable word maps to [UNK]."""
    if word in vocab.token_to_id:
        return [vocab.token_to_id[word]]
    pieces: list[int] = []
    start = 0
    while start < len(word):
        end = len(word)
        piece_id = None
        while start < end:
            piece = word[start:end]
            if start > 0:
                piece = "##" + piece
            if piece in vocab.token_to_id:
                piece_id = vocab.token_to_id[piece]
                break
            end -= 1
        if piece_id is None:
            return [vocab.unk_id]
        pieces.append(piece_id)
        start = end
    return pieces


@dataclass
class TokenizedExample:
    """Fixed-length encoded example: ids / segments / pad mask, plus the
    number of real (non-PAD) positions."""

    ids: np.ndarray
    segments: np.ndarray
    mask: np.ndarray
    length: int


def tokenize(
    text: str,
    vocab: Vocab,
    max_len: int,
    pair: Optional[str] = None,
) -> TokenizedExample:
    """Encode one example as [CLS] a... [SEP] (b... [SEP]), right-padded.

    Text is split on whitespace, then each word is WordPiece-split by
    greedy longest match. When a pair overflows max_len the longer side
    is truncated first, one token at a time.
    """
    if not text.strip():
        raise ContractError("tokenize requires non-empty text")
    if pair is not None and not pair.strip():
        raise ContractError("tokenize pair text must be non-empty when given")

    def encode_words(s: str) -> list[int]:
        out: list[int] = []
        for word in s.split():
            out.extend(_wordpiece(word, vocab))
        return out

    a = encode_words(text)
    b = encode_words(pair) if pair is not None else None

    if b is None:
        a = a[: max_len - 2]
        ids = [vocab.cls_id] + a + [vocab.sep_id]
        segments = [0] * len(ids)
    else:
        budget = max_len - 3
        while len(a) + len(b) > budget:
            if len(a) >= len(b):
                a.pop()
            else:
                b.pop()
        ids = [vocab.cls_id] + a + [vocab.sep_id] + b + [vocab.sep_id]
        segments = [0] * (len(a) + 2) + [1] * (len(b) + 1)

    length = len(ids)
    pad = max_len - length
    ids = ids + [vocab.pad_id] * pad
    segments = segments + [0] * pad
    mask = [1.0] * length + [0.0] * pad
    return TokenizedExample(
        ids=np.asarray(ids, dtype=np.int64),
        segments=np.asarray(segments, dtype=np.int64),
        mask=np.asarray(mask, dtype=np.float64),
        length=length,
    )


@dataclass
class ModelConfig:
    """Architecture hyperparameters for one encoder + classifier."""

    num_layers: int
    hidden_dim: int
    num_heads: int
    ff_dim: int
    max_seq_len: int
    vocab_size: int
    num_classes: int
    attention_scaling: str = "sqrt_head_dim"  # or "sqrt_seq_len"

    def __post_init__(self):
        for name in ("num_layers", "hidden_dim", "num_heads", "ff_dim",
                     "max_seq_len", "vocab_size", "num_classes"):
            if getattr(self, name) <= 0:
                raise ContractError(f"ModelConfig.{name} must be positive")
        if self.hidden_dim % self.num_heads != 0:
            raise ContractError(
                f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.attention_scaling not in ("sqrt_head_dim", "sqrt_seq_len"):
            raise ContractError(
                f"unknown attention_scaling {self.attention_scaling!r}"
            )

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls(**json.loads(text))


@dataclass
class EncodeOutput:
    """Per-layer hidden states, per-layer/head attention maps, CLS logits."""

    hidden: list[Tensor]   # L tensors of shape (batch, seq, hidden_dim)
    attn: list[Tensor]     # L tensors of shape (batch, heads, seq, seq)
    logits: Tensor         # (batch, num_classes)


@dataclass
class Batch:
    """Stacked tokenized examples ready for the encoder."""

    ids: np.ndarray        # (batch, seq) int64
    segments: np.ndarray   # (batch, seq) int64
    mask: np.ndarray       # (batch, seq) 1.0 for real tokens, 0.0 for PAD
    labels: Optional[np.ndarray] = None
    teacher_logits: Optional[np.ndarray] = None

    @classmethod
    def stack(cls, examples: Sequence[TokenizedExample],
              labels: Optional[np.ndarray] = None,
              teacher_logits: Optional[np.ndarray] = None) -> "Batch":
        return cls(
            ids=np.stack([e.ids for e in examples]),
            segments=np.stack([e.segments for e in examples]),
            mask=np.stack([e.mask for e in examples]),
            labels=labels,
            teacher_logits=teacher_logits,
        )

    @property
    def size(self) -> int:
        return self.ids.shape[0]


def _truncated_normal(rng: np.random.Generator, shape, std: float, dtype) -> np.ndarray:
    """Normal(0, std) with resampling beyond 2 std (BERT-style init)."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(dtype)


class TransformerModel:
    """Post-layer-norm transformer encoder with a linear classifier head.

    Parameter names are stable and unique; they are the checkpoint keys.
    """

    INIT_STD = 0.02

    def __init__(self, config: ModelConfig, params: dict[str, Parameter], dtype=np.float32):
        self.config = config
        self.params = params
        self.dtype = np.dtype(dtype)

    # -- construction -------------------------------------------------

    @classmethod
    def init_random(cls, config: ModelConfig, seed: int, dtype=np.float32) -> "TransformerModel":
        rng = np.random.default_rng(seed)
        d, ff = config.hidden_dim, config.ff_dim
        params: dict[str, Parameter] = {}

        def weight(name, shape):
            params[name] = Parameter(name, _truncated_normal(rng, shape, cls.INIT_STD, dtype))

        def zeros(name, shape):
            params[name] = Parameter(name, np.zeros(shape, dtype=dtype))

        def ones(name, shape):
            params[name] = Parameter(name, np.ones(shape, dtype=dtype))

        weight("embeddings.word", (config.vocab_size, d))
        weight("embeddings.position", (config.max_seq_len, d))
        weight("embeddings.segment", (2, d))
        for l in range(config.num_layers):
            p = f"layers.{l}"
            for mat in ("wq", "wk", "wv", "wo"):
                weight(f"{p}.attn.{mat}", (d, d))
                zeros(f"{p}.attn.{mat}_bias", (d,))
            ones(f"{p}.attn_norm.gain", (d,))
            zeros(f"{p}.attn_norm.bias", (d,))
            weight(f"{p}.ff.w1", (d, ff))
            zeros(f"{p}.ff.b1", (ff,))
            weight(f"{p}.ff.w2", (ff, d))
            zeros(f"{p}.ff.b2", (d,))
            ones(f"{p}.ff_norm.gain", (d,))
            zeros(f"{p}.ff_norm.bias", (d,))
        weight("classifier.weight", (d, config.num_classes))
        return cls(config, params, dtype=dtype)

    def clone(self) -> "TransformerModel":
        params = {
            name: Parameter(name, p.data.copy(), frozen=p.frozen)
            for name, p in self.params.items()
        }
        return TransformerModel(self.config, params, dtype=self.dtype)

    # -- accessors ----------------------------------------------------

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def param(self, name: str) -> Parameter:
        return self.params[name]

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.params.items()}

    def set_param(self, name: str, value: np.ndarray, frozen: Optional[bool] = None) -> None:
        if name not in self.params:
            raise ContractError(f"unknown parameter {name!r}")
        current = self.params[name]
        if current.data.shape != value.shape:
            raise ShapeError(
                f"parameter {name!r}: expected shape {current.data.shape}, got {value.shape}"
            )
        current.tensor.data = np.asarray(value, dtype=self.dtype)
        if frozen is not None:
            current.frozen = frozen

    # -- forward ------------------------------------------------------

    def forward(self, batch: Batch) -> EncodeOutput:
        """Run the encoder; see EncodeOutput for what is returned.

        PAD keys are masked to a large negative logit before the
        attention softmax, so attention rows are row-stochastic over the
        real tokens only.
        """
        cfg = self.config
        ids, segments, mask = batch.ids, batch.segments, batch.mask
        bsz, seq = ids.shape
        if seq > cfg.max_seq_len:
            raise ContractError(
                f"sequence length {seq} exceeds max_seq_len {cfg.max_seq_len}"
            )
        if ids.min() < 0 or ids.max() >= cfg.vocab_size:
            raise ContractError(
                f"token id out of vocabulary range [0, {cfg.vocab_size})"
            )

        mask = mask.astype(self.dtype)
        word = T.embedding(self.params["embeddings.word"].tensor, ids)
        pos = T.embedding(
            self.params["embeddings.position"].tensor,
            np.broadcast_to(np.arange(seq), (bsz, seq)),
        )
        seg = T.embedding(self.params["embeddings.segment"].tensor, segments)
        h = T.add(T.add(word, pos), seg)

        # additive attention mask: 0 at real keys, -1e9 at PAD keys
        key_mask = Tensor(((1.0 - mask) * ATTENTION_MASK_VALUE)[:, None, None, :].astype(self.dtype))
        if cfg.attention_scaling == "sqrt_head_dim":
            inv_scale = Tensor(
                np.full((bsz, 1, 1, 1), 1.0 / math.sqrt(cfg.head_dim), dtype=self.dtype)
            )
        else:
            # per-example true length, so appended padding cannot change scores
            lengths = np.maximum(mask.sum(axis=1), 1.0)
            inv_scale = Tensor((1.0 / np.sqrt(lengths))[:, None, None, None].astype(self.dtype))

        hidden: list[Tensor] = []
        attn_maps: list[Tensor] = []
        for l in range(cfg.num_layers):
            p = f"layers.{l}"
            q = self._project(h, f"{p}.attn.wq", bsz, seq)
            k = self._project(h, f"{p}.attn.wk", bsz, seq)
            v = self._project(h, f"{p}.attn.wv", bsz, seq)
            scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), inv_scale)
            scores = T.add(scores, key_mask)
            attn = T.softmax(scores, axis=-1)
            attn_maps.append(attn)
            ctx = T.matmul(attn, v)  # (B, H, T, dh)
            ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (bsz, seq, cfg.hidden_dim))
            out = T.add(T.matmul(ctx, self.params[f"{p}.attn.wo"].tensor),
                        self.params[f"{p}.attn.wo_bias"].tensor)
            h = T.layer_norm(
                T.add(h, out),
                self.params[f"{p}.attn_norm.gain"].tensor,
                self.params[f"{p}.attn_norm.bias"].tensor,
            )
            ff = T.add(T.matmul(h, self.params[f"{p}.ff.w1"].tensor),
                       self.params[f"{p}.ff.b1"].tensor)
            ff = T.gelu(ff)
            ff = T.add(T.matmul(ff, self.params[f"{p}.ff.w2"].tensor),
                       self.params[f"{p}.ff.b2"].tensor)
            h = T.layer_norm(
                T.add(h, ff),
                self.params[f"{p}.ff_norm.gain"].tensor,
                self.params[f"{p}.ff_norm.bias"].tensor,
            )
            hidden.append(h)

        cls_state = T.take(h, 0, axis=1)  # (B, d) at the [CLS] position
        logits = T.matmul(cls_state, self.params["classifier.weight"].tensor)
        return EncodeOutput(hidden=hidden, attn=attn_maps, logits=logits)

    def _project(self, h: Tensor, name: str, bsz: int, seq: int) -> Tensor:
        """Linear projection followed by the split into attention heads."""
        cfg = self.config
        x = T.add(T.matmul(h, self.params[name].tensor),
                  self.params[name + "_bias"].tensor)
        x = T.reshape(x, (bsz, seq, cfg.num_heads, cfg.head_dim))
        return T.transpose(x, (0, 2, 1, 3))

    def token_logits(self, encoded: EncodeOutput) -> Tensor:
        """Classifier applied at every position (token-level tasks)."""
        return T.matmul(encoded.hidden[-1], self.params["classifier.weight"].tensor)


def init_model(
    config: ModelConfig,
    seed: int,
    init: str = "random",
    checkpoint_path: Optional[str] = None,
    dtype=np.float32,
) -> TransformerModel:
    """Build a model by strategy.

    "random": truncated normal (std 0.02) weights.
    "from_checkpoint": restore every named tensor exactly; shapes must
    match `config`.
    "from_student_seed": restore encoder tensors from a previously
    distilled student, fresh random classifier head.
    """
    from . import checkpoint as ckpt  # local import, checkpoint imports this module

    if init == "random":
        return TransformerModel.init_random(config, seed, dtype=dtype)
    if checkpoint_path is None:
        raise ContractError(f"init={init!r} requires a checkpoint path")
    if init == "from_checkpoint":
        _, arrays = ckpt.load_tensors(checkpoint_path)
        model = TransformerModel.init_random(config, seed, dtype=dtype)
        expected, got = set(model.params), set(arrays)
        if expected != got:
            raise ContractError(
                f"checkpoint tensors do not match config: missing "
                f"{sorted(expected - got)}, unexpected {sorted(got - expected)}"
            )
        for name, arr in arrays.items():
            model.set_param(name, arr)
        return model
    if init == "from_student_seed":
        _, arrays = ckpt.load_tensors(checkpoint_path)
        model = TransformerModel.init_random(config, seed, dtype=dtype)
        for name, p in model.params.items():
            if name.startswith("classifier."):
                continue  # fresh head for the new task
            if name not in arrays:
                raise ContractError(f"seed checkpoint is missing encoder tensor {name!r}")
            model.set_param(name, arrays[name])
        return model
    raise ContractError(f"unknown init strategy {init!r}")
