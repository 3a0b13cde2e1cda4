"""Self-describing binary container for named tensors.

Layout (all integers little-endian):

    magic  "XDTC"                      4 bytes
    version                            u32
    config_len, config UTF-8 text      u64 + bytes
    tensor_count                       u32
    per tensor:
        name_len, name UTF-8           u32 + bytes
        rank                           u32
        dims                           rank x u64
        payload, row-major float32     prod(dims) x f32

Tensors are written sorted by name, so identical contents produce
identical files. Writes go through a temp file and an atomic rename.
"""

from __future__ import annotations

import hashlib
import os
import struct
from typing import Mapping

import numpy as np

from .errors import CheckpointError, ShapeError
from .transformer import ModelConfig, TransformerModel

MAGIC = b"XDTC"
VERSION = 1


def save_tensors(path: str, arrays: Mapping[str, np.ndarray], config_text: str = "") -> None:
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    config_bytes = config_text.encode("utf-8")
    blob += struct.pack("<Q", len(config_bytes))
    blob += config_bytes
    names = sorted(arrays)
    blob += struct.pack("<I", len(names))
    for name in names:
        arr = np.ascontiguousarray(arrays[name], dtype="<f4")
        name_bytes = name.encode("utf-8")
        blob += struct.pack("<I", len(name_bytes))
        blob += name_bytes
        blob += struct.pack("<I", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        blob += arr.tobytes()
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(blob)
    os.replace(tmp, path)


class _Reader:
    """Sequential reader that reports the byte offset of any failure."""

    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def read(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.data):
            raise CheckpointError(
                f"truncated checkpoint: needed {n} bytes for {what} "
                f"at byte offset {self.offset}, file has {len(self.data)}"
            )
        out = self.data[self.offset:self.offset + n]
        self.offset += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.read(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.read(8, what))[0]


def load_tensors(path: str) -> tuple[str, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        data = f.read()
    r = _Reader(data)
    magic = r.read(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(
            f"bad magic {magic!r} at byte offset 0, expected {MAGIC!r}"
        )
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    config_len = r.u64("config length")
    config_text = r.read(config_len, "config text").decode("utf-8")
    count = r.u32("tensor count")
    arrays: dict[str, np.ndarray] = {}
    for i in range(count):
        name_len = r.u32(f"tensor {i} name length")
        name = r.read(name_len, f"tensor {i} name").decode("utf-8")
        rank = r.u32(f"tensor {name!r} rank")
        dims = tuple(
            struct.unpack(f"<{rank}Q", r.read(8 * rank, f"tensor {name!r} dims"))
        )
        n_items = 1
        for d in dims:
            n_items *= d
        payload = r.read(4 * n_items, f"tensor {name!r} payload")
        arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    if r.offset != len(data):
        raise CheckpointError(
            f"trailing garbage at byte offset {r.offset}, file has {len(data)} bytes"
        )
    return config_text, arrays


def save_model(model: TransformerModel, path: str) -> None:
    save_tensors(path, model.named_arrays(), model.config.to_json())


def load_model(path: str, dtype=np.float32) -> TransformerModel:
    """Rebuild a model from a checkpoint, validating names and shapes."""
    config_text, arrays = load_tensors(path)
    try:
        config = ModelConfig.from_json(config_text)
    except Exception as exc:
        raise CheckpointError(f"checkpoint config is not a valid model config: {exc}") from exc
    model = TransformerModel.init_random(config, seed=0, dtype=dtype)
    expected = set(model.params)
    got = set(arrays)
    if expected - got:
        raise CheckpointError(f"checkpoint is missing tensors: {sorted(expected - got)}")
    if got - expected:
        raise CheckpointError(f"checkpoint has unexpected tensors: {sorted(got - expected)}")
    for name, arr in arrays.items():
        if model.params[name].data.shape != arr.shape:
            raise ShapeError(
                f"tensor {name!r}: checkpoint shape {arr.shape} does not match "
                f"config shape {model.params[name].data.shape}"
            )
        model.params[name].tensor.data = arr.astype(dtype)
    return model


def expected_file_size(arrays: Mapping[str, np.ndarray], config_text: str = "") -> int:
    """Exact on-disk size: header plus the sum of all tensor records."""
    size = 4 + 4 + 8 + len(config_text.encode("utf-8")) + 4
    for name, arr in arrays.items():
        size += 4 + len(name.encode("utf-8")) + 4 + 8 * arr.ndim + 4 * arr.size
    return size


def tensor_hashes(arrays: Mapping[str, np.ndarray]) -> dict[str, str]:
    """Per-tensor sha256 over dtype, shape, and raw array bytes."""
    out = {}
    for name, arr in arrays.items():
        h = hashlib.sha256()
        h.update(str(arr.dtype).encode())
        h.update(str(arr.shape).encode())
        h.update(np.ascontiguousarray(arr).tobytes())
        out[name] = h.hexdigest()
    return out


def fingerprint(arrays: Mapping[str, np.ndarray]) -> str:
    """Single digest over all named tensors (order-independent)."""
    h = hashlib.sha256()
    for name, digest in sorted(tensor_hashes(arrays).items()):
        h.update(name.encode())
        h.update(digest.encode())
    return h.hexdigest()
