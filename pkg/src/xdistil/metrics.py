"""JSON-lines metrics emission, flushed per record."""

from __future__ import annotations

import json
from typing import Optional


class MetricsWriter:
    """One JSON object per line; absent loss keys mean the stage did not
    compute that loss."""

    def __init__(self, path: str):
        self.path = path
        self._fh = open(path, "w", encoding="utf-8")

    def write(self, record: dict) -> None:
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "MetricsWriter":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()


def read_metrics(path: str) -> list[dict]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def emit(writer: Optional[MetricsWriter], record: dict) -> None:
    if writer is not None:
        writer.write(record)
