"""JSONL metrics writer."""

import json

from xdistil.metrics import MetricsWriter, emit, read_metrics


def test_one_object_per_line(tmp_path):
    path = str(tmp_path / "m.jsonl")
    with MetricsWriter(path) as writer:
        writer.write({"stage": 1, "step": 1, "loss_layer": 0.5})
        writer.write({"stage": 1, "step": 2, "loss_layer": 0.4})
    lines = open(path).read().splitlines()
    assert len(lines) == 2
    assert all(isinstance(json.loads(line), dict) for line in lines)


def test_flushed_while_open(tmp_path):
    path = str(tmp_path / "m.jsonl")
    writer = MetricsWriter(path)
    writer.write({"step": 1})
    # visible to readers before close
    assert read_metrics(path) == [{"step": 1}]
    writer.close()


def test_emit_tolerates_missing_writer():
    emit(None, {"step": 1})  # no-op
