"""HTTP service: endpoints, schemas, error mapping, parity with the CLI."""

import json
import os

import pytest
from fastapi.testclient import TestClient

from xdistil import checkpoint as ckpt
from xdistil.service import app
from xdistil.synthetic import generate_task

TABLE1_ROWS = [
    ("MNLI", [88.2, 84.2, 79.1, 91.1, 91.1, 93.6, 87.2]),
    ("QNLI", [87.0, 84.8, 73.3, 91.0, 91.6, 93.0, 88.1]),
    ("SST2", [81.6, 84.7, 66.1, 91.1, 91.3, 93.4, 87.6]),
    ("SQuADv1", [86.3, 84.6, 69.7, 87.1, 91.6, 92.9, 88.3]),
]


@pytest.fixture(scope="module")
def client():
    return TestClient(app)


@pytest.fixture(scope="module")
def task_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("svc_task")
    return generate_task(str(out), seed=0, n_labeled=180, n_transfer=200,
                         n_eval=30, n_tokens=24)


@pytest.fixture(scope="module")
def table1_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("csv") / "table1.csv"
    lines = ["source,MRPC,MNLI,RTE,QQP,QNLI,SST-2,SQuADv1"]
    for name, scores in TABLE1_ROWS:
        lines.append(name + "," + ",".join(str(s) for s in scores))
    path.write_text("\n".join(lines) + "\n")
    return str(path)


class TestHealth:
    def test_health(self, client):
        response = client.get("/v1/health")
        assert response.status_code == 200
        body = response.json()
        assert body["status"] == "ok"
        assert body["version"]


class TestSelectTask:
    def test_mnli_selected(self, client, table1_csv, tmp_path):
        response = client.post("/v1/select-task", json={"config": {
            "data": {"eval_matrix": table1_csv},
            "output_dir": str(tmp_path / "out"),
        }})
        assert response.status_code == 200
        body = response.json()
        assert body["best_source"] == "MNLI"
        assert abs(body["averages"]["MNLI"] - 87.8) <= 0.05

    def test_missing_input_is_config_error(self, client, tmp_path):
        response = client.post("/v1/select-task", json={"config": {
            "output_dir": str(tmp_path / "out2")}})
        assert response.status_code == 400
        assert response.json()["error_kind"] == "config"

    def test_unknown_config_key_rejected_by_schema(self, client):
        response = client.post("/v1/select-task", json={"config": {"bogus": 1}})
        assert response.status_code == 422  # pydantic request validation


class TestGradcheck:
    def test_passes(self, client, tmp_path):
        response = client.post("/v1/gradcheck", json={"config": {
            "output_dir": str(tmp_path / "gc")}})
        assert response.status_code == 200
        body = response.json()
        assert body["passed"] is True
        assert body["max_rel_error"] < body["tolerance"]


class TestTrainingEndpoints:
    def test_finetune_then_eval_and_distil(self, client, task_dir, tmp_path):
        base = {
            "seed": 0,
            "model": {"num_layers": 2, "hidden_dim": 8, "num_heads": 2,
                      "ff_dim": 16, "max_seq_len": 16, "num_classes": 3},
            "train": {"epochs": 2, "lr": 1e-3, "batch_size": 32},
            "distil": {"epochs": [1, 1, 1, 1, 1], "batch_size": 32},
            "data": {"vocab": task_dir["vocab"], "labeled": task_dir["train"],
                     "transfer_pairs": task_dir["transfer_pairs"],
                     "eval": task_dir["eval"]},
        }
        teacher_cfg = json.loads(json.dumps(base))
        teacher_cfg["output_dir"] = str(tmp_path / "teacher")
        teacher_cfg["model"].update({"num_layers": 3, "hidden_dim": 16, "ff_dim": 32})
        teacher_cfg["train"]["epochs"] = 3
        response = client.post("/v1/finetune", json={"config": teacher_cfg})
        assert response.status_code == 200, response.text
        teacher_ckpt = response.json()["checkpoint"]
        assert os.path.exists(teacher_ckpt)

        eval_cfg = json.loads(json.dumps(base))
        eval_cfg["output_dir"] = str(tmp_path / "eval")
        eval_cfg["data"]["model_ckpt"] = teacher_ckpt
        response = client.post("/v1/eval", json={"config": eval_cfg})
        assert response.status_code == 200, response.text
        assert 0.0 <= response.json()["metrics"]["accuracy"] <= 1.0

        distil_cfg = json.loads(json.dumps(base))
        distil_cfg["output_dir"] = str(tmp_path / "student")
        distil_cfg["data"]["teacher_ckpt"] = teacher_ckpt
        response = client.post("/v1/distil", json={"config": distil_cfg})
        assert response.status_code == 200, response.text
        body = response.json()
        assert body["teacher_hash_unchanged"] is True
        assert [s["stage"] for s in body["stages"]] == [1, 2, 3, 4, 5]
        student = ckpt.load_model(body["checkpoint"])
        assert student.config.hidden_dim == 8

    def test_distil_without_teacher_is_config_error(self, client, task_dir, tmp_path):
        response = client.post("/v1/distil", json={"config": {
            "output_dir": str(tmp_path / "x"),
            "data": {"vocab": task_dir["vocab"], "labeled": task_dir["train"],
                     "transfer_pairs": task_dir["transfer_pairs"]},
        }})
        assert response.status_code == 400
        assert response.json()["error_kind"] == "config"


class TestAugmentEndpoint:
    def test_augment(self, client, task_dir, tmp_path):
        pairs_path = tmp_path / "pairs.tsv"
        with open(task_dir["transfer_pairs"]) as f:
            pairs_path.write_text(f.readline())
        response = client.post("/v1/augment", json={"config": {
            "output_dir": str(tmp_path / "aug"),
            "data": {"corpus": task_dir["corpus"], "pairs": str(pairs_path)},
            "augment": {"k": 2},
        }})
        assert response.status_code == 200
        body = response.json()
        assert body["pairs_written"] <= 4
        assert os.path.exists(body["output"])

    def test_k_larger_than_corpus_is_contract_error(self, client, task_dir, tmp_path):
        pairs_path = tmp_path / "pairs.tsv"
        pairs_path.write_text("a\tb\n")
        corpus_path = tmp_path / "corpus.txt"
        corpus_path.write_text("a\nb\n")
        response = client.post("/v1/augment", json={"config": {
            "output_dir": str(tmp_path / "aug2"),
            "data": {"corpus": str(corpus_path), "pairs": str(pairs_path)},
            "augment": {"k": 10},
        }})
        assert response.status_code == 422
        assert response.json()["error_kind"] == "contract"


class TestCliAgainstLiveServer:
    """The CLI as a thin client of a real uvicorn process."""

    @pytest.fixture(scope="class")
    def server_url(self):
        import socket
        import subprocess
        import sys
        import time

        import httpx

        with socket.socket() as s:
            s.bind(("127.0.0.1", 0))
            port = s.getsockname()[1]
        proc = subprocess.Popen(
            [sys.executable, "-m", "uvicorn", "xdistil.service:app",
             "--host", "127.0.0.1", "--port", str(port), "--log-level", "error"],
            stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
        url = f"http://127.0.0.1:{port}"
        try:
            for _ in range(100):
                try:
                    if httpx.get(url + "/v1/health", timeout=1.0).status_code == 200:
                        break
                except httpx.TransportError:
                    time.sleep(0.2)
            else:
                pytest.fail("uvicorn did not come up")
            yield url
        finally:
            proc.terminate()
            proc.wait(timeout=10)

    def test_select_task_over_http(self, server_url, table1_csv, tmp_path, capsys):
        import json as jsonlib

        from xdistil.cli import main

        code = main(["select-task", "--server", server_url,
                     "--set", f"data.eval_matrix={table1_csv}",
                     "--set", f"output_dir={tmp_path}/remote"])
        out = jsonlib.loads(capsys.readouterr().out.strip())
        assert code == 0
        assert out["best_source"] == "MNLI"

    def test_remote_contract_error_maps_to_exit_1(self, server_url, tmp_path, capsys):
        from xdistil.cli import main

        pairs_path = tmp_path / "p.tsv"
        pairs_path.write_text("a\tb\n")
        corpus_path = tmp_path / "c.txt"
        corpus_path.write_text("a\nb\n")
        code = main(["augment", "--server", server_url,
                     "--set", f"data.corpus={corpus_path}",
                     "--set", f"data.pairs={pairs_path}",
                     "--set", "augment.k=10",
                     "--set", f"output_dir={tmp_path}/remote2"])
        assert code == 1

    def test_remote_config_error_maps_to_exit_2(self, server_url, tmp_path, capsys):
        from xdistil.cli import main

        code = main(["select-task", "--server", server_url,
                     "--set", f"output_dir={tmp_path}/remote3"])
        assert code == 2
