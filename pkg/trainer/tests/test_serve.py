"""End-to-end protocol tests against a live trainer subprocess (synthetic data)."""

import json
import subprocess
import sys

import pytest

from conftest import tiny_document


@pytest.fixture()
def trainer_proc(synthetic_data_dir):
    proc = subprocess.Popen(
        [sys.executable, "-m", "cifar_trainer", "--data-dir", str(synthetic_data_dir), "--batch-size", "16"],
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        text=True,
        bufsize=1,
    )
    yield proc
    proc.stdin.close()
    proc.wait(timeout=30)


def send(proc, payload: dict) -> None:
    proc.stdin.write(json.dumps(payload) + "\n")
    proc.stdin.flush()


def read_result(proc) -> dict:
    while True:
        line = proc.stdout.readline()
        assert line, "trainer exited unexpectedly"
        obj = json.loads(line)
        if obj.get("type") == "result":
            return obj


def request(request_id: str, document: dict, epochs: int = 1, mode: str = "FITNESS", seed: int = 7) -> dict:
    return {
        "type": "evaluate",
        "id": request_id,
        "architecture": document,
        "budget": {"epochs": epochs, "dataset_variant": "PARTIAL", "mode": mode},
        "seed": seed,
    }


def test_hello_announced_first(trainer_proc):
    hello = json.loads(trainer_proc.stdout.readline())
    assert hello["type"] == "hello"
    assert hello["protocol_version"] == 1


def test_fitness_request_roundtrip(trainer_proc):
    json.loads(trainer_proc.stdout.readline())  # hello
    send(trainer_proc, request("r1", tiny_document()))
    result = read_result(trainer_proc)
    assert result["id"] == "r1"
    assert result["status"] == "OK"
    assert 0.0 <= result["fitness"] <= 1.0
    assert result["metrics"]["epochs"] == 1
    assert result["metrics"]["n_params"] > 0


def test_deterministic_mode_repeats_exactly(trainer_proc):
    json.loads(trainer_proc.stdout.readline())
    send(trainer_proc, request("a", tiny_document(), seed=13))
    first = read_result(trainer_proc)
    send(trainer_proc, request("b", tiny_document(), seed=13))
    second = read_result(trainer_proc)
    assert first["fitness"] == second["fitness"]


def test_pipelined_requests_answered_in_order(trainer_proc):
    json.loads(trainer_proc.stdout.readline())
    send(trainer_proc, request("first", tiny_document()))
    send(trainer_proc, request("second", tiny_document(channels=4)))
    assert read_result(trainer_proc)["id"] == "first"
    assert read_result(trainer_proc)["id"] == "second"


def test_unknown_op_yields_error_and_process_survives(trainer_proc):
    json.loads(trainer_proc.stdout.readline())
    bad = tiny_document()
    bad["layers"][0] = {"op": "CONV3D", "components": {}}
    send(trainer_proc, request("bad", bad))
    result = read_result(trainer_proc)
    assert result["status"] == "ERROR"
    assert "CONV3D" in result["error_message"]

    send(trainer_proc, request("good", tiny_document()))
    assert read_result(trainer_proc)["status"] == "OK"


def test_shape_failure_is_error_not_crash(trainer_proc):
    json.loads(trainer_proc.stdout.readline())
    bad = tiny_document()
    bad["layers"][-1]["components"]["in_features"] = 9999  # mismatched head
    send(trainer_proc, request("shape", bad))
    result = read_result(trainer_proc)
    assert result["status"] == "ERROR"

    send(trainer_proc, request("after", tiny_document()))
    assert read_result(trainer_proc)["status"] == "OK"


def test_final_train_reports_test_accuracy(trainer_proc):
    json.loads(trainer_proc.stdout.readline())
    payload = request("final", tiny_document(), epochs=2, mode="FINAL_TRAIN")
    payload["budget"]["dataset_variant"] = "ENTIRE"
    send(trainer_proc, payload)
    result = read_result(trainer_proc)
    assert result["status"] == "OK"
    assert "test_accuracy" in result["metrics"]
    assert 0.0 <= result["metrics"]["test_accuracy"] <= 1.0
