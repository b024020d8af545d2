import json
import shlex
import sys
from pathlib import Path

import pytest

from chainsearch.arch import Layer, to_document
from chainsearch.cli import main

from conftest import STUB_DIR, arch_of, conv, linear, toy_cifar_arch


def write_descriptions(directory: Path, archs) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    for i, arch in enumerate(archs):
        name = arch.name or f"model{i}"
        (directory / f"{name}.json").write_text(to_document(arch))
    return directory


@pytest.fixture()
def toy_descriptions(tmp_path):
    archs = [
        toy_cifar_arch("tiny_a"),
        arch_of(conv(3, 16), Layer("RELU"), conv(16, 8, k=1, p=0), Layer("FLATTEN"),
                linear(8 * 32 * 32, 10), name="tiny_b"),
        arch_of(conv(3, 4), Layer("RELU"), Layer("FLATTEN"), linear(4 * 32 * 32, 10), name="tiny_c"),
    ]
    return write_descriptions(tmp_path / "descriptions", archs)


def stub(name: str) -> str:
    return f"{shlex.quote(sys.executable)} {shlex.quote(str(STUB_DIR / (name + '.py')))}"


class TestBuildSpace:
    def test_table_written(self, toy_descriptions, tmp_path, capsys):
        out = tmp_path / "space"
        code = main(["build-space", "--descriptions", str(toy_descriptions), "--out", str(out)])
        assert code == 0
        lines = (out / "search_space.csv").read_text().splitlines()
        assert lines[0] == "model,fitness,wall_time_s"
        assert len(lines) == 4
        assert "days" in capsys.readouterr().out

    def test_empty_directory_fails(self, tmp_path, capsys):
        empty = tmp_path / "none"
        empty.mkdir()
        code = main(["build-space", "--descriptions", str(empty), "--out", str(tmp_path / "o")])
        assert code != 0
        assert "no descriptions found" in capsys.readouterr().err

    def test_invalid_description_rejected(self, tmp_path, capsys):
        bad = write_descriptions(tmp_path / "bad", [arch_of(conv(3, 8), Layer("RELU"), name="headless")])
        code = main(["build-space", "--descriptions", str(bad), "--out", str(tmp_path / "o")])
        assert code != 0
        assert "invalid descriptions" in capsys.readouterr().err


class TestSearch:
    def run_search_cli(self, descriptions, out, seed=7, extra=()):
        return main(
            ["search", "--descriptions", str(descriptions), "--out", str(out),
             "--generations", "3", "--individuals", "5", "--seed", str(seed), *extra]
        )

    def test_artifacts_written(self, toy_descriptions, tmp_path):
        out = tmp_path / "run"
        assert self.run_search_cli(toy_descriptions, out) == 0
        for name in ("manifest.json", "history.csv", "best_architecture.json",
                     "best_chain.dot", "summary.json", "generations/gen_000.json",
                     "generations/gen_003.json"):
            assert (out / name).exists(), name
        history = (out / "history.csv").read_text().splitlines()
        assert history[0] == "generation,best_fitness,mean_fitness,n_cache_hits,wall_time_s"
        assert len(history) == 4
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["master_seed"] == 7
        assert len(manifest["descriptions"]) == 3

    def test_rerun_same_seed_identical_best_document(self, toy_descriptions, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert self.run_search_cli(toy_descriptions, out_a) == 0
        assert self.run_search_cli(toy_descriptions, out_b) == 0
        best_a = (out_a / "best_architecture.json").read_bytes()
        best_b = (out_b / "best_architecture.json").read_bytes()
        assert best_a == best_b

    def test_refuses_nonempty_out(self, toy_descriptions, tmp_path, capsys):
        out = tmp_path / "run"
        out.mkdir()
        (out / "old.txt").write_text("x")
        assert self.run_search_cli(toy_descriptions, out) != 0
        assert "already exists" in capsys.readouterr().err

    def test_external_echo_stub(self, toy_descriptions, tmp_path):
        out = tmp_path / "run"
        code = self.run_search_cli(
            toy_descriptions, out, extra=["--evaluator", "external", "--trainer-cmd", stub("echo_trainer")]
        )
        assert code == 0
        history = (out / "history.csv").read_text().splitlines()
        assert all(line.split(",")[1] == "0.5" for line in history[1:])

    def test_invalid_config_rejected(self, toy_descriptions, tmp_path, capsys):
        code = main(["search", "--descriptions", str(toy_descriptions), "--out", str(tmp_path / "r"),
                     "--elitism", "1.5"])
        assert code != 0
        assert "elitism_rate" in capsys.readouterr().err

    def test_external_requires_trainer_cmd(self, toy_descriptions, tmp_path, capsys):
        code = main(["search", "--descriptions", str(toy_descriptions), "--out", str(tmp_path / "r"),
                     "--evaluator", "external"])
        assert code != 0
        assert "--trainer-cmd" in capsys.readouterr().err

    def test_config_file_precedence(self, toy_descriptions, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"generations": 2, "individuals": 4, "master_seed": 1}))
        out = tmp_path / "run"
        code = main(["search", "--descriptions", str(toy_descriptions), "--out", str(out),
                     "--config", str(cfg), "--individuals", "6"])
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["generations"] == 2      # from file
        assert manifest["config"]["individuals"] == 6      # flag wins
        assert manifest["config"]["master_seed"] == 1


class TestTrainBest:
    def _completed_run(self, toy_descriptions, tmp_path):
        out = tmp_path / "run"
        main(["search", "--descriptions", str(toy_descriptions), "--out", str(out),
              "--generations", "2", "--individuals", "4", "--seed", "3"])
        return out

    def test_final_training_report(self, toy_descriptions, tmp_path, capsys):
        run_dir = self._completed_run(toy_descriptions, tmp_path)
        code = main(["train-best", "--run", str(run_dir), "--trainer-cmd", stub("echo_trainer")])
        assert code == 0
        payload = json.loads((run_dir / "final_training.json").read_text())
        assert payload["test_accuracy"] == 0.9059
        assert payload["test_error_pct"] == 9.41
        assert payload["metrics"]["epochs"] == 100       # FINAL_TRAIN default budget
        assert payload["metrics"]["mode"] == "FINAL_TRAIN"
        assert payload["metrics"]["dataset_variant"] == "ENTIRE"
        assert "9.41" in capsys.readouterr().out

    def test_missing_run_directory(self, tmp_path, capsys):
        code = main(["train-best", "--run", str(tmp_path / "nope"), "--trainer-cmd", stub("echo_trainer")])
        assert code != 0
        assert "not found" in capsys.readouterr().err

    def test_trainer_failure_is_reported(self, toy_descriptions, tmp_path, capsys):
        run_dir = self._completed_run(toy_descriptions, tmp_path)
        code = main(["train-best", "--run", str(run_dir), "--trainer-cmd", stub("crash_trainer")])
        assert code != 0
        assert "TrainerCrash" in capsys.readouterr().err


class TestExportChain:
    def test_bundled_model(self, tmp_path):
        out = tmp_path / "vgg16.dot"
        assert main(["export-chain", "vgg16", "--out", str(out)]) == 0
        text = out.read_text()
        assert text.startswith("digraph")
        assert '"CONV2D"' in text

    def test_unknown_model(self, tmp_path, capsys):
        code = main(["export-chain", "nosuchnet", "--out", str(tmp_path / "x.dot")])
        assert code != 0
        assert "unknown model" in capsys.readouterr().err

    def test_idempotent_bytes(self, tmp_path):
        a, b = tmp_path / "a.dot", tmp_path / "b.dot"
        main(["export-chain", "resnet18", "--out", str(a)])
        main(["export-chain", "resnet18", "--out", str(b)])
        assert a.read_bytes() == b.read_bytes()
