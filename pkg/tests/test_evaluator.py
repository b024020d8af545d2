import math

import pytest
from hypothesis import given, settings

from chainsearch.arch import Layer
from chainsearch.evaluator import (
    ERROR,
    OK,
    PROTOCOL_VIOLATION,
    TIMEOUT,
    TRAINER_CRASH,
    EvalBudget,
    EvaluationRequest,
    ExternalEvaluator,
    FitnessCache,
    TrainerProcess,
    cached_evaluate,
    external_evaluate,
    surrogate_evaluate,
)

from conftest import arch_of, conv, linear, maxpool, stub_cmd, toy_cifar_arch
from test_arch import architectures
from test_population import CountingEvaluator


class TestSurrogate:
    def test_all_terms_maximal(self):
        # 32 layers, all 10 ops present, >= 1e8 parameters
        layers = [
            conv(3, 8), Layer("BATCHNORM2D", {"num_features": 8}), Layer("RELU"), Layer("RELU6"),
            maxpool(), Layer("AVGPOOL2D", {"kernel_size": 2, "stride": 2, "padding": 0}),
            Layer("ADAPTIVEAVGPOOL2D", {"output_size": 1}),
            Layer("DROPOUT", {"dropout_p": 0.5}), Layer("FLATTEN"),
            linear(10_000, 10_000),
        ]
        layers += [Layer("RELU")] * (32 - len(layers) - 1) + [linear(10_000, 10)]
        arch = arch_of(*layers)
        assert len(arch.layers) == 32
        assert len({l.op for l in arch.layers}) == 10
        assert surrogate_evaluate(arch) == 1.0

    def test_minimal_net(self):
        arch = arch_of(Layer("FLATTEN"))
        assert surrogate_evaluate(arch) == pytest.approx(0.045625, abs=1e-12)

    def test_plug_formula_midrange(self):
        # 64 layers, 5 distinct ops, exactly 10_000 parameters
        layers = (
            [linear(99, 100)]  # 99*100 + 100 = 10_000
            + [Layer("RELU")] * 30
            + [Layer("RELU6")] * 30
            + [Layer("FLATTEN")]
            + [Layer("DROPOUT", {"dropout_p": 0.1})] * 2
        )
        arch = arch_of(*layers)
        assert len(arch.layers) == 64
        assert len({l.op for l in arch.layers}) == 5
        expected = 0.5 * 0.5 + 0.3 * 0.5 + 0.2 * (math.log10(10_001) / 8)
        got = surrogate_evaluate(arch)
        assert got == pytest.approx(expected, abs=1e-12)
        assert got == pytest.approx(0.5, abs=1e-4)

    def test_purity(self):
        assert surrogate_evaluate(toy_cifar_arch("a")) == surrogate_evaluate(toy_cifar_arch("b"))

    @given(architectures())
    @settings(max_examples=60, deadline=None)
    def test_range(self, arch):
        assert 0.0 <= surrogate_evaluate(arch) <= 1.0


class TestCache:
    def test_second_call_skips_backend(self, tmp_path):
        cache = FitnessCache(tmp_path / "c.jsonl")
        backend = CountingEvaluator(fitness=0.25)
        arch = toy_cifar_arch()
        first = cached_evaluate(arch, EvalBudget(), 7, backend.evaluate, cache)
        second = cached_evaluate(arch, EvalBudget(), 7, backend.evaluate, cache)
        assert backend.calls == 1
        assert first.fitness == second.fitness == 0.25
        assert second.metrics.get("cache_hit")

    def test_budget_is_part_of_the_key(self, tmp_path):
        cache = FitnessCache(tmp_path / "c.jsonl")
        backend = CountingEvaluator()
        arch = toy_cifar_arch()
        cached_evaluate(arch, EvalBudget(epochs=1), 7, backend.evaluate, cache)
        cached_evaluate(arch, EvalBudget(epochs=5), 7, backend.evaluate, cache)
        assert backend.calls == 2

    def test_seed_is_part_of_the_key(self, tmp_path):
        cache = FitnessCache(tmp_path / "c.jsonl")
        backend = CountingEvaluator()
        cached_evaluate(toy_cifar_arch(), EvalBudget(), 1, backend.evaluate, cache)
        cached_evaluate(toy_cifar_arch(), EvalBudget(), 2, backend.evaluate, cache)
        assert backend.calls == 2

    def test_errors_not_cached(self, tmp_path):
        cache = FitnessCache(tmp_path / "c.jsonl")
        backend = CountingEvaluator(fail=True)
        arch = toy_cifar_arch()
        first = cached_evaluate(arch, EvalBudget(), 7, backend.evaluate, cache)
        second = cached_evaluate(arch, EvalBudget(), 7, backend.evaluate, cache)
        assert first.status == ERROR and second.status == ERROR
        assert backend.calls == 2

    def test_corrupt_trailing_record_dropped(self, tmp_path):
        path = tmp_path / "c.jsonl"
        cache = FitnessCache(path)
        key = FitnessCache.key("abc", EvalBudget(), 7)
        cache.put(key, 0.5)
        with path.open("a") as fh:
            fh.write('{"hash": "def", "epo')  # interrupted write
        reloaded = FitnessCache(path)
        assert reloaded.get(key) == 0.5
        assert len(reloaded) == 1

    def test_corrupt_middle_record_raises(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text('garbage\n{"hash": "a", "epochs": 1, "dataset": "PARTIAL", "mode": "FITNESS", "seed": 7, "fitness": 0.5, "wall_time_s": 0}\n')
        with pytest.raises(ValueError):
            FitnessCache(path)


def _request(arch, epochs=1, mode="FITNESS"):
    from chainsearch.arch import architecture_to_obj, canonical_hash

    return EvaluationRequest(
        id=canonical_hash(arch)[:12] + "-000001",
        architecture=architecture_to_obj(arch),
        budget=EvalBudget(epochs=epochs, mode=mode),
        seed=7,
    )


class TestProtocol:
    def test_echo_stub_returns_ok(self):
        proc = TrainerProcess(stub_cmd("echo_trainer"))
        assert proc.hello["protocol_version"] == 1
        result = external_evaluate(_request(toy_cifar_arch()), proc, timeout_s=30)
        proc.close()
        assert result.status == OK
        assert result.fitness == 0.5
        assert result.metrics["epochs"] == 1

    def test_pipelined_requests_reply_in_order(self):
        proc = TrainerProcess(stub_cmd("echo_trainer"))
        first = external_evaluate(_request(toy_cifar_arch("a")), proc, timeout_s=30)
        second = external_evaluate(_request(arch_of(linear(4, 10))), proc, timeout_s=30)
        proc.close()
        assert first.ok and second.ok
        assert first.id != second.id

    def test_malformed_line_is_protocol_violation(self):
        proc = TrainerProcess(stub_cmd("malformed_trainer"))
        result = external_evaluate(_request(toy_cifar_arch()), proc, timeout_s=30)
        proc.close()
        assert result.status == ERROR
        assert result.error_kind == PROTOCOL_VIOLATION

    def test_crash_is_trainer_crash(self):
        proc = TrainerProcess(stub_cmd("crash_trainer"))
        result = external_evaluate(_request(toy_cifar_arch()), proc, timeout_s=30)
        assert result.status == ERROR
        assert result.error_kind == TRAINER_CRASH
        # the handle stays usable and fails fast afterwards
        again = external_evaluate(_request(toy_cifar_arch()), proc, timeout_s=30)
        proc.close()
        assert again.error_kind == TRAINER_CRASH

    def test_timeout(self):
        import sys

        slow = [sys.executable, "-c",
                "import json,sys,time;"
                "print(json.dumps({'type':'hello','protocol_version':1}),flush=True);"
                "sys.stdin.readline(); time.sleep(30)"]
        proc = TrainerProcess(slow)
        result = external_evaluate(_request(toy_cifar_arch()), proc, timeout_s=0.5)
        proc.close()
        assert result.status == ERROR
        assert result.error_kind == TIMEOUT

    def test_external_evaluator_maps_errors(self):
        evaluator = ExternalEvaluator(stub_cmd("crash_trainer"), EvalBudget(), seed=7, timeout_s=30)
        result = evaluator.evaluate(toy_cifar_arch())
        evaluator.close()
        assert result.status == ERROR and result.error_kind == TRAINER_CRASH

    def test_unique_request_ids(self):
        evaluator = ExternalEvaluator(stub_cmd("echo_trainer"), EvalBudget(), seed=7, timeout_s=30)
        ids = {evaluator._request_for(toy_cifar_arch()).id for _ in range(100)}
        evaluator.close()
        assert len(ids) == 100

    def test_worker_pool_evaluates_batch(self):
        evaluator = ExternalEvaluator(stub_cmd("echo_trainer"), EvalBudget(), seed=7, timeout_s=30, workers=2)
        archs = [toy_cifar_arch(), arch_of(linear(4, 10)), toy_cifar_arch("z"), arch_of(linear(8, 10))]
        results = evaluator.evaluate_many(archs)
        evaluator.close()
        assert len(results) == 4
        assert all(r.ok and r.fitness == 0.5 for r in results)
        assert len({r.id for r in results}) == 4
