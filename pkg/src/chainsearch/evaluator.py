"""Fitness evaluation: deterministic surrogate, external-trainer protocol, cache.

The external trainer is a separate process speaking newline-delimited JSON over
stdin/stdout (UTF-8).  It announces itself with a hello line before the first
request; every request receives exactly one terminal result (OK or ERROR)
within the timeout.  Unknown fields in protocol messages are ignored.
"""

from __future__ import annotations

import json
import math
import queue
import shlex
import subprocess
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol, Sequence

from .arch import Architecture, architecture_to_obj, canonical_hash, param_count

PROTOCOL_VERSION = 1

PARTIAL = "PARTIAL"
ENTIRE = "ENTIRE"
FITNESS = "FITNESS"
FINAL_TRAIN = "FINAL_TRAIN"

OK = "OK"
ERROR = "ERROR"

# error kinds carried as the error_message prefix of ERROR results
PROTOCOL_VIOLATION = "ProtocolViolation"
TIMEOUT = "Timeout"
TRAINER_CRASH = "TrainerCrash"


@dataclass(frozen=True)
class EvalBudget:
    epochs: int = 1
    dataset_variant: str = PARTIAL
    mode: str = FITNESS

    def to_obj(self) -> dict[str, Any]:
        return {"epochs": self.epochs, "dataset_variant": self.dataset_variant, "mode": self.mode}


@dataclass(frozen=True)
class EvaluationRequest:
    id: str
    architecture: dict[str, Any]
    budget: EvalBudget
    seed: int

    def to_line(self) -> str:
        payload = {
            "type": "evaluate",
            "id": self.id,
            "architecture": self.architecture,
            "budget": self.budget.to_obj(),
            "seed": self.seed,
        }
        return json.dumps(payload, sort_keys=True) + "\n"


@dataclass
class EvaluationResult:
    id: str
    status: str
    fitness: float | None = None
    metrics: dict[str, Any] = field(default_factory=dict)
    error_message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == OK

    @property
    def error_kind(self) -> str:
        return self.error_message.split(":", 1)[0] if self.error_message else ""


def _error_result(request_id: str, kind: str, detail: str) -> EvaluationResult:
    return EvaluationResult(id=request_id, status=ERROR, error_message=f"{kind}: {detail}")


def surrogate_evaluate(arch: Architecture) -> float:
    """Deterministic stand-in score in [0, 1].

    Rewards depth near 32 layers, operation diversity and moderate parameter
    count.  Makes search dynamics non-trivial without training anything; does
    NOT approximate real accuracy.
    """
    depth = len(arch.layers)
    diversity = len({layer.op for layer in arch.layers})
    params = param_count(arch)
    depth_term = 1.0 - abs(depth - 32) / max(depth, 32)
    diversity_term = min(diversity, 10) / 10.0
    param_term = min(math.log10(params + 1), 8.0) / 8.0
    return 0.5 * depth_term + 0.3 * diversity_term + 0.2 * param_term


class Evaluator(Protocol):
    def evaluate(self, arch: Architecture) -> EvaluationResult: ...

    def evaluate_many(self, archs: Sequence[Architecture]) -> list[EvaluationResult]: ...


class SurrogateEvaluator:
    name = "surrogate"

    def evaluate(self, arch: Architecture) -> EvaluationResult:
        return EvaluationResult(id=canonical_hash(arch)[:12], status=OK, fitness=surrogate_evaluate(arch))

    def evaluate_many(self, archs: Sequence[Architecture]) -> list[EvaluationResult]:
        return [self.evaluate(arch) for arch in archs]


class FitnessCache:
    """Append-only record file of evaluation results, keyed by content hash.

    Records are JSON lines with fields (hash, epochs, dataset, mode, seed,
    fitness, wall_time_s).  A corrupt trailing record (interrupted write) is
    dropped on load; corruption elsewhere raises.
    """

    def __init__(self, path: Path | None = None):
        self.path = Path(path) if path is not None else None
        self._records: dict[tuple, float] = {}
        if self.path is not None and self.path.exists():
            self._load()

    @staticmethod
    def key(arch_hash: str, budget: EvalBudget, seed: int) -> tuple:
        return (arch_hash, budget.epochs, budget.dataset_variant, budget.mode, seed)

    def _load(self) -> None:
        lines = self.path.read_text(encoding="utf-8").splitlines()
        for i, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                key = (rec["hash"], rec["epochs"], rec["dataset"], rec["mode"], rec["seed"])
                self._records[key] = float(rec["fitness"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                if i == len(lines) - 1:
                    break  # interrupted final write
                raise ValueError(f"corrupt cache record at line {i + 1} of {self.path}") from exc

    def get(self, key: tuple) -> float | None:
        return self._records.get(key)

    def put(self, key: tuple, fitness: float, wall_time_s: float = 0.0) -> None:
        self._records[key] = fitness
        if self.path is None:
            return
        rec = {
            "hash": key[0],
            "epochs": key[1],
            "dataset": key[2],
            "mode": key[3],
            "seed": key[4],
            "fitness": fitness,
            "wall_time_s": wall_time_s,
        }
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def __len__(self) -> int:
        return len(self._records)


def cached_evaluate(
    arch: Architecture,
    budget: EvalBudget,
    seed: int,
    backend: Callable[[Architecture], EvaluationResult],
    cache: FitnessCache,
) -> EvaluationResult:
    """Cache front-end: hit short-circuits the backend; ERROR results are never cached."""
    key = FitnessCache.key(canonical_hash(arch), budget, seed)
    hit = cache.get(key)
    if hit is not None:
        return EvaluationResult(id=key[0][:12], status=OK, fitness=hit, metrics={"cache_hit": True})
    started = time.perf_counter()
    result = backend(arch)
    if result.ok and result.fitness is not None:
        cache.put(key, result.fitness, wall_time_s=time.perf_counter() - started)
    return result


class CachedEvaluator:
    """Wraps a backend evaluator with a :class:`FitnessCache`; counts hits and backend calls."""

    def __init__(self, backend, cache: FitnessCache, budget: EvalBudget, seed: int):
        self.backend = backend
        self.cache = cache
        self.budget = budget
        self.seed = seed
        self.hits = 0
        self.backend_calls = 0

    def _backend(self, arch: Architecture) -> EvaluationResult:
        self.backend_calls += 1
        return self.backend.evaluate(arch)

    def evaluate(self, arch: Architecture) -> EvaluationResult:
        result = cached_evaluate(arch, self.budget, self.seed, self._backend, self.cache)
        if result.metrics.get("cache_hit"):
            self.hits += 1
        return result

    def evaluate_many(self, archs: Sequence[Architecture]) -> list[EvaluationResult]:
        results: list[EvaluationResult | None] = [None] * len(archs)
        misses: list[int] = []
        for i, arch in enumerate(archs):
            key = FitnessCache.key(canonical_hash(arch), self.budget, self.seed)
            hit = self.cache.get(key)
            if hit is not None:
                self.hits += 1
                results[i] = EvaluationResult(id=key[0][:12], status=OK, fitness=hit, metrics={"cache_hit": True})
            else:
                misses.append(i)
        if misses:
            backend_results = self.backend.evaluate_many([archs[i] for i in misses])
            self.backend_calls += len(misses)
            for i, result in zip(misses, backend_results):
                if result.ok and result.fitness is not None:
                    key = FitnessCache.key(canonical_hash(archs[i]), self.budget, self.seed)
                    # evaluate_many can resolve duplicate archs within one batch: first wins
                    if self.cache.get(key) is None:
                        self.cache.put(key, result.fitness)
                results[i] = result
        return results  # type: ignore[return-value]


class TrainerProcess:
    """One external trainer subprocess; serialized channel, one in-flight request."""

    def __init__(self, cmd: str | Sequence[str], hello_timeout_s: float = 120.0):
        args = shlex.split(cmd) if isinstance(cmd, str) else list(cmd)
        self._proc = subprocess.Popen(
            args,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._lines: queue.Queue = queue.Queue()
        self._eof = False
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        self._lock = threading.Lock()
        self.hello: dict[str, Any] = {}
        self._read_hello(hello_timeout_s)

    _EOF = object()

    def _pump(self) -> None:
        assert self._proc.stdout is not None
        for line in self._proc.stdout:
            self._lines.put(line)
        self._eof = True
        self._lines.put(self._EOF)

    def _next_line(self, deadline: float):
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise queue.Empty
        return self._lines.get(timeout=remaining)

    def _read_hello(self, timeout_s: float) -> None:
        deadline = time.monotonic() + timeout_s
        try:
            line = self._next_line(deadline)
        except queue.Empty:
            raise TimeoutError("no hello line from trainer") from None
        if line is self._EOF:
            raise RuntimeError("trainer exited before hello")
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            raise RuntimeError(f"malformed hello line: {line!r}") from None
        if obj.get("type") != "hello":
            raise RuntimeError(f"expected hello, got {obj.get('type')!r}")
        self.hello = obj

    @property
    def alive(self) -> bool:
        return self._proc.poll() is None

    def request(self, req: EvaluationRequest, timeout_s: float) -> EvaluationResult:
        with self._lock:
            if self._eof or not self.alive:
                return _error_result(req.id, TRAINER_CRASH, "trainer process is not running")
            try:
                assert self._proc.stdin is not None
                self._proc.stdin.write(req.to_line())
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                return _error_result(req.id, TRAINER_CRASH, f"write failed: {exc}")
            deadline = time.monotonic() + timeout_s
            while True:
                try:
                    line = self._next_line(deadline)
                except queue.Empty:
                    return _error_result(req.id, TIMEOUT, f"no result for {req.id} within {timeout_s:.0f}s")
                if line is self._EOF:
                    return _error_result(req.id, TRAINER_CRASH, "trainer exited before replying")
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError:
                    return _error_result(req.id, PROTOCOL_VIOLATION, f"malformed line: {line.strip()!r}")
                if not isinstance(obj, dict) or obj.get("type") != "result":
                    continue  # hello repeats / log lines are ignored
                if obj.get("id") != req.id:
                    continue
                return self._parse_result(obj, req.id)

    @staticmethod
    def _parse_result(obj: dict[str, Any], request_id: str) -> EvaluationResult:
        status = obj.get("status")
        if status == OK:
            fitness = obj.get("fitness")
            if not isinstance(fitness, (int, float)) or not 0.0 <= float(fitness) <= 1.0:
                return _error_result(request_id, PROTOCOL_VIOLATION, f"OK result with fitness {fitness!r}")
            return EvaluationResult(
                id=request_id, status=OK, fitness=float(fitness), metrics=dict(obj.get("metrics") or {})
            )
        if status == ERROR:
            return EvaluationResult(
                id=request_id,
                status=ERROR,
                metrics=dict(obj.get("metrics") or {}),
                error_message=str(obj.get("error_message", "trainer reported an error")),
            )
        return _error_result(request_id, PROTOCOL_VIOLATION, f"result with status {status!r}")

    def close(self) -> None:
        try:
            if self._proc.stdin is not None:
                self._proc.stdin.close()
        except OSError:
            pass
        try:
            self._proc.wait(timeout=1)  # well-behaved trainers exit on stdin EOF
        except subprocess.TimeoutExpired:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()


def external_evaluate(request: EvaluationRequest, endpoint: TrainerProcess, timeout_s: float = 3600.0) -> EvaluationResult:
    """Send one request to a trainer process and wait for its matching result."""
    return endpoint.request(request, timeout_s)


class ExternalEvaluator:
    """Evaluator backed by one or more trainer subprocesses (one per worker).

    A process that crashes stays down for the rest of the run; its requests
    return TrainerCrash errors which callers map to fitness 0.
    """

    def __init__(
        self,
        cmd: str | Sequence[str],
        budget: EvalBudget,
        seed: int,
        timeout_s: float = 3600.0,
        final_timeout_s: float = 48 * 3600.0,
        workers: int = 1,
    ):
        self.cmd = cmd
        self.budget = budget
        self.seed = seed
        self.timeout_s = timeout_s
        self.final_timeout_s = final_timeout_s
        self.workers = max(1, workers)
        self._procs: list[TrainerProcess | None] = [None] * self.workers
        self._spawn_failed = [False] * self.workers
        self._counter = 0
        self._counter_lock = threading.Lock()

    def _proc_for(self, worker: int) -> TrainerProcess | None:
        if self._procs[worker] is None and not self._spawn_failed[worker]:
            try:
                self._procs[worker] = TrainerProcess(self.cmd)
            except (OSError, RuntimeError, TimeoutError):
                self._spawn_failed[worker] = True
        return self._procs[worker]

    def _next_id(self, arch_hash: str) -> str:
        with self._counter_lock:
            self._counter += 1
            return f"{arch_hash[:12]}-{self._counter:06d}"

    def _request_for(self, arch: Architecture) -> EvaluationRequest:
        return EvaluationRequest(
            id=self._next_id(canonical_hash(arch)),
            architecture=architecture_to_obj(arch),
            budget=self.budget,
            seed=self.seed,
        )

    def _timeout_for(self) -> float:
        return self.final_timeout_s if self.budget.mode == FINAL_TRAIN else self.timeout_s

    def evaluate(self, arch: Architecture, worker: int = 0) -> EvaluationResult:
        request = self._request_for(arch)
        proc = self._proc_for(worker)
        if proc is None:
            return _error_result(request.id, TRAINER_CRASH, "could not start trainer process")
        return external_evaluate(request, proc, self._timeout_for())

    def evaluate_many(self, archs: Sequence[Architecture]) -> list[EvaluationResult]:
        if self.workers == 1 or len(archs) <= 1:
            return [self.evaluate(arch) for arch in archs]
        results: list[EvaluationResult | None] = [None] * len(archs)
        tasks: queue.Queue = queue.Queue()
        for item in enumerate(archs):
            tasks.put(item)

        def drain(worker: int) -> None:
            while True:
                try:
                    i, arch = tasks.get_nowait()
                except queue.Empty:
                    return
                results[i] = self.evaluate(arch, worker=worker)

        threads = [threading.Thread(target=drain, args=(w,)) for w in range(self.workers)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        return results  # type: ignore[return-value]

    def close(self) -> None:
        for proc in self._procs:
            if proc is not None:
                proc.close()
