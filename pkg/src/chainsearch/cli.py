"""Command-line entry points: build-space, search, train-best, export-chain."""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .arch import (
    bundled_descriptions_dir,
    canonical_hash,
    load_description,
    load_descriptions,
    parse_architecture,
    to_document,
    validate_architecture,
)
from .chain import build_chain, export_dot
from .evaluator import (
    CachedEvaluator,
    EvalBudget,
    ExternalEvaluator,
    FINAL_TRAIN,
    FITNESS,
    FitnessCache,
    SurrogateEvaluator,
)
from .search import SearchConfig, SearchResult, run_search

_CONFIG_FLAGS = {
    "generations": "generations",
    "individuals": "individuals",
    "elitism": "elitism_rate",
    "residual_prob": "residual_prob",
    "max_layers": "max_layers",
    "seed": "master_seed",
    "dataset": "dataset_variant",
    "partial_epochs": "partial_epochs",
    "workers": "workers",
}


def _now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _resolve_config(args) -> SearchConfig:
    """Precedence: flags > config file > built-in defaults."""
    values: dict = {}
    if getattr(args, "config", None):
        values.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
    for flag, field_name in _CONFIG_FLAGS.items():
        flag_value = getattr(args, flag, None)
        if flag_value is not None:
            values[field_name] = flag_value
    if "dataset_variant" in values:
        values["dataset_variant"] = values["dataset_variant"].upper()
    if "input_shape" in values:
        values["input_shape"] = tuple(values["input_shape"])
    return SearchConfig(**values)


def _load_descriptions(args) -> list:
    directory = Path(args.descriptions) if args.descriptions else bundled_descriptions_dir()
    if not directory.is_dir():
        raise FileNotFoundError(f"description directory {directory} does not exist")
    descriptions = load_descriptions(directory)
    if not descriptions:
        raise FileNotFoundError(f"no descriptions found in {directory}")
    invalid = [
        f"{arch.name or '?'}: {report.codes()}"
        for arch in descriptions
        if not (report := validate_architecture(arch)).ok
    ]
    if invalid:
        raise ValueError("invalid descriptions: " + "; ".join(invalid))
    return descriptions


def _run_directory(args, config: SearchConfig) -> Path:
    if args.out:
        run_dir = Path(args.out)
        if run_dir.exists() and any(run_dir.iterdir()):
            raise FileExistsError(f"output directory {run_dir} already exists and is not empty")
    else:
        cfg_hash = hashlib.sha256(json.dumps(asdict(config), sort_keys=True).encode()).hexdigest()[:8]
        stamp = time.strftime("%Y%m%d-%H%M%S")
        run_dir = Path("runs") / f"{stamp}-{cfg_hash}"
        suffix = 0
        while run_dir.exists():
            suffix += 1
            run_dir = Path("runs") / f"{stamp}-{cfg_hash}-{suffix}"
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def _build_evaluator(args, config: SearchConfig, budget: EvalBudget, cache_path: Path):
    if args.evaluator == "external":
        if not args.trainer_cmd:
            raise ValueError("--trainer-cmd is required with --evaluator external")
        backend = ExternalEvaluator(
            args.trainer_cmd,
            budget,
            seed=config.master_seed,
            timeout_s=args.timeout,
            workers=config.workers,
        )
    else:
        backend = SurrogateEvaluator()
    cache = FitnessCache(Path(args.cache) if args.cache else cache_path)
    return CachedEvaluator(backend, cache, budget, seed=config.master_seed)


def _write_manifest(run_dir: Path, config: SearchConfig, descriptions) -> None:
    manifest = {
        "run_id": run_dir.name,
        "tool_version": __version__,
        "started_at": _now(),
        "config": asdict(config),
        "descriptions": [
            {"name": arch.name, "hash": canonical_hash(arch)} for arch in descriptions
        ],
    }
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _fmt_float(x: float) -> str:
    return repr(float(x))


def _write_history(run_dir: Path, result: SearchResult) -> None:
    lines = ["generation,best_fitness,mean_fitness,n_cache_hits,wall_time_s"]
    for rec in result.history:
        lines.append(
            f"{rec.generation},{_fmt_float(rec.best_fitness)},{_fmt_float(rec.mean_fitness)},"
            f"{rec.n_cache_hits},{rec.wall_time_s:.3f}"
        )
    (run_dir / "history.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    gen_dir = run_dir / "generations"
    gen_dir.mkdir(exist_ok=True)

    def listing(generation: int, summaries) -> None:
        doc = {
            "generation": generation,
            "individuals": [
                {
                    "hash": s.id,
                    "fitness": s.fitness,
                    "origin": s.origin,
                    "evaluation_failed": s.evaluation_failed,
                }
                for s in summaries
            ],
        }
        path = gen_dir / f"gen_{generation:03d}.json"
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    listing(0, result.generation_zero)
    for rec in result.history:
        listing(rec.generation, rec.individuals)


def cmd_build_space(args) -> int:
    try:
        descriptions = _load_descriptions(args)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    config = _resolve_config(args)
    out_dir = Path(args.out) if args.out else Path("runs") / f"space-{time.strftime('%Y%m%d-%H%M%S')}"
    out_dir.mkdir(parents=True, exist_ok=True)
    budget = EvalBudget(epochs=config.partial_epochs, dataset_variant=config.dataset_variant, mode=FITNESS)
    evaluator = _build_evaluator(args, config, budget, out_dir / "fitness_cache.jsonl")

    started = time.perf_counter()
    rows = []
    for arch in descriptions:
        t0 = time.perf_counter()
        result = evaluator.evaluate(arch)
        fitness = result.fitness if result.ok and result.fitness is not None else 0.0
        rows.append((arch.name, fitness, time.perf_counter() - t0))
    elapsed = time.perf_counter() - started

    lines = ["model,fitness,wall_time_s"]
    for name, fitness, wall in rows:
        lines.append(f"{name},{_fmt_float(fitness)},{wall:.3f}")
    (out_dir / "search_space.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"evaluated {len(rows)} descriptions in {elapsed:.1f}s "
          f"({elapsed / 86400:.6f} days); table: {out_dir / 'search_space.csv'}")
    _close_backend(evaluator)
    return 0


def _close_backend(evaluator) -> None:
    close = getattr(evaluator.backend, "close", None)
    if close is not None:
        close()


def cmd_search(args) -> int:
    try:
        descriptions = _load_descriptions(args)
        config = _resolve_config(args)
        run_dir = _run_directory(args, config)
    except (FileNotFoundError, FileExistsError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    budget = EvalBudget(epochs=config.partial_epochs, dataset_variant=config.dataset_variant, mode=FITNESS)
    try:
        evaluator = _build_evaluator(args, config, budget, run_dir / "fitness_cache.jsonl")
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    _write_manifest(run_dir, config, descriptions)
    started = time.perf_counter()
    result = run_search(config, descriptions, evaluator)
    elapsed = time.perf_counter() - started
    _close_backend(evaluator)

    _write_history(run_dir, result)
    (run_dir / "best_architecture.json").write_text(to_document(result.best.architecture), encoding="utf-8")
    (run_dir / "best_chain.dot").write_text(export_dot(result.best.chain), encoding="utf-8")
    summary = {
        "finished_at": _now(),
        "total_wall_time_s": round(elapsed, 3),
        "best_hash": result.best.id,
        "best_fitness": result.best.fitness,
        "best_layers": len(result.best.architecture.layers),
    }
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    expected = ["manifest.json", "history.csv", "best_architecture.json", "best_chain.dot", "summary.json"]
    if not all((run_dir / name).exists() for name in expected):
        print("error: run directory is incomplete", file=sys.stderr)
        return 1
    print(f"search finished in {elapsed:.1f}s; best fitness {result.best.fitness:.4f}; run dir {run_dir}")
    return 0


def cmd_train_best(args) -> int:
    run_dir = Path(args.run)
    best_path = run_dir / "best_architecture.json"
    if not best_path.exists():
        print(f"error: {best_path} not found (is {run_dir} a completed run directory?)", file=sys.stderr)
        return 1
    arch = parse_architecture(best_path.read_text(encoding="utf-8"))
    report = validate_architecture(arch)
    if not report.ok:
        print(f"error: best architecture does not validate: {report.codes()}", file=sys.stderr)
        return 1
    if not args.trainer_cmd:
        print("error: --trainer-cmd is required for final training", file=sys.stderr)
        return 1

    budget = EvalBudget(epochs=args.final_epochs, dataset_variant=args.dataset.upper(), mode=FINAL_TRAIN)
    evaluator = ExternalEvaluator(
        args.trainer_cmd, budget, seed=args.seed if args.seed is not None else 0,
        timeout_s=args.timeout, final_timeout_s=args.timeout,
    )
    result = evaluator.evaluate(arch)
    evaluator.close()
    if not result.ok:
        print(f"error: final training failed: {result.error_message}", file=sys.stderr)
        return 1

    test_accuracy = result.metrics.get("test_accuracy")
    payload = {
        "finished_at": _now(),
        "epochs": args.final_epochs,
        "dataset_variant": budget.dataset_variant,
        "validation_fitness": result.fitness,
        "metrics": result.metrics,
    }
    if test_accuracy is not None:
        payload["test_accuracy"] = test_accuracy
        payload["test_error_pct"] = round((1.0 - float(test_accuracy)) * 100.0, 2)
    out_path = run_dir / "final_training.json"
    out_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if test_accuracy is not None:
        print(f"final model test error {payload['test_error_pct']:.2f}% (accuracy {float(test_accuracy):.4f})")
    else:
        print(f"final training done, validation fitness {result.fitness}")
    return 0


def cmd_export_chain(args) -> int:
    directory = Path(args.descriptions) if args.descriptions else bundled_descriptions_dir()
    candidates = {path.stem: path for path in sorted(directory.glob("*.json"))}
    if args.model not in candidates:
        print(f"error: unknown model {args.model!r}; available: {', '.join(sorted(candidates))}", file=sys.stderr)
        return 1
    arch = load_description(candidates[args.model])
    dot = export_dot(build_chain(arch))
    out_path = Path(args.out) if args.out else Path(f"{args.model}.dot")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(dot, encoding="utf-8")
    print(f"wrote {out_path}")
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--descriptions", help="directory of architecture description files")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--cache", help="fitness cache file (shared across runs when given)")
    parser.add_argument("--evaluator", choices=["surrogate", "external"], default="surrogate")
    parser.add_argument("--trainer-cmd", dest="trainer_cmd", help="command line of the external trainer")
    parser.add_argument("--timeout", type=float, default=3600.0, help="per-request trainer timeout (s)")
    parser.add_argument("--config", help="JSON file with SearchConfig fields")
    parser.add_argument("--generations", type=int)
    parser.add_argument("--individuals", type=int)
    parser.add_argument("--elitism", type=float)
    parser.add_argument("--residual-prob", dest="residual_prob", type=float)
    parser.add_argument("--max-layers", dest="max_layers", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--dataset", choices=["partial", "entire"])
    parser.add_argument("--partial-epochs", dest="partial_epochs", type=int)
    parser.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chainsearch",
        description="Evolutionary CNN architecture search over layer-transition chains",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-space", help="evaluate all descriptions and report the fitness table")
    _add_common(p)
    p.set_defaults(func=cmd_build_space)

    p = sub.add_parser("search", help="run the evolutionary architecture search")
    _add_common(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("train-best", help="final from-scratch training of a run's best architecture")
    p.add_argument("--run", required=True, help="completed run directory")
    p.add_argument("--trainer-cmd", dest="trainer_cmd", help="command line of the external trainer")
    p.add_argument("--final-epochs", dest="final_epochs", type=int, default=100)
    p.add_argument("--dataset", choices=["partial", "entire"], default="entire")
    p.add_argument("--seed", type=int)
    p.add_argument("--timeout", type=float, default=48 * 3600.0)
    p.set_defaults(func=cmd_train_best)

    p = sub.add_parser("export-chain", help="export a model's transition chain as DOT text")
    p.add_argument("model", help="description name, e.g. vgg16")
    p.add_argument("--descriptions", help="directory of architecture description files")
    p.add_argument("--out", help="output DOT file (default: <model>.dot)")
    p.set_defaults(func=cmd_export_chain)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
