"""Protocol server: newline-delimited JSON over stdin/stdout.

Announces a hello line, then answers each evaluate request with exactly one
result.  Per-request failures (unknown op, shape errors, dataset problems)
yield an ERROR result and the process stays alive.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import PROTOCOL_VERSION, __version__
from .dataset import DatasetError, fetch_cifar10, load_cifar10, make_split
from .model_builder import BuildError, build_model
from .train import TrainOptions, train_model

FINAL_TRAIN = "FINAL_TRAIN"


def _emit(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True), flush=True)


def _error(request_id, message: str) -> None:
    _emit({"type": "result", "id": request_id, "status": "ERROR", "error_message": message})


class Server:
    def __init__(self, data_dir: Path, opts: TrainOptions, download: bool = False):
        self.data_dir = data_dir
        self.opts = opts
        self.download = download
        self._data = None

    def _dataset(self):
        if self._data is None:
            if self.download:
                fetch_cifar10(self.data_dir)
            self._data = load_cifar10(self.data_dir)
        return self._data

    def handle(self, request: dict) -> None:
        request_id = request.get("id")
        try:
            document = request["architecture"]
            budget = request["budget"]
            seed = int(request.get("seed", 0))
            epochs = int(budget["epochs"])
            variant = budget["dataset_variant"]
            mode = budget.get("mode", "FITNESS")
        except (KeyError, TypeError, ValueError) as exc:
            _error(request_id, f"bad request: {exc}")
            return
        try:
            model = build_model(document)
            split = make_split(self._dataset(), variant, seed)
            metrics = train_model(
                model, split, document, epochs, seed, self.opts, cosine=(mode == FINAL_TRAIN)
            )
        except (BuildError, DatasetError) as exc:
            _error(request_id, str(exc))
            return
        except Exception as exc:  # shape/op failures must never kill the process
            _error(request_id, f"model execution failed: {type(exc).__name__}: {exc}")
            return
        _emit(
            {
                "type": "result",
                "id": request_id,
                "status": "OK",
                "fitness": metrics["validation_accuracy"],
                "metrics": metrics,
            }
        )

    def run(self) -> int:
        _emit(
            {
                "type": "hello",
                "protocol_version": PROTOCOL_VERSION,
                "trainer": "cifar-trainer",
                "version": __version__,
                "device": self.opts.device,
            }
        )
        for line in sys.stdin:
            if not line.strip():
                continue
            try:
                request = json.loads(line)
            except json.JSONDecodeError as exc:
                _error(None, f"unreadable request line: {exc}")
                continue
            if request.get("type") != "evaluate":
                continue
            self.handle(request)
        return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="cifar-trainer", description=__doc__)
    parser.add_argument("--data-dir", default="data", help="directory holding cifar-10-batches-py")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--download", action="store_true", help="fetch CIFAR-10 into --data-dir if missing")
    parser.add_argument("--lr", type=float, default=0.01)
    parser.add_argument("--momentum", type=float, default=0.9)
    parser.add_argument("--batch-size", type=int, default=96)
    parser.add_argument(
        "--deterministic", action=argparse.BooleanOptionalAction, default=True,
        help="seed every request for repeatable fitness (default on)",
    )
    args = parser.parse_args(argv)
    opts = TrainOptions(
        lr=args.lr,
        momentum=args.momentum,
        batch_size=args.batch_size,
        device=args.device,
        deterministic=args.deterministic,
    )
    return Server(Path(args.data_dir), opts, download=args.download).run()


if __name__ == "__main__":
    sys.exit(main())
