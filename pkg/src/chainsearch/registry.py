"""Operation registry: the closed set of atomic layer types and their component keys.

The default registry ships as ``data/ops.json`` and was derived from the atomic
operations observed in the bundled reference models.  It is data-driven: a new
operation can be added by extending the JSON file with a name, a ``kind`` (which
selects the shape/parameter semantics) and its component key set, without code
changes for parameter-free kinds such as activations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

# Virtual chain endpoints; never valid inside an architecture's layer list.
START = "START"
OUTPUT = "OUTPUT"

# Kinds understood by shape inference and parameter counting.
KINDS = frozenset(
    {"conv", "norm", "activation", "pool", "adaptive_pool", "linear", "regularizer", "reshape"}
)

_DATA_PATH = Path(__file__).parent / "data" / "ops.json"


class UnknownOp(ValueError):
    """Raised when an operation name is not present in the registry."""


@dataclass(frozen=True)
class OpSpec:
    name: str
    kind: str
    keys: frozenset[str]


class OpRegistry:
    """Immutable mapping of op name to :class:`OpSpec`."""

    def __init__(self, specs: dict[str, OpSpec]):
        self._specs = dict(specs)

    @classmethod
    def from_json(cls, path: Path) -> "OpRegistry":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        specs = {}
        for name, entry in raw.items():
            kind = entry["kind"]
            if kind not in KINDS:
                raise ValueError(f"unknown op kind {kind!r} for {name!r}")
            specs[name] = OpSpec(name=name, kind=kind, keys=frozenset(entry["keys"]))
        return cls(specs)

    def __contains__(self, name: str) -> bool:
        return name in self._specs

    def __len__(self) -> int:
        return len(self._specs)

    def names(self) -> list[str]:
        return sorted(self._specs)

    def spec(self, name: str) -> OpSpec:
        try:
            return self._specs[name]
        except KeyError:
            raise UnknownOp(f"operation {name!r} is not in the registry") from None


DEFAULT_REGISTRY = OpRegistry.from_json(_DATA_PATH)
