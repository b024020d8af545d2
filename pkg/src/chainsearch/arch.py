"""Architecture data model: layers, description documents, shapes, parameters, hashing.

An :class:`Architecture` is an ordered sequence of atomic layers plus the input
tensor shape and class count.  Descriptions are stored as canonical JSON
documents (sorted keys, two-space indent) so that equal architectures always
serialize to identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from .registry import DEFAULT_REGISTRY, OpRegistry, UnknownOp

Shape = tuple[int, ...]  # (channels, height, width) while spatial, (features,) after FLATTEN

# Issue codes used in validation reports.
UNKNOWN_OP = "UnknownOp"
MISSING_COMPONENT = "MissingComponent"
INVALID_COMPONENT = "InvalidComponent"
CHANNEL_MISMATCH = "ChannelMismatch"
SPATIAL_COLLAPSE = "SpatialCollapse"
FLAT_INPUT = "FlatInput"
LINEAR_ON_SPATIAL = "LinearOnSpatial"
MISSING_CLASSIFIER_HEAD = "MissingClassifierHead"
EMPTY_ARCHITECTURE = "EmptyArchitecture"
BAD_INPUT_SHAPE = "BadInputShape"
RESIDUAL_ON_NON_CONV = "ResidualOnNonConv"


class ArchitectureError(Exception):
    """Base class for architecture construction/parsing failures."""


class MalformedDocument(ArchitectureError):
    pass


class MissingComponent(ArchitectureError):
    pass


class InvalidComponent(ArchitectureError):
    pass


class ShapeError(ArchitectureError):
    def __init__(self, code: str, layer_index: int, message: str):
        super().__init__(f"layer {layer_index}: {message}")
        self.code = code
        self.layer_index = layer_index


@dataclass(frozen=True)
class Layer:
    """One atomic operation with its component map.

    ``is_residual_block`` marks a convolution that materializes as a bottleneck
    residual block (1x1 reduce, 3x3 at the layer's stride, 1x1 restore, with a
    skip connection) instead of a plain convolution.
    """

    op: str
    components: dict[str, Any] = field(default_factory=dict)
    is_residual_block: bool = False

    def component(self, key: str) -> Any:
        try:
            return self.components[key]
        except KeyError:
            raise MissingComponent(f"{self.op} is missing component {key!r}") from None


@dataclass(frozen=True)
class Architecture:
    layers: tuple[Layer, ...]
    input_shape: tuple[int, int, int] = (3, 32, 32)
    num_classes: int = 10
    name: str = ""

    def __len__(self) -> int:
        return len(self.layers)


@dataclass(frozen=True)
class Issue:
    code: str
    layer_index: int | None
    message: str


@dataclass
class ValidationReport:
    issues: list[Issue] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def codes(self) -> list[str]:
        return [issue.code for issue in self.issues]

    def add(self, code: str, layer_index: int | None, message: str) -> None:
        self.issues.append(Issue(code, layer_index, message))


def _is_positive_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool) and value >= 1


def _is_non_negative_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool) and value >= 0


# key -> predicate on the value; keys absent from this table accept positive ints
_VALUE_CHECKS = {
    "padding": _is_non_negative_int,
    "bias_flag": lambda v: isinstance(v, bool),
    "dropout_p": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool) and 0.0 <= v <= 1.0,
}


def check_layer(layer: Layer, registry: OpRegistry = DEFAULT_REGISTRY) -> list[Issue]:
    """Static (shape-free) checks on a single layer."""
    issues: list[Issue] = []
    try:
        spec = registry.spec(layer.op)
    except UnknownOp as exc:
        return [Issue(UNKNOWN_OP, None, str(exc))]

    for key in sorted(spec.keys - layer.components.keys()):
        issues.append(Issue(MISSING_COMPONENT, None, f"{layer.op} is missing component {key!r}"))
    for key in sorted(layer.components.keys() - spec.keys):
        issues.append(Issue(INVALID_COMPONENT, None, f"{layer.op} does not accept component {key!r}"))
    for key in sorted(spec.keys & layer.components.keys()):
        value = layer.components[key]
        check = _VALUE_CHECKS.get(key, _is_positive_int)
        if not check(value):
            issues.append(Issue(INVALID_COMPONENT, None, f"{layer.op} component {key}={value!r} is invalid"))
    if layer.is_residual_block and layer.op != "CONV2D":
        issues.append(Issue(RESIDUAL_ON_NON_CONV, None, f"is_residual_block set on {layer.op}"))
    return issues


def _conv_side(side: int, kernel: int, stride: int, padding: int) -> int:
    return (side + 2 * padding - kernel) // stride + 1


def _layer_shape(layer: Layer, shape: Shape, index: int, registry: OpRegistry) -> Shape:
    """Output shape of ``layer`` applied to ``shape``; raises ShapeError on mismatch."""
    kind = registry.spec(layer.op).kind
    spatial = len(shape) == 3

    if kind in ("activation", "regularizer"):
        return shape

    if kind == "reshape":
        return (math.prod(shape),) if spatial else shape

    if kind == "linear":
        if spatial:
            raise ShapeError(
                LINEAR_ON_SPATIAL, index, f"LINEAR applied to unflattened input {shape}; insert FLATTEN"
            )
        if layer.component("in_features") != shape[0]:
            raise ShapeError(
                CHANNEL_MISMATCH,
                index,
                f"LINEAR expects {layer.component('in_features')} features, got {shape[0]}",
            )
        return (layer.component("out_features"),)

    # everything below needs a spatial input
    if not spatial:
        raise ShapeError(FLAT_INPUT, index, f"{layer.op} applied to flattened input {shape}")
    c, h, w = shape

    if kind == "norm":
        if layer.component("num_features") != c:
            raise ShapeError(
                CHANNEL_MISMATCH, index, f"{layer.op} expects {layer.component('num_features')} channels, got {c}"
            )
        return shape

    if kind == "adaptive_pool":
        out = layer.component("output_size")
        return (c, out, out)

    if kind == "pool":
        k, s, p = layer.component("kernel_size"), layer.component("stride"), layer.component("padding")
        oh, ow = _conv_side(h, k, s, p), _conv_side(w, k, s, p)
        if oh < 1 or ow < 1:
            raise ShapeError(SPATIAL_COLLAPSE, index, f"{layer.op} k={k} s={s} p={p} collapses {h}x{w}")
        return (c, oh, ow)

    if kind == "conv":
        cin, cout = layer.component("in_channels"), layer.component("out_channels")
        if cin != c:
            raise ShapeError(CHANNEL_MISMATCH, index, f"CONV2D expects {cin} input channels, got {c}")
        if layer.is_residual_block:
            # bottleneck template: spatial behaviour of its 3x3 stride conv (padding 1)
            s = layer.component("stride")
            oh, ow = _conv_side(h, 3, s, 1), _conv_side(w, 3, s, 1)
        else:
            k = layer.component("kernel_size")
            s = layer.component("stride")
            p = layer.component("padding")
            g = layer.component("groups")
            if cin % g != 0 or cout % g != 0:
                raise ShapeError(INVALID_COMPONENT, index, f"groups={g} does not divide {cin}/{cout}")
            oh, ow = _conv_side(h, k, s, p), _conv_side(w, k, s, p)
        if oh < 1 or ow < 1:
            raise ShapeError(SPATIAL_COLLAPSE, index, f"CONV2D collapses {h}x{w} to {oh}x{ow}")
        return (cout, oh, ow)

    raise ShapeError(UNKNOWN_OP, index, f"no shape rule for kind {kind!r}")  # pragma: no cover


def layer_output_shape(
    layer: Layer, shape: Shape, index: int = 0, registry: OpRegistry = DEFAULT_REGISTRY
) -> Shape:
    """Public single-layer shape rule; raises :class:`ShapeError` on mismatch."""
    return _layer_shape(layer, shape, index, registry)


def infer_shapes(arch: Architecture, registry: OpRegistry = DEFAULT_REGISTRY) -> list[Shape]:
    """Per-layer output shapes, propagated from ``arch.input_shape``."""
    shape: Shape = tuple(arch.input_shape)
    trace: list[Shape] = []
    for index, layer in enumerate(arch.layers):
        shape = _layer_shape(layer, shape, index, registry)
        trace.append(shape)
    return trace


def validate_architecture(arch: Architecture, registry: OpRegistry = DEFAULT_REGISTRY) -> ValidationReport:
    """Collect every violation; an empty report means the architecture is instantiable."""
    report = ValidationReport()
    if not arch.layers:
        report.add(EMPTY_ARCHITECTURE, None, "architecture has no layers")
        return report
    if len(arch.input_shape) != 3 or not all(_is_positive_int(d) for d in arch.input_shape):
        report.add(BAD_INPUT_SHAPE, None, f"input_shape {arch.input_shape!r} is not (channels, height, width)")
        return report

    static_ok = True
    for index, layer in enumerate(arch.layers):
        for issue in check_layer(layer, registry):
            report.add(issue.code, index, issue.message)
            static_ok = False

    head = arch.layers[-1]
    if head.op != "LINEAR" or head.components.get("out_features") != arch.num_classes:
        report.add(
            MISSING_CLASSIFIER_HEAD,
            len(arch.layers) - 1,
            f"last layer must be LINEAR with out_features={arch.num_classes}",
        )

    if static_ok:
        shape: Shape = tuple(arch.input_shape)
        for index, layer in enumerate(arch.layers):
            try:
                shape = _layer_shape(layer, shape, index, registry)
            except ShapeError as exc:
                report.add(exc.code, exc.layer_index, str(exc))
                break
    return report


def residual_block_layers(layer: Layer) -> list[Layer]:
    """Atomic layers of the bottleneck template a residual-marked convolution expands to.

    1x1 reduce to out/4, 3x3 at the layer's stride, 1x1 restore, BatchNorm after
    each conv, ReLU between them and after the skip-add; a 1x1 projection (plus
    norm) on the skip path when input and output disagree in channels or stride.
    """
    cin = layer.component("in_channels")
    cout = layer.component("out_channels")
    stride = layer.component("stride")
    width = max(1, cout // 4)

    def conv(ci: int, co: int, k: int, s: int, p: int) -> Layer:
        return Layer(
            "CONV2D",
            {
                "in_channels": ci,
                "out_channels": co,
                "kernel_size": k,
                "stride": s,
                "padding": p,
                "groups": 1,
                "bias_flag": False,
            },
        )

    atoms = [
        conv(cin, width, 1, 1, 0),
        Layer("BATCHNORM2D", {"num_features": width}),
        Layer("RELU"),
        conv(width, width, 3, stride, 1),
        Layer("BATCHNORM2D", {"num_features": width}),
        Layer("RELU"),
        conv(width, cout, 1, 1, 0),
        Layer("BATCHNORM2D", {"num_features": cout}),
    ]
    if cin != cout or stride != 1:
        atoms.append(conv(cin, cout, 1, stride, 0))
        atoms.append(Layer("BATCHNORM2D", {"num_features": cout}))
    atoms.append(Layer("RELU"))
    return atoms


def layer_param_count(layer: Layer, registry: OpRegistry = DEFAULT_REGISTRY) -> int:
    if layer.is_residual_block:
        return sum(layer_param_count(atom, registry) for atom in residual_block_layers(layer))
    kind = registry.spec(layer.op).kind
    if kind == "conv":
        cin, cout = layer.component("in_channels"), layer.component("out_channels")
        k, g = layer.component("kernel_size"), layer.component("groups")
        params = cin * cout * k * k // g
        if layer.component("bias_flag"):
            params += cout
        return params
    if kind == "linear":
        params = layer.component("in_features") * layer.component("out_features")
        if layer.component("bias_flag"):
            params += layer.component("out_features")
        return params
    if kind == "norm":
        return 2 * layer.component("num_features")
    return 0


def param_count(arch: Architecture, registry: OpRegistry = DEFAULT_REGISTRY) -> int:
    return sum(layer_param_count(layer, registry) for layer in arch.layers)


def _layer_payload(layer: Layer) -> dict[str, Any]:
    payload: dict[str, Any] = {"op": layer.op, "components": dict(layer.components)}
    if layer.is_residual_block:
        payload["residual"] = True
    return payload


def canonical_hash(arch: Architecture) -> str:
    """SHA-256 of the canonical compact serialization; the name is not part of the identity."""
    payload = {
        "input_shape": list(arch.input_shape),
        "num_classes": arch.num_classes,
        "layers": [_layer_payload(layer) for layer in arch.layers],
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def to_document(arch: Architecture) -> str:
    """Canonical description document: sorted keys, two-space indent, trailing newline."""
    payload = {
        "name": arch.name,
        "input_shape": list(arch.input_shape),
        "num_classes": arch.num_classes,
        "layers": [_layer_payload(layer) for layer in arch.layers],
    }
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def architecture_to_obj(arch: Architecture) -> dict[str, Any]:
    """Document content as a plain object (used when embedding in protocol messages)."""
    return json.loads(to_document(arch))


def _parse_layer(entry: Any, index: int, registry: OpRegistry) -> Layer:
    if not isinstance(entry, dict) or "op" not in entry:
        raise MalformedDocument(f"layer {index} is not an object with an 'op' field")
    op = entry["op"]
    if not isinstance(op, str):
        raise MalformedDocument(f"layer {index} op must be a string")
    components = entry.get("components", {})
    if not isinstance(components, dict):
        raise MalformedDocument(f"layer {index} components must be an object")
    residual = bool(entry.get("residual", False))
    layer = Layer(op=op, components=dict(components), is_residual_block=residual)
    issues = check_layer(layer, registry)
    if issues:
        first = issues[0]
        exc_type = {
            UNKNOWN_OP: UnknownOp,
            MISSING_COMPONENT: MissingComponent,
        }.get(first.code, InvalidComponent)
        raise exc_type(f"layer {index}: {first.message}")
    return layer


def parse_architecture(text: str, registry: OpRegistry = DEFAULT_REGISTRY) -> Architecture:
    """Parse a description document, preserving layer order; unknown ops are rejected."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"not valid JSON: {exc}") from exc
    return architecture_from_obj(doc, registry)


def architecture_from_obj(doc: Any, registry: OpRegistry = DEFAULT_REGISTRY) -> Architecture:
    if not isinstance(doc, dict):
        raise MalformedDocument("document root must be an object")
    for key in ("input_shape", "num_classes", "layers"):
        if key not in doc:
            raise MalformedDocument(f"document is missing {key!r}")
    shape = doc["input_shape"]
    if not (isinstance(shape, list) and len(shape) == 3 and all(_is_positive_int(d) for d in shape)):
        raise MalformedDocument(f"input_shape {shape!r} is not a list of three positive integers")
    if not _is_positive_int(doc["num_classes"]):
        raise MalformedDocument(f"num_classes {doc['num_classes']!r} must be a positive integer")
    entries = doc["layers"]
    if not isinstance(entries, list) or not entries:
        raise MalformedDocument("layers must be a non-empty list")
    layers = tuple(_parse_layer(entry, i, registry) for i, entry in enumerate(entries))
    name = doc.get("name", "")
    if not isinstance(name, str):
        raise MalformedDocument("name must be a string")
    return Architecture(
        layers=layers,
        input_shape=(shape[0], shape[1], shape[2]),
        num_classes=doc["num_classes"],
        name=name,
    )


def load_description(path: Path, registry: OpRegistry = DEFAULT_REGISTRY) -> Architecture:
    return parse_architecture(Path(path).read_text(encoding="utf-8"), registry)


def load_descriptions(directory: Path, registry: OpRegistry = DEFAULT_REGISTRY) -> list[Architecture]:
    """All ``*.json`` descriptions under ``directory``, sorted by file name."""
    paths = sorted(Path(directory).glob("*.json"))
    return [load_description(path, registry) for path in paths]


def bundled_descriptions_dir() -> Path:
    return Path(__file__).parent / "descriptions"


def rewire_layer(layer: Layer, shape: Shape) -> Layer:
    """Overwrite the layer's input-dimension components to accept ``shape``.

    Sampled output dimensions are kept; convolution groups are clamped to the
    largest value dividing both rewired input and kept output channels.
    """
    components = dict(layer.components)
    if layer.op == "CONV2D":
        components["in_channels"] = shape[0]
        g = components.get("groups", 1)
        components["groups"] = math.gcd(g, math.gcd(shape[0], components["out_channels"]))
    elif layer.op == "BATCHNORM2D":
        components["num_features"] = shape[0]
    elif layer.op == "LINEAR":
        components["in_features"] = math.prod(shape)
    else:
        return layer
    return replace(layer, components=components)


def classifier_head(shape: Shape, num_classes: int) -> list[Layer]:
    """Layers that turn ``shape`` into class logits: pool+flatten when spatial, then LINEAR."""
    layers: list[Layer] = []
    if len(shape) == 3:
        layers.append(Layer("ADAPTIVEAVGPOOL2D", {"output_size": 1}))
        layers.append(Layer("FLATTEN"))
        features = shape[0]
    else:
        features = shape[0]
    layers.append(
        Layer("LINEAR", {"in_features": features, "out_features": num_classes, "bias_flag": True})
    )
    return layers
