#!/usr/bin/env python3
"""Author the bundled seed descriptions from torchvision's reference models.

Offline tool: the generated JSON documents are checked into
``src/chainsearch/descriptions/`` and the engine never imports torchvision.

Each model is linearized along a canonical path: at every branching block the
deepest branch is followed (ties broken by definition order), skip/projection
shortcuts are dropped, and functional pieces of the reference forwards
(ReLU inside GoogLeNet's conv blocks, global average pooling, flatten) are
inserted explicitly.  Input dimensions are then rewired along the shape walk
so every description validates as a sequential network at its native
(3, 224, 224) input.  Pooling ceil_mode is dropped (floor semantics
throughout), and SqueezeNet's convolutional classifier is authored as the
equivalent pool+flatten+linear head, which leaves its parameter count
unchanged.  Branchy families (DenseNet concatenations, Inception cells,
ShuffleNet splits) therefore keep their layer-type statistics but not their
original parameter counts; purely sequential families (AlexNet, VGG) match
the reference models parameter-for-parameter.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import torch.nn as nn
import torchvision.models as tvm
from torchvision.models.densenet import _DenseBlock, _DenseLayer, _Transition
from torchvision.models.googlenet import BasicConv2d, Inception, InceptionAux
from torchvision.models.mnasnet import _InvertedResidual as MnasInvertedResidual
from torchvision.models.mobilenetv2 import InvertedResidual as MobileInvertedResidual
from torchvision.models.resnet import BasicBlock, Bottleneck
from torchvision.models.shufflenetv2 import InvertedResidual as ShuffleInvertedResidual
from torchvision.models.squeezenet import Fire

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from chainsearch.arch import (  # noqa: E402
    Architecture,
    Layer,
    rewire_layer,
    layer_output_shape,
    to_document,
    validate_architecture,
)

INPUT_SHAPE = (3, 224, 224)
NUM_CLASSES = 1000

MODEL_NAMES = [
    "alexnet",
    "densenet121",
    "densenet161",
    "densenet169",
    "densenet201",
    "googlenet",
    "mnasnet0_5",
    "mnasnet0_75",
    "mnasnet1_0",
    "mnasnet1_3",
    "mobilenet_v2",
    "resnet18",
    "resnet34",
    "resnet50",
    "resnet101",
    "resnet152",
    "resnext50_32x4d",
    "resnext101_32x8d",
    "shufflenet_v2_x0_5",
    "shufflenet_v2_x1_0",
    "shufflenet_v2_x1_5",
    "shufflenet_v2_x2_0",
    "squeezenet1_0",
    "squeezenet1_1",
    "vgg11",
    "vgg11_bn",
    "vgg13",
    "vgg13_bn",
    "vgg16",
    "vgg16_bn",
    "vgg19",
    "vgg19_bn",
    "wide_resnet50_2",
    "wide_resnet101_2",
]


def _square(value) -> int:
    if isinstance(value, tuple):
        assert value[0] == value[1], f"non-square {value}"
        return int(value[0])
    return int(value)


RELU = Layer("RELU")
FLATTEN = Layer("FLATTEN")


def GLOBAL_POOL() -> Layer:
    return Layer("ADAPTIVEAVGPOOL2D", {"output_size": 1})


def map_leaf(module: nn.Module) -> list[Layer]:
    if isinstance(module, nn.Conv2d):
        assert _square(module.dilation) == 1, "dilated convolutions are not in the registry"
        return [
            Layer(
                "CONV2D",
                {
                    "in_channels": module.in_channels,
                    "out_channels": module.out_channels,
                    "kernel_size": _square(module.kernel_size),
                    "stride": _square(module.stride),
                    "padding": _square(module.padding),
                    "groups": module.groups,
                    "bias_flag": module.bias is not None,
                },
            )
        ]
    if isinstance(module, nn.BatchNorm2d):
        return [Layer("BATCHNORM2D", {"num_features": module.num_features})]
    if isinstance(module, nn.ReLU):
        return [RELU]
    if isinstance(module, nn.ReLU6):
        return [Layer("RELU6")]
    if isinstance(module, nn.MaxPool2d):
        return [
            Layer(
                "MAXPOOL2D",
                {
                    "kernel_size": _square(module.kernel_size),
                    "stride": _square(module.stride),
                    "padding": _square(module.padding),
                },
            )
        ]
    if isinstance(module, nn.AvgPool2d):
        return [
            Layer(
                "AVGPOOL2D",
                {
                    "kernel_size": _square(module.kernel_size),
                    "stride": _square(module.stride),
                    "padding": _square(module.padding),
                },
            )
        ]
    if isinstance(module, nn.AdaptiveAvgPool2d):
        return [Layer("ADAPTIVEAVGPOOL2D", {"output_size": _square(module.output_size)})]
    if isinstance(module, nn.Linear):
        return [
            Layer(
                "LINEAR",
                {
                    "in_features": module.in_features,
                    "out_features": module.out_features,
                    "bias_flag": module.bias is not None,
                },
            )
        ]
    if isinstance(module, nn.Dropout):
        return [Layer("DROPOUT", {"dropout_p": float(module.p)})]
    if isinstance(module, nn.Identity):
        return []
    raise ValueError(f"no mapping for leaf module {type(module).__name__}")


def linearize(module: nn.Module) -> list[Layer]:
    """Canonical-path linearization of a module tree."""
    if isinstance(module, InceptionAux):
        return []
    if isinstance(module, BasicConv2d):
        # googlenet applies the activation functionally after conv+bn
        return linearize(module.conv) + linearize(module.bn) + [RELU]
    if isinstance(module, Inception):
        branches = [linearize(getattr(module, f"branch{i}")) for i in (1, 2, 3, 4)]
        return max(branches, key=len)  # max() keeps the first of equal-length branches
    if isinstance(module, (BasicBlock, Bottleneck)):
        atoms = [module.conv1, module.bn1, RELU, module.conv2, module.bn2]
        if isinstance(module, Bottleneck):
            atoms += [RELU, module.conv3, module.bn3]
        flattened: list[Layer] = []
        for atom in atoms:
            flattened.extend([atom] if isinstance(atom, Layer) else linearize(atom))
        flattened.append(RELU)  # activation after the skip-add
        return flattened
    if isinstance(module, _DenseLayer):
        return [
            atom
            for child in (module.norm1, module.relu1, module.conv1, module.norm2, module.relu2, module.conv2)
            for atom in linearize(child)
        ]
    if isinstance(module, (_DenseBlock, _Transition)):
        return [atom for child in module.children() for atom in linearize(child)]
    if isinstance(module, ShuffleInvertedResidual):
        branches = [linearize(module.branch1), linearize(module.branch2)]
        return max(branches, key=len)
    if isinstance(module, MobileInvertedResidual):
        return linearize(module.conv)
    if isinstance(module, MnasInvertedResidual):
        return linearize(module.layers)
    if isinstance(module, Fire):
        squeeze = linearize(module.squeeze) + linearize(module.squeeze_activation)
        expands = [
            linearize(module.expand1x1) + linearize(module.expand1x1_activation),
            linearize(module.expand3x3) + linearize(module.expand3x3_activation),
        ]
        return squeeze + max(expands, key=len)
    if isinstance(module, (nn.Sequential, nn.ModuleList, nn.ModuleDict)) or list(module.children()):
        return [atom for child in module.children() for atom in linearize(child)]
    return map_leaf(module)


def assemble(name: str, model: nn.Module) -> list[Layer]:
    """Model-level layer sequence, with the functional forward pieces made explicit."""
    if name == "alexnet" or name.startswith("vgg"):
        return linearize(model.features) + linearize(model.avgpool) + [FLATTEN] + linearize(model.classifier)
    if name.startswith(("resnet", "resnext", "wide_resnet")):
        parts = [model.conv1, model.bn1, model.relu, model.maxpool,
                 model.layer1, model.layer2, model.layer3, model.layer4, model.avgpool]
        return [atom for part in parts for atom in linearize(part)] + [FLATTEN] + linearize(model.fc)
    if name.startswith("densenet"):
        return (
            linearize(model.features)
            + [RELU, GLOBAL_POOL(), FLATTEN]
            + linearize(model.classifier)
        )
    if name == "googlenet":
        trunk = [
            atom
            for child_name, child in model.named_children()
            if child_name not in ("aux1", "aux2", "avgpool", "dropout", "fc")
            for atom in linearize(child)
        ]
        return trunk + linearize(model.avgpool) + [FLATTEN] + linearize(model.dropout) + linearize(model.fc)
    if name == "mobilenet_v2":
        return linearize(model.features) + [GLOBAL_POOL(), FLATTEN] + linearize(model.classifier)
    if name.startswith("mnasnet"):
        return linearize(model.layers) + [GLOBAL_POOL(), FLATTEN] + linearize(model.classifier)
    if name.startswith("shufflenet"):
        parts = [model.conv1, model.maxpool, model.stage2, model.stage3, model.stage4, model.conv5]
        return [atom for part in parts for atom in linearize(part)] + [GLOBAL_POOL(), FLATTEN] + linearize(model.fc)
    if name.startswith("squeezenet"):
        dropout, final_conv = model.classifier[0], model.classifier[1]
        head = [
            Layer("DROPOUT", {"dropout_p": float(dropout.p)}),
            GLOBAL_POOL(),
            FLATTEN,
            Layer(
                "LINEAR",
                {
                    "in_features": final_conv.in_channels,
                    "out_features": final_conv.out_channels,
                    "bias_flag": final_conv.bias is not None,
                },
            ),
        ]
        return linearize(model.features) + head
    raise ValueError(f"no assembly rule for {name}")


def rewire_sequence(layers: list[Layer]) -> list[Layer]:
    """Overwrite input dimensions so the dropped branches leave no mismatches."""
    shape = INPUT_SHAPE
    rewired = []
    for layer in layers:
        layer = rewire_layer(layer, shape)
        shape = layer_output_shape(layer, shape)
        rewired.append(layer)
    return rewired


def build_description(name: str) -> Architecture:
    kwargs = {"weights": None}
    if name == "googlenet":
        kwargs["init_weights"] = False
    model = getattr(tvm, name)(**kwargs).eval()
    layers = rewire_sequence(assemble(name, model))
    arch = Architecture(layers=tuple(layers), input_shape=INPUT_SHAPE, num_classes=NUM_CLASSES, name=name)
    report = validate_architecture(arch)
    if not report.ok:
        raise RuntimeError(f"{name}: authored description does not validate: {report.issues}")
    return arch


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--out",
        default=str(Path(__file__).resolve().parents[1] / "src" / "chainsearch" / "descriptions"),
        help="output directory for the description documents",
    )
    args = parser.parse_args()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name in MODEL_NAMES:
        arch = build_description(name)
        (out_dir / f"{name}.json").write_text(to_document(arch), encoding="utf-8")
        print(f"{name}: {len(arch.layers)} layers")
    print(f"wrote {len(MODEL_NAMES)} descriptions to {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
