"""Rebuild an architecture description document as a runnable torch model.

The document format is the engine's external interface: ``{"name", "input_shape",
"num_classes", "layers": [{"op", "components", "residual"?}]}``.  A layer with
``residual: true`` must be a convolution and expands to the bottleneck template
(1x1 reduce to out/4, 3x3 at the layer's stride, 1x1 restore, BatchNorm after
each conv, ReLU in between and after the skip-add, 1x1 projection skip when
input and output disagree).
"""

from __future__ import annotations

from typing import Any

import torch
import torch.nn as nn


class BuildError(ValueError):
    """Raised when a document cannot be rebuilt as a model."""


class BottleneckBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, stride: int):
        super().__init__()
        width = max(1, out_channels // 4)
        self.conv1 = nn.Conv2d(in_channels, width, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(width)
        self.conv2 = nn.Conv2d(width, width, 3, stride=stride, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(width)
        self.conv3 = nn.Conv2d(width, out_channels, 1, bias=False)
        self.bn3 = nn.BatchNorm2d(out_channels)
        self.relu = nn.ReLU(inplace=True)
        if in_channels != out_channels or stride != 1:
            self.projection = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_channels),
            )
        else:
            self.projection = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        skip = x if self.projection is None else self.projection(x)
        return self.relu(out + skip)


def _build_layer(op: str, comp: dict[str, Any], residual: bool) -> nn.Module:
    if residual:
        if op != "CONV2D":
            raise BuildError(f"residual flag on non-convolution {op}")
        return BottleneckBlock(comp["in_channels"], comp["out_channels"], comp["stride"])
    if op == "CONV2D":
        return nn.Conv2d(
            comp["in_channels"],
            comp["out_channels"],
            comp["kernel_size"],
            stride=comp["stride"],
            padding=comp["padding"],
            groups=comp["groups"],
            bias=comp["bias_flag"],
        )
    if op == "BATCHNORM2D":
        return nn.BatchNorm2d(comp["num_features"])
    if op == "RELU":
        return nn.ReLU(inplace=True)
    if op == "RELU6":
        return nn.ReLU6(inplace=True)
    if op == "MAXPOOL2D":
        return nn.MaxPool2d(comp["kernel_size"], stride=comp["stride"], padding=comp["padding"])
    if op == "AVGPOOL2D":
        return nn.AvgPool2d(comp["kernel_size"], stride=comp["stride"], padding=comp["padding"])
    if op == "ADAPTIVEAVGPOOL2D":
        return nn.AdaptiveAvgPool2d(comp["output_size"])
    if op == "LINEAR":
        return nn.Linear(comp["in_features"], comp["out_features"], bias=comp["bias_flag"])
    if op == "DROPOUT":
        return nn.Dropout(p=comp["dropout_p"])
    if op == "FLATTEN":
        return nn.Flatten(1)
    raise BuildError(f"unknown op {op!r}")


def build_model(document: dict[str, Any]) -> nn.Sequential:
    """Sequential model executing a (batch, C, H, W) input to (batch, num_classes)."""
    try:
        entries = document["layers"]
    except (TypeError, KeyError):
        raise BuildError("document has no layer list") from None
    if not entries:
        raise BuildError("document has an empty layer list")
    modules = []
    for index, entry in enumerate(entries):
        try:
            op = entry["op"]
            comp = entry.get("components", {})
            residual = bool(entry.get("residual", False))
            modules.append(_build_layer(op, comp, residual))
        except (KeyError, TypeError) as exc:
            raise BuildError(f"layer {index}: missing component ({exc})") from exc
    return nn.Sequential(*modules)


def input_size(document: dict[str, Any]) -> tuple[int, int, int]:
    c, h, w = document["input_shape"]
    return int(c), int(h), int(w)
