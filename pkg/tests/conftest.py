from __future__ import annotations

import sys
from pathlib import Path

import pytest

from chainsearch.arch import Architecture, Layer, bundled_descriptions_dir, load_descriptions

STUB_DIR = Path(__file__).parent / "stubs"


def stub_cmd(name: str) -> list[str]:
    return [sys.executable, str(STUB_DIR / f"{name}.py")]


def conv(cin: int, cout: int, k: int = 3, s: int = 1, p: int = 1, groups: int = 1, bias: bool = True) -> Layer:
    return Layer(
        "CONV2D",
        {
            "in_channels": cin,
            "out_channels": cout,
            "kernel_size": k,
            "stride": s,
            "padding": p,
            "groups": groups,
            "bias_flag": bias,
        },
    )


def linear(fin: int, fout: int, bias: bool = True) -> Layer:
    return Layer("LINEAR", {"in_features": fin, "out_features": fout, "bias_flag": bias})


def bn(channels: int) -> Layer:
    return Layer("BATCHNORM2D", {"num_features": channels})


def maxpool(k: int = 2, s: int = 2, p: int = 0) -> Layer:
    return Layer("MAXPOOL2D", {"kernel_size": k, "stride": s, "padding": p})


def arch_of(*layers: Layer, input_shape=(3, 32, 32), num_classes=10, name="") -> Architecture:
    return Architecture(tuple(layers), input_shape, num_classes, name)


def toy_cifar_arch(name: str = "toy") -> Architecture:
    """Shape-valid 6-layer net whose chain has a 50/50 branch at RELU."""
    return arch_of(
        conv(3, 8),
        Layer("RELU"),
        conv(8, 8),
        Layer("RELU"),
        Layer("FLATTEN"),
        linear(8 * 32 * 32, 10),
        name=name,
    )


@pytest.fixture(scope="session")
def seed_descriptions():
    return load_descriptions(bundled_descriptions_dir())
