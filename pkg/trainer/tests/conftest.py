from __future__ import annotations

import os
from pathlib import Path

import pytest

from cifar_trainer.dataset import BATCH_DIR, TEST_BATCH, TRAIN_BATCHES, write_synthetic_dataset

# Real-data tests look here (override with CIFAR10_DIR); they skip when absent.
REAL_DATA_DIR = Path(os.environ.get("CIFAR10_DIR", Path(__file__).resolve().parents[1] / "data"))


def real_dataset_available() -> bool:
    root = REAL_DATA_DIR if REAL_DATA_DIR.name == BATCH_DIR else REAL_DATA_DIR / BATCH_DIR
    return all((root / name).exists() for name in TRAIN_BATCHES + [TEST_BATCH])


requires_cifar10 = pytest.mark.skipif(
    not real_dataset_available(),
    reason="real CIFAR-10 not present; fetch cifar-10-python.tar.gz and extract it "
    f"under {REAL_DATA_DIR} (or set CIFAR10_DIR)",
)


@pytest.fixture(scope="session")
def synthetic_data_dir(tmp_path_factory) -> Path:
    data_dir = tmp_path_factory.mktemp("cifar-synthetic")
    write_synthetic_dataset(data_dir, per_class_train=20, per_class_test=5, seed=0)
    return data_dir


def tiny_document(channels: int = 8) -> dict:
    return {
        "name": "tiny",
        "input_shape": [3, 32, 32],
        "num_classes": 10,
        "layers": [
            {"op": "CONV2D", "components": {"in_channels": 3, "out_channels": channels, "kernel_size": 3,
                                            "stride": 2, "padding": 1, "groups": 1, "bias_flag": True}},
            {"op": "RELU", "components": {}},
            {"op": "ADAPTIVEAVGPOOL2D", "components": {"output_size": 2}},
            {"op": "FLATTEN", "components": {}},
            {"op": "LINEAR", "components": {"in_features": channels * 4, "out_features": 10, "bias_flag": True}},
        ],
    }
