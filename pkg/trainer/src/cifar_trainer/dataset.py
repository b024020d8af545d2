"""CIFAR-10 loading and deterministic stratified splits.

Reads the standard extracted ``cifar-10-batches-py`` directory (python pickle
batches) directly, so any mirror of the dataset works.  Split fractions follow
the evaluation protocol: PARTIAL is a stratified 10% of the training set,
divided 80/20 into train/validation (4,000/1,000 images at full size); ENTIRE
divides the whole training set 80/20 (40,000/10,000) and uses the held-out
10,000-image test set.
"""

from __future__ import annotations

import hashlib
import math
import pickle
import tarfile
import urllib.request
from dataclasses import dataclass
from pathlib import Path

import numpy as np

BATCH_DIR = "cifar-10-batches-py"
TRAIN_BATCHES = [f"data_batch_{i}" for i in range(1, 6)]
TEST_BATCH = "test_batch"
NUM_CLASSES = 10

CIFAR10_URL = "https://www.cs.toronto.edu/~kriz/cifar-10-python.tar.gz"
CIFAR10_MD5 = "c58f30108f718f92721af3b95e74349a"

PARTIAL = "PARTIAL"
ENTIRE = "ENTIRE"


class DatasetError(RuntimeError):
    pass


@dataclass
class Cifar10:
    train_images: np.ndarray  # (N, 3, 32, 32) uint8
    train_labels: np.ndarray  # (N,) int64
    test_images: np.ndarray
    test_labels: np.ndarray


@dataclass
class Split:
    variant: str
    train: tuple[np.ndarray, np.ndarray]
    val: tuple[np.ndarray, np.ndarray]
    test: tuple[np.ndarray, np.ndarray] | None


def _read_batch(path: Path) -> tuple[np.ndarray, np.ndarray]:
    with path.open("rb") as fh:
        batch = pickle.load(fh, encoding="bytes")
    data = np.asarray(batch[b"data"], dtype=np.uint8).reshape(-1, 3, 32, 32)
    labels = np.asarray(batch[b"labels"], dtype=np.int64)
    return data, labels


def dataset_root(data_dir: Path) -> Path:
    root = Path(data_dir)
    return root if root.name == BATCH_DIR else root / BATCH_DIR


def dataset_present(data_dir: Path) -> bool:
    root = dataset_root(data_dir)
    return all((root / name).exists() for name in TRAIN_BATCHES + [TEST_BATCH])


def fetch_cifar10(data_dir: Path, url: str = CIFAR10_URL, md5: str | None = CIFAR10_MD5) -> Path:
    """Download and extract the dataset archive unless it is already present."""
    data_dir = Path(data_dir)
    root = dataset_root(data_dir)
    if dataset_present(data_dir):
        return root
    data_dir.mkdir(parents=True, exist_ok=True)
    archive = data_dir / "cifar-10-python.tar.gz"
    if not archive.exists():
        try:
            with urllib.request.urlopen(url) as response, archive.open("wb") as fh:
                while chunk := response.read(1 << 20):
                    fh.write(chunk)
        except OSError as exc:
            archive.unlink(missing_ok=True)
            raise DatasetError(f"could not download {url}: {exc}") from exc
    if md5 is not None:
        digest = hashlib.md5(archive.read_bytes()).hexdigest()
        if digest != md5:
            raise DatasetError(f"checksum mismatch for {archive}: {digest} != {md5}")
    with tarfile.open(archive, "r:gz") as tar:
        for member in tar.getmembers():
            if member.name.startswith(("/", "..")):
                raise DatasetError(f"refusing unsafe archive member {member.name!r}")
        tar.extractall(data_dir)
    if not dataset_present(data_dir):
        raise DatasetError(f"archive {archive} did not contain {BATCH_DIR}")
    return root


def load_cifar10(data_dir: Path) -> Cifar10:
    root = dataset_root(data_dir)
    if not root.is_dir():
        raise DatasetError(
            f"{root} not found; fetch and extract cifar-10-python.tar.gz into {Path(data_dir)}"
        )
    try:
        train_parts = [_read_batch(root / name) for name in TRAIN_BATCHES]
        test_images, test_labels = _read_batch(root / TEST_BATCH)
    except (OSError, KeyError, pickle.UnpicklingError) as exc:
        raise DatasetError(f"could not read CIFAR-10 batches under {root}: {exc}") from exc
    return Cifar10(
        train_images=np.concatenate([p[0] for p in train_parts]),
        train_labels=np.concatenate([p[1] for p in train_parts]),
        test_images=test_images,
        test_labels=test_labels,
    )


def stratified_indices(labels: np.ndarray, fraction: float, seed: int) -> np.ndarray:
    """Per-class prefix of a seeded shuffle; class balance holds within one sample."""
    rng = np.random.Generator(np.random.PCG64(seed))
    chosen = []
    for cls in range(NUM_CLASSES):
        members = np.flatnonzero(labels == cls)
        rng.shuffle(members)
        count = math.floor(len(members) * fraction + 1e-9)
        chosen.append(members[:count])
    return np.sort(np.concatenate(chosen))


def make_split(data: Cifar10, variant: str, seed: int) -> Split:
    if variant == PARTIAL:
        subset = stratified_indices(data.train_labels, 0.10, seed)
        sub_labels = data.train_labels[subset]
        train_rel = stratified_indices(sub_labels, 0.80, seed + 1)
        mask = np.zeros(len(subset), dtype=bool)
        mask[train_rel] = True
        train_idx, val_idx = subset[mask], subset[~mask]
        test = None
    elif variant == ENTIRE:
        train_idx = stratified_indices(data.train_labels, 0.80, seed)
        mask = np.zeros(len(data.train_labels), dtype=bool)
        mask[train_idx] = True
        val_idx = np.flatnonzero(~mask)
        test = (data.test_images, data.test_labels)
    else:
        raise DatasetError(f"unknown dataset variant {variant!r}")
    if len(train_idx) == 0 or len(val_idx) == 0:
        raise DatasetError(f"dataset too small for a {variant} split")
    return Split(
        variant=variant,
        train=(data.train_images[train_idx], data.train_labels[train_idx]),
        val=(data.train_images[val_idx], data.train_labels[val_idx]),
        test=test,
    )


def write_synthetic_dataset(data_dir: Path, per_class_train: int = 20, per_class_test: int = 5, seed: int = 0) -> Path:
    """Random tiny dataset in the CIFAR-10 on-disk format, for protocol-level tests."""
    rng = np.random.Generator(np.random.PCG64(seed))
    root = dataset_root(data_dir)
    root.mkdir(parents=True, exist_ok=True)

    def write(path: Path, n_per_class: int) -> None:
        labels = np.repeat(np.arange(NUM_CLASSES), n_per_class)
        rng.shuffle(labels)
        data = rng.integers(0, 256, size=(len(labels), 3072), dtype=np.uint8)
        with path.open("wb") as fh:
            pickle.dump({b"data": data, b"labels": labels.tolist()}, fh)

    per_batch = max(1, per_class_train // 5)
    for name in TRAIN_BATCHES:
        write(root / name, per_batch)
    write(root / TEST_BATCH, per_class_test)
    return root
