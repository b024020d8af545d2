"""SGD training and evaluation of a built model on a dataset split."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

# per-channel statistics of the CIFAR-10 training set
_MEAN = torch.tensor([0.4914, 0.4822, 0.4465]).view(1, 3, 1, 1)
_STD = torch.tensor([0.2470, 0.2435, 0.2616]).view(1, 3, 1, 1)


@dataclass
class TrainOptions:
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 96
    device: str = "cpu"
    deterministic: bool = True


def _to_tensor(images: np.ndarray, size: tuple[int, int], device: torch.device) -> torch.Tensor:
    x = torch.from_numpy(np.ascontiguousarray(images)).float().div_(255.0)
    x = (x - _MEAN) / _STD
    if x.shape[-2:] != size:
        x = F.interpolate(x, size=size, mode="bilinear", align_corners=False)
    return x.to(device)


@torch.no_grad()
def evaluate_accuracy(model, images: np.ndarray, labels: np.ndarray, size, opts: TrainOptions) -> float:
    device = torch.device(opts.device)
    model.eval()
    correct = 0
    for start in range(0, len(labels), opts.batch_size):
        batch = _to_tensor(images[start : start + opts.batch_size], size, device)
        logits = model(batch)
        predictions = logits.argmax(dim=1).cpu().numpy()
        correct += int((predictions == labels[start : start + opts.batch_size]).sum())
    return correct / len(labels)


def train_model(model, split, document, epochs: int, seed: int, opts: TrainOptions, cosine: bool = False) -> dict:
    """Train in place; returns metrics including validation accuracy."""
    device = torch.device(opts.device)
    if opts.deterministic:
        torch.manual_seed(seed)
    model.to(device)
    size = (int(document["input_shape"][1]), int(document["input_shape"][2]))

    optimizer = torch.optim.SGD(model.parameters(), lr=opts.lr, momentum=opts.momentum)
    scheduler = (
        torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=epochs) if cosine else None
    )
    images, labels = split.train
    order_rng = np.random.Generator(np.random.PCG64(seed))
    started = time.perf_counter()
    model.train()
    for _ in range(epochs):
        order = order_rng.permutation(len(labels))
        for start in range(0, len(order), opts.batch_size):
            idx = order[start : start + opts.batch_size]
            batch = _to_tensor(images[idx], size, device)
            target = torch.from_numpy(labels[idx]).to(device)
            optimizer.zero_grad(set_to_none=True)
            loss = F.cross_entropy(model(batch), target)
            loss.backward()
            optimizer.step()
        if scheduler is not None:
            scheduler.step()
    train_time = time.perf_counter() - started

    val_images, val_labels = split.val
    metrics = {
        "train_time_s": round(train_time, 3),
        "epochs": epochs,
        "n_params": sum(p.numel() for p in model.parameters()),
        "validation_accuracy": evaluate_accuracy(model, val_images, val_labels, size, opts),
    }
    if split.test is not None:
        test_images, test_labels = split.test
        metrics["test_accuracy"] = evaluate_accuracy(model, test_images, test_labels, size, opts)
    return metrics
