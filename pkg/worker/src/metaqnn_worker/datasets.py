"""Dataset ingestion with the exploration-phase preprocessing.

MNIST uses global mean subtraction; CIFAR-10 and SVHN use per-sample global
contrast normalization. Validation splits are stratified so class
proportions are unchanged. The ``synthetic`` tag serves protocol tests and
smoke runs with a deterministic, learnable clustered-image task that needs
no files on disk.

Real datasets load through torchvision from ``data_root`` (configurable via
the worker config file or the METAQNN_DATA_DIR environment variable);
download is attempted only when the files are missing.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch


class DatasetError(ValueError):
    """Unknown tag or unavailable dataset files."""


@dataclass
class SplitData:
    train_x: torch.Tensor
    train_y: torch.Tensor
    val_x: torch.Tensor
    val_y: torch.Tensor

    @property
    def num_classes(self) -> int:
        return int(self.train_y.max().item()) + 1


def stratified_indices(labels: torch.Tensor, count: int,
                       generator: torch.Generator) -> torch.Tensor:
    """Pick ``count`` indices with per-class proportions preserved."""
    classes = labels.unique(sorted=True)
    picks = []
    remaining = count
    for i, cls in enumerate(classes):
        cls_idx = (labels == cls).nonzero(as_tuple=True)[0]
        share = round(count * len(cls_idx) / len(labels))
        if i == len(classes) - 1:
            share = remaining
        share = min(share, remaining, len(cls_idx))
        perm = torch.randperm(len(cls_idx), generator=generator)[:share]
        picks.append(cls_idx[perm])
        remaining -= share
    return torch.cat(picks)


def stratified_split(x: torch.Tensor, y: torch.Tensor, validation_size: int,
                     seed: int) -> SplitData:
    generator = torch.Generator().manual_seed(seed)
    val_idx = stratified_indices(y, validation_size, generator)
    mask = torch.ones(len(y), dtype=torch.bool)
    mask[val_idx] = False
    return SplitData(x[mask], y[mask], x[val_idx], y[val_idx])


def global_mean_subtract(x: torch.Tensor, reference: torch.Tensor) -> torch.Tensor:
    return x - reference.mean()


def global_contrast_normalize(x: torch.Tensor, eps: float = 1e-8) -> torch.Tensor:
    flat = x.reshape(x.shape[0], -1)
    centered = flat - flat.mean(dim=1, keepdim=True)
    scale = centered.std(dim=1, keepdim=True).clamp_min(eps)
    return (centered / scale).reshape(x.shape)


def synthetic_dataset(input_size: int, input_channels: int, num_classes: int,
                      samples: int = 512, validation_size: int = 128,
                      seed: int = 0) -> SplitData:
    """Learnable clustered-image task; no files needed.

    Classes differ by global intensity level plus a fixed per-class pattern,
    so the signal survives aggressive spatial pooling and small nets separate
    the classes within a few epochs.
    """
    generator = torch.Generator().manual_seed(seed)
    levels = torch.linspace(-1.5, 1.5, num_classes)
    patterns = 0.5 * torch.randn(num_classes, input_channels, input_size,
                                 input_size, generator=generator)
    means = levels.view(num_classes, 1, 1, 1) + patterns
    labels = torch.arange(samples) % num_classes
    labels = labels[torch.randperm(samples, generator=generator)]
    noise = torch.randn(samples, input_channels, input_size, input_size,
                        generator=generator)
    images = means[labels] + 0.35 * noise
    return stratified_split(images, labels, validation_size, seed)


def _torchvision_tensors(name: str, root: str):
    import torchvision

    loader = {
        "mnist": torchvision.datasets.MNIST,
        "cifar10": torchvision.datasets.CIFAR10,
        "svhn": torchvision.datasets.SVHN,
    }[name]
    kwargs = {"split": "train"} if name == "svhn" else {"train": True}
    try:
        try:
            ds = loader(root, download=False, **kwargs)
        except RuntimeError:
            ds = loader(root, download=True, **kwargs)
    except Exception as exc:
        raise DatasetError(f"dataset {name!r} unavailable under {root}: "
                           f"{exc}") from exc
    if name == "mnist":
        x = ds.data.float().unsqueeze(1) / 255.0
        y = ds.targets.clone()
    elif name == "cifar10":
        x = torch.as_tensor(ds.data).float().permute(0, 3, 1, 2) / 255.0
        y = torch.as_tensor(ds.targets)
    else:
        x = torch.as_tensor(ds.data).float() / 255.0
        y = torch.as_tensor(ds.labels)
    return x, y


def load_dataset(tag: str, input_size: int, input_channels: int,
                 num_classes: int, data_root: str, validation_size: int,
                 subset_size: int | None = None, seed: int = 0) -> SplitData:
    if tag.startswith("synthetic"):
        samples = int(tag.split(":", 1)[1]) if ":" in tag else 512
        return synthetic_dataset(input_size, input_channels, num_classes,
                                 samples=samples,
                                 validation_size=max(num_classes,
                                                     samples // 4),
                                 seed=seed)
    if tag not in ("mnist", "cifar10", "svhn"):
        raise DatasetError(f"unknown dataset tag {tag!r}")
    x, y = _torchvision_tensors(tag, data_root)
    if x.shape[1] != input_channels or x.shape[2] != input_size:
        raise DatasetError(
            f"{tag} is {tuple(x.shape[1:])}, request says "
            f"{(input_channels, input_size, input_size)}")
    if subset_size is not None and subset_size < len(y):
        generator = torch.Generator().manual_seed(seed)
        idx = stratified_indices(y, subset_size, generator)
        x, y = x[idx], y[idx]
    if validation_size >= len(y):
        raise DatasetError("validation_size must be below the sample count")
    split = stratified_split(x, y, validation_size, seed)
    if tag == "mnist":
        split.val_x = global_mean_subtract(split.val_x, split.train_x)
        split.train_x = global_mean_subtract(split.train_x, split.train_x)
    else:
        split.train_x = global_contrast_normalize(split.train_x)
        split.val_x = global_contrast_normalize(split.val_x)
    return split
