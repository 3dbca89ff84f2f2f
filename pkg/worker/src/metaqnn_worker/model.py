"""Materialize an architecture as a torch module.

Conventions shared with the controller's parameter counter: convolutions are
stride-1 with same padding; the first FC flattens spatial x channels; a
softmax head reached straight from conv/pool acts on globally average-pooled
channels; a GAP termination pools spatially, then averages channel groups
down to the class count without weights, so only the final linear layer
carries parameters. Pooling is unpadded with floor division.

A dropout layer follows every two counted layers (conv/pool/FC); the i-th of
n dropout layers uses probability i/(2n). ReLU follows conv and FC layers.
All weights use Xavier initialization with zero biases.
"""

from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F

from .archs import ArchError, Layer


class SpatialAveragePool(nn.Module):
    """(B, C, H, W) -> (B, C) by averaging each feature map."""

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x.mean(dim=(2, 3))


class ChannelAveragePool(nn.Module):
    """(B, C) -> (B, K) by adaptive averaging over channel groups; no weights."""

    def __init__(self, out_features: int):
        super().__init__()
        self.out_features = out_features

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.adaptive_avg_pool1d(x.unsqueeze(1), self.out_features).squeeze(1)


def pool_output_size(size: int, field: int, stride: int) -> int:
    if size < field:
        raise ArchError(f"pool field {field} exceeds spatial size {size}")
    return (size - field) // stride + 1


def build_model(layers: list[Layer], input_size: int, input_channels: int,
                num_classes: int) -> nn.Sequential:
    counted = sum(1 for l in layers if l[0] in ("C", "P", "FC"))
    n_dropout = counted // 2
    modules: list[nn.Module] = []
    size = input_size
    channels = input_channels
    fc_width: int | None = None
    after_gap = False
    seen = 0
    dropouts_added = 0

    def maybe_dropout() -> None:
        nonlocal dropouts_added
        if n_dropout and seen % 2 == 0 and dropouts_added < n_dropout:
            dropouts_added += 1
            modules.append(nn.Dropout(dropouts_added / (2 * n_dropout)))

    for layer in layers:
        tag = layer[0]
        if tag == "C":
            _, filters, field, _ = layer
            modules.append(nn.Conv2d(channels, filters, field, stride=1,
                                     padding=field // 2))
            modules.append(nn.ReLU(inplace=True))
            channels = filters
            seen += 1
            maybe_dropout()
        elif tag == "P":
            _, field, stride = layer
            size = pool_output_size(size, field, stride)
            modules.append(nn.MaxPool2d(field, stride))
            seen += 1
            maybe_dropout()
        elif tag == "FC":
            _, neurons = layer
            if fc_width is None:
                modules.append(nn.Flatten())
                in_features = size * size * channels
            else:
                in_features = fc_width
            modules.append(nn.Linear(in_features, neurons))
            modules.append(nn.ReLU(inplace=True))
            fc_width = neurons
            seen += 1
            maybe_dropout()
        elif tag == "GAP":
            modules.append(SpatialAveragePool())
            modules.append(ChannelAveragePool(layer[1]))
            after_gap = True
        elif tag == "SM":
            classes = layer[1]
            if after_gap:
                in_features = classes
            elif fc_width is not None:
                in_features = fc_width
            else:
                modules.append(SpatialAveragePool())
                in_features = channels
            modules.append(nn.Linear(in_features, classes))
        else:
            raise ArchError(f"unknown layer tag {tag!r}")

    model = nn.Sequential(*modules)
    init_xavier(model)
    return model


def init_xavier(model: nn.Module) -> None:
    for module in model.modules():
        if isinstance(module, (nn.Conv2d, nn.Linear)):
            nn.init.xavier_uniform_(module.weight)
            nn.init.zeros_(module.bias)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def dropout_probabilities(model: nn.Module) -> list[float]:
    return [m.p for m in model.modules() if isinstance(m, nn.Dropout)]
