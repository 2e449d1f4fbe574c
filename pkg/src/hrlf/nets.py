"""Small feed-forward building blocks shared by the loss modules."""

from __future__ import annotations

from torch import nn


def he_init_(linear: nn.Linear) -> nn.Linear:
    """Kaiming-uniform init for layers feeding a ReLU; keeps activation scale
    roughly constant through deep thin stacks (the default torch init shrinks
    it ~0.6x per layer, which stalls gradient flow at desk-scale widths)."""
    nn.init.kaiming_uniform_(linear.weight, nonlinearity="relu")
    nn.init.zeros_(linear.bias)
    return linear


def mlp(*dims: int) -> nn.Sequential:
    """Linear stack with ReLU between layers (none after the last); hidden
    layers are He-initialized."""
    layers: list[nn.Module] = []
    for i in range(len(dims) - 1):
        linear = nn.Linear(dims[i], dims[i + 1])
        if i < len(dims) - 2:
            he_init_(linear)
            layers.extend([linear, nn.ReLU()])
        else:
            layers.append(linear)
    return nn.Sequential(*layers)
