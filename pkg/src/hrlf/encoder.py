"""Per-modality sequence encoders: temporal convolution, sinusoidal positions,
and a transformer stack whose last output position is the modality vector."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn


class DivergenceError(RuntimeError):
    """Non-finite values appeared where finite ones are required (diverged training)."""


@dataclass
class EncoderConfig:
    embed_dim: int = 8
    kernel_size: int = 3
    num_layers: int = 2
    num_heads: int = 2
    ff_dim: int = 32
    dropout: float = 0.1

    def validate(self) -> None:
        if self.embed_dim < 1:
            raise ValueError("embed_dim must be >= 1")
        if self.embed_dim % self.num_heads != 0:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd (same-length output)")
        if self.num_layers < 1 or self.ff_dim < 1:
            raise ValueError("num_layers and ff_dim must be >= 1")


def sinusoidal_positions(length: int, dim: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Fixed (length, dim) position table: sin on even columns, cos on odd ones."""
    position = torch.arange(length, dtype=dtype).unsqueeze(1)
    div = torch.exp(torch.arange(0, dim, 2, dtype=dtype) * (-math.log(10000.0) / dim))
    table = torch.zeros(length, dim, dtype=dtype)
    table[:, 0::2] = torch.sin(position * div)
    table[:, 1::2] = torch.cos(position * div[: dim // 2])
    return table


class ModalityEncoder(nn.Module):
    """Conv1d over time (same padding) + positions, then a pre-norm transformer;
    the final sequence position is returned as the modality representation."""

    def __init__(self, input_dim: int, config: EncoderConfig | None = None):
        super().__init__()
        config = config or EncoderConfig()
        config.validate()
        self.config = config
        self.input_dim = input_dim
        d = config.embed_dim
        self.conv = nn.Conv1d(input_dim, d, config.kernel_size, padding=config.kernel_size // 2)
        layer = nn.TransformerEncoderLayer(
            d_model=d,
            nhead=config.num_heads,
            dim_feedforward=config.ff_dim,
            dropout=config.dropout,
            batch_first=True,
            norm_first=True,
        )
        # Canonical pre-norm stack with a final norm. The norm is
        # parameter-free: downstream reconstruction penalties are minimized by
        # erasing sample dependence, and a learnable scale hands them a
        # one-parameter shortcut to do exactly that.
        self.transformer = nn.TransformerEncoder(
            layer,
            config.num_layers,
            norm=nn.LayerNorm(d, elementwise_affine=False),
            enable_nested_tensor=False,
        )

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        """(B, T, input_dim) or (T, input_dim) -> same-length sequence in embed_dim."""
        single = x.dim() == 2
        if single:
            x = x.unsqueeze(0)
        if x.shape[-1] != self.input_dim:
            raise ValueError(f"expected feature dim {self.input_dim}, got {x.shape[-1]}")
        r = self.conv(x.transpose(1, 2)).transpose(1, 2)
        r = r + sinusoidal_positions(r.shape[1], r.shape[2], dtype=r.dtype).to(r.device)
        return r.squeeze(0) if single else r

    def encode(self, r: torch.Tensor) -> torch.Tensor:
        """Run the transformer and return the last position's vector."""
        single = r.dim() == 2
        if single:
            r = r.unsqueeze(0)
        out = self.transformer(r)
        z = out[:, -1, :]
        if not torch.isfinite(z).all():
            raise DivergenceError("non-finite encoder output (diverged training?)")
        return z.squeeze(0) if single else z

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.encode(self.embed(x))
