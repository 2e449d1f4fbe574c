"""Mutual-information lower bound between same-scale teacher/student features.

The bound scores matched (joint) pairs and in-batch shuffled (marginal) pairs
with a small statistics network T and averages -softplus(-T) over joint pairs
plus -softplus(T) over shuffled pairs. With T == 0 the bound is -2 log 2; it
rises toward 0 as T separates joint from shuffled pairs. The shuffle is a
derangement so no joint pair leaks into the marginal term.

The distillation loss is the negated sum of the bound over the three scales;
teacher features are detached so only the student and the statistics networks
receive gradient.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .fusion import ScaleStack
from .nets import mlp


def softplus_stable(w: torch.Tensor) -> torch.Tensor:
    """log(1 + e^w) as max(w, 0) + log1p(e^-|w|); finite for any finite w."""
    return w.clamp_min(0.0) + torch.log1p(torch.exp(-w.abs()))


def derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    """Random permutation of range(n) with no fixed points."""
    if n < 2:
        raise ValueError("derangement needs n >= 2")
    for _ in range(100):
        perm = rng.permutation(n)
        if not np.any(perm == np.arange(n)):
            return perm
    # Vanishingly unlikely fallback: a rotation is always fixed-point free.
    return np.roll(np.arange(n), 1)


class PairScore(nn.Module):
    """Statistics network for one scale: scores a concatenated (x, y) pair."""

    def __init__(self, in_dim: int, hidden: int):
        super().__init__()
        self.in_dim = in_dim
        self.net = mlp(2 * in_dim, hidden, 1)

    def forward(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.in_dim or y.shape[-1] != self.in_dim:
            raise ValueError(
                f"statistics net expects dim {self.in_dim} pairs, got {x.shape[-1]}/{y.shape[-1]}"
            )
        return self.net(torch.cat([x, y], dim=-1)).squeeze(-1)


class StatisticsNets(nn.Module):
    """One pair-scorer per scale, input dims (3d, 2d, d), hidden width 4d."""

    def __init__(self, embed_dim: int):
        super().__init__()
        d = embed_dim
        self.embed_dim = d
        self.nets = nn.ModuleList([PairScore(s, 4 * d) for s in (3 * d, 2 * d, d)])

    def __getitem__(self, i: int) -> PairScore:
        return self.nets[i]


def mi_lower_bound(
    x: torch.Tensor,
    y: torch.Tensor,
    net: PairScore,
    shuffle_seed: int = 0,
    perm: np.ndarray | None = None,
) -> torch.Tensor:
    """JSD-form bound from a batch of joint (x_b, y_b) pairs.

    Marginal pairs come from pairing x with a derangement of y (drawn from
    ``shuffle_seed`` unless ``perm`` is given explicitly).
    """
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"batch mismatch: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < 2:
        raise ValueError("need a batch of >= 2 pairs to form marginal samples")
    if perm is None:
        perm = derangement(x.shape[0], np.random.default_rng(shuffle_seed))
    joint = (-softplus_stable(-net(x, y))).mean()
    marginal = (-softplus_stable(net(x, y[perm]))).mean()
    return joint + marginal


def loss_hmi(
    teacher: ScaleStack,
    student: ScaleStack,
    nets: StatisticsNets,
    shuffle_seed: int = 0,
) -> torch.Tensor:
    """Negated sum of the per-scale bounds; minimizing it maximizes the bound.
    Teacher features enter as constants."""
    total = None
    for i, (e_t, e_s) in enumerate(zip(teacher.scales, student.scales)):
        if e_t.shape[-1] != e_s.shape[-1]:
            raise ValueError(
                f"scale {i + 1}: teacher dim {e_t.shape[-1]} != student dim {e_s.shape[-1]}"
            )
        perm = derangement(e_s.shape[0], np.random.default_rng([shuffle_seed, i]))
        bound = mi_lower_bound(e_t.detach(), e_s, nets[i], perm=perm)
        total = bound if total is None else total + bound
    return -total
