"""Adversarial alignment of same-scale teacher/student feature distributions.

One sigmoid-headed discriminator per scale learns to tell teacher features
(label 1) from student features (label 0); the student earns the
non-saturating generator penalty -log D on its own features. Probabilities
are clamped away from {0, 1} so both objectives stay finite.
"""

from __future__ import annotations

from contextlib import contextmanager

import torch
from torch import nn

from .fusion import ScaleStack
from .nets import mlp

PROB_EPS = 1e-6


@contextmanager
def _frozen(params: list[nn.Parameter]):
    flags = [p.requires_grad for p in params]
    try:
        for p in params:
            p.requires_grad_(False)
        yield
    finally:
        for p, flag in zip(params, flags):
            p.requires_grad_(flag)


class ScaleDiscriminators(nn.Module):
    """Three 2-layer MLP discriminators, input dims (3d, 2d, d), hidden 2x input."""

    def __init__(self, embed_dim: int):
        super().__init__()
        d = embed_dim
        self.embed_dim = d
        self.nets = nn.ModuleList([mlp(s, 2 * s, 1) for s in (3 * d, 2 * d, d)])

    def prob(self, i: int, x: torch.Tensor) -> torch.Tensor:
        """Probability the scale-i discriminator assigns to 'teacher', in (0, 1)."""
        p = torch.sigmoid(self.nets[i](x).squeeze(-1))
        return p.clamp(PROB_EPS, 1.0 - PROB_EPS)

    def discriminator_objective(self, teacher: ScaleStack, student: ScaleStack) -> torch.Tensor:
        """Sum over scales of log(1 - D(student)) + log(D(teacher)), batch-averaged.

        Both feature stacks enter as constants; the discriminator step maximizes
        this value (train by minimizing its negation).
        """
        total = None
        for i, (e_t, e_s) in enumerate(zip(teacher.scales, student.scales)):
            if e_t.shape[-1] != e_s.shape[-1]:
                raise ValueError(
                    f"scale {i + 1}: teacher dim {e_t.shape[-1]} != student dim {e_s.shape[-1]}"
                )
            term = torch.log(1.0 - self.prob(i, e_s.detach())).mean()
            term = term + torch.log(self.prob(i, e_t.detach())).mean()
            total = term if total is None else total + term
        return total

    def generator_loss(self, student: ScaleStack) -> torch.Tensor:
        """Sum over scales of -log D(student), batch-averaged; minimized by the
        student. Discriminator weights are frozen for this pass so gradient
        reaches only the student-side features."""
        params = list(self.parameters())
        total = None
        with _frozen(params):
            for i, e_s in enumerate(student.scales):
                term = (-torch.log(self.prob(i, e_s))).mean()
                total = term if total is None else total + term
        return total
