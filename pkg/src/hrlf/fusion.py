"""Joint multimodal representation and the multi-scale refinement stack.

Each modality's (Q, U) pair is projected 2d->d and the three results are
concatenated into the joint vector H (3d). Four fully-connected layers then
refine H through dims 3d->2d->d->2d->3d; the four layer outputs are the taps
I1, I2, I3 and the refined vector. Same-dim taps are combined into the three
scale features E1 (3d, from H and the refined vector), E2 (2d, from I1 and
I3), and E3 (d, from I2).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .data import MODALITIES, ModalityKind
from .nets import he_init_

SCALE_COMBINES = ("mean", "sum", "first")


@dataclass
class ScaleStack:
    """All fusion-pipeline tensors for one batch, each of shape (B, dim)."""

    joint: torch.Tensor  # H, 3d
    i1: torch.Tensor  # 2d
    i2: torch.Tensor  # d
    i3: torch.Tensor  # 2d
    refined: torch.Tensor  # 3d
    e1: torch.Tensor  # 3d
    e2: torch.Tensor  # 2d
    e3: torch.Tensor  # d
    fused: dict[ModalityKind, torch.Tensor] | None = None  # C_m, d each

    @property
    def scales(self) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        return self.e1, self.e2, self.e3

    def detach(self) -> "ScaleStack":
        return ScaleStack(
            joint=self.joint.detach(),
            i1=self.i1.detach(),
            i2=self.i2.detach(),
            i3=self.i3.detach(),
            refined=self.refined.detach(),
            e1=self.e1.detach(),
            e2=self.e2.detach(),
            e3=self.e3.detach(),
            fused={k: v.detach() for k, v in self.fused.items()} if self.fused else None,
        )


def assemble_scales(
    joint: torch.Tensor,
    i1: torch.Tensor,
    i2: torch.Tensor,
    i3: torch.Tensor,
    refined: torch.Tensor,
    combine: str = "mean",
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Combine same-dim stack members into (E1, E2, E3).

    'mean' and 'sum' merge elementwise (keeping the stated 3d/2d/d dims);
    'first' keeps the earlier member of each group.
    """
    if combine == "mean":
        return (joint + refined) / 2, (i1 + i3) / 2, i2
    if combine == "sum":
        return joint + refined, i1 + i3, i2
    if combine == "first":
        return joint, i1, i2
    raise ValueError(f"combine must be one of {SCALE_COMBINES}, got {combine!r}")


class FusionModule(nn.Module):
    def __init__(self, embed_dim: int, scale_combine: str = "mean"):
        super().__init__()
        if scale_combine not in SCALE_COMBINES:
            raise ValueError(f"scale_combine must be one of {SCALE_COMBINES}")
        d = embed_dim
        self.embed_dim = d
        self.scale_combine = scale_combine
        self.proj = nn.ModuleDict(
            {kind.value: he_init_(nn.Linear(2 * d, d)) for kind in MODALITIES}
        )
        self.stack = nn.ModuleList(
            [
                he_init_(nn.Linear(3 * d, 2 * d)),
                he_init_(nn.Linear(2 * d, d)),
                he_init_(nn.Linear(d, 2 * d)),
                nn.Linear(2 * d, 3 * d),
            ]
        )

    def fuse_modalities(
        self, pairs: dict[ModalityKind, tuple[torch.Tensor, torch.Tensor]]
    ) -> tuple[dict[ModalityKind, torch.Tensor], torch.Tensor]:
        """(Q, U) per modality -> per-modality fused vectors C_m and joint H."""
        for kind in MODALITIES:
            if kind not in pairs:
                raise ValueError(f"missing factorized pair for modality {kind.value}")
        fused = {
            kind: self.proj[kind.value](torch.cat(pairs[kind], dim=-1)) for kind in MODALITIES
        }
        joint = torch.cat([fused[kind] for kind in MODALITIES], dim=-1)
        return fused, joint

    def refine(self, joint: torch.Tensor) -> ScaleStack:
        """Run the 3d->2d->d->2d->3d stack; taps are the raw layer outputs
        (ReLU only feeds the next layer)."""
        i1 = self.stack[0](joint)
        i2 = self.stack[1](torch.relu(i1))
        i3 = self.stack[2](torch.relu(i2))
        refined = self.stack[3](torch.relu(i3))
        e1, e2, e3 = assemble_scales(joint, i1, i2, i3, refined, self.scale_combine)
        return ScaleStack(joint=joint, i1=i1, i2=i2, i3=i3, refined=refined, e1=e1, e2=e2, e3=e3)

    def forward(
        self, pairs: dict[ModalityKind, tuple[torch.Tensor, torch.Tensor]]
    ) -> ScaleStack:
        fused, joint = self.fuse_modalities(pairs)
        stack = self.refine(joint)
        stack.fused = fused
        return stack
