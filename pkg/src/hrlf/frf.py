"""Representation factorization: each modality vector Z splits into a shared
sentiment part Q and a private modality part U.

The split is forced by two penalties. Translation: a shared decoder must
rebuild modality beta's vector from (Q of alpha, U of beta), for all ordered
pairs - self pairs (alpha == beta) and cross pairs (alpha != beta). Semantic
reconstruction: re-encoding a rebuilt vector with the target modality's
sentiment encoder must land back on that modality's Q. Both penalties use the
Euclidean norm of the residual, averaged over pairs and over the batch.
"""

from __future__ import annotations

import torch
from torch import nn

from .data import MODALITIES, ModalityKind
from .nets import mlp as _mlp


class FactorizationModule(nn.Module):
    """Per-modality sentiment/modality encoders plus the shared pair decoder.

    Encoders are 2-layer MLPs d->d->d with a ReLU between; the decoder is a
    2-layer MLP 2d->2d->d applied to the concatenation of its two arguments.
    ``squared_norm`` switches the residual penalty from ||r||_2 to ||r||_2^2.
    """

    def __init__(self, embed_dim: int, squared_norm: bool = False):
        super().__init__()
        d = embed_dim
        self.embed_dim = d
        self.squared_norm = squared_norm
        self.sentiment_enc = nn.ModuleDict({kind.value: _mlp(d, d, d) for kind in MODALITIES})
        # The private encoders are bottlenecked (hidden width d//2): at full
        # width U can carry all of Z, the decoder stops reading Q, and the
        # reconstruction penalty then squeezes Q to a constant. The bottleneck
        # keeps part of every translation target reachable only through the
        # shared slot.
        self.modality_enc = nn.ModuleDict(
            {kind.value: _mlp(d, max(1, d // 2), d) for kind in MODALITIES}
        )
        self.decoder = _mlp(2 * d, 2 * d, d)
        # Decoder starts blind to its U slot so the early reconstruction
        # signal routes through Q; the shared cross-pair targets then align
        # the Qs across modalities before U grows into the private residual.
        self.decoder[0].weight.data[:, d:] = 0.0
        # Zero output layer: translation pressure on everything upstream ramps
        # up only as the decoder itself becomes competent, instead of yanking
        # the encoders toward easily-translated (collapsed) features while the
        # decoder is still noise.
        self.decoder[-1].weight.data.zero_()
        self.decoder[-1].bias.data.zero_()

    def factorize(self, kind: ModalityKind, z: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Z -> (Q, U) for one modality."""
        return self.sentiment_enc[kind.value](z), self.modality_enc[kind.value](z)

    def factorize_all(
        self, zs: dict[ModalityKind, torch.Tensor]
    ) -> dict[ModalityKind, tuple[torch.Tensor, torch.Tensor]]:
        return {kind: self.factorize(kind, zs[kind]) for kind in MODALITIES}

    def translate(self, q: torch.Tensor, u: torch.Tensor) -> torch.Tensor:
        """Decode (Q of one modality, U of another) into the U-modality's domain."""
        return self.decoder(torch.cat([q, u], dim=-1))

    def _residual(self, diff: torch.Tensor) -> torch.Tensor:
        norm = torch.linalg.vector_norm(diff, dim=-1)
        if self.squared_norm:
            norm = norm**2
        return norm.mean()

    def translation_loss(
        self, zs: dict[ModalityKind, torch.Tensor]
    ) -> dict[str, torch.Tensor]:
        """Self (3 pairs) and cross (6 ordered pairs) translation penalties."""
        pairs = self.factorize_all(zs)
        n = len(MODALITIES)
        self_terms = []
        cross_terms = []
        for alpha in MODALITIES:
            q_a = pairs[alpha][0]
            for beta in MODALITIES:
                u_b = pairs[beta][1]
                residual = self._residual(self.translate(q_a, u_b) - zs[beta])
                (self_terms if alpha is beta else cross_terms).append(residual)
        self_loss = sum(self_terms) / n
        cross_loss = sum(cross_terms) / (n * n - n)
        return {"self": self_loss, "cross": cross_loss, "total": self_loss + cross_loss}

    def reconstruction_loss(self, zs: dict[ModalityKind, torch.Tensor]) -> torch.Tensor:
        """Sentiment-consistency penalty over all 9 ordered (alpha, beta) pairs:
        re-encoding the rebuilt alpha-domain vector must recover Q_alpha."""
        pairs = self.factorize_all(zs)
        terms = []
        for alpha in MODALITIES:
            q_a, u_a = pairs[alpha]
            for beta in MODALITIES:
                q_b = pairs[beta][0]
                rebuilt = self.translate(q_b, u_a)
                q_rebuilt = self.sentiment_enc[alpha.value](rebuilt)
                terms.append(self._residual(q_rebuilt - q_a))
        n = len(MODALITIES)
        return sum(terms) / (n * n)

    def loss(self, zs: dict[ModalityKind, torch.Tensor]) -> dict[str, torch.Tensor]:
        """Full factorization loss: translation + reconstruction, with parts."""
        parts = self.translation_loss(zs)
        recon = self.reconstruction_loss(zs)
        return {
            "self": parts["self"],
            "cross": parts["cross"],
            "recon": recon,
            "total": parts["total"] + recon,
        }
