"""Stochastic feature masking for training and the fixed availability grid for testing.

Two axes of missingness: frame-level drops inside a modality (a ratio p of the
sequence positions is zeroed) and whole modalities absent (everything outside
a retained subset is zeroed). Masked positions are exact zero vectors; a
boolean keep-mask per modality is returned alongside so callers can tell
"zeroed" from "genuinely zero".
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

import numpy as np

from .data import MODALITIES, ModalityKind, MultimodalSample


class TestingCondition(Enum):
    """The seven modality-availability subsets, in report column order."""

    L = "l"
    A = "a"
    V = "v"
    LA = "la"
    LV = "lv"
    AV = "av"
    LAV = "lav"

    @property
    def retained(self) -> frozenset[ModalityKind]:
        short = {"l": ModalityKind.LANGUAGE, "a": ModalityKind.AUDIO, "v": ModalityKind.VISUAL}
        return frozenset(short[ch] for ch in self.value)


CONDITIONS: tuple[TestingCondition, ...] = (
    TestingCondition.L,
    TestingCondition.A,
    TestingCondition.V,
    TestingCondition.LA,
    TestingCondition.LV,
    TestingCondition.AV,
    TestingCondition.LAV,
)
MISSING_CONDITIONS: tuple[TestingCondition, ...] = CONDITIONS[:-1]


def round_half_away(x: float) -> int:
    """round() with halves away from zero, exact for decimal-intent ratios.

    The float is snapped to the nearest rational with denominator <= 1e6 first,
    so e.g. p=0.35, T=10 counts 4 frames rather than inheriting the binary
    representation error of 0.35.
    """
    f = Fraction(x).limit_denominator(10**6)
    sign = 1 if f >= 0 else -1
    return sign * int((abs(f) + Fraction(1, 2)) // 1)


@dataclass
class MissingSpec:
    """Per-sample missingness description: frame-drop ratio per modality,
    the retained modality subset, and the seed the frame choice derives from."""

    intra_ratio: dict[ModalityKind, float]
    retained: frozenset[ModalityKind]
    seed: int

    @classmethod
    def uniform(
        cls, ratio: float, retained: frozenset[ModalityKind] | None = None, seed: int = 0
    ) -> "MissingSpec":
        retained = frozenset(MODALITIES) if retained is None else retained
        return cls(intra_ratio={kind: ratio for kind in MODALITIES}, retained=retained, seed=seed)

    def validate(self) -> None:
        for kind in MODALITIES:
            p = self.intra_ratio[kind]
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"intra_ratio[{kind.value}] = {p} outside [0, 1]")
        if not self.retained:
            raise ValueError("retained modality set must be nonempty")
        if not self.retained <= set(MODALITIES):
            raise ValueError(f"unknown modalities in retained set: {self.retained}")


def frame_mask(spec: MissingSpec, kind: ModalityKind, seq_len: int) -> np.ndarray:
    """Boolean keep-mask of length ``seq_len`` for one modality under ``spec``.

    Depends only on (spec, kind, seq_len): exactly round(p*T) positions are
    dropped, chosen without replacement from the spec seed. A modality outside
    the retained set is all-False.
    """
    if kind not in spec.retained:
        return np.zeros(seq_len, dtype=bool)
    p = spec.intra_ratio[kind]
    n_drop = round_half_away(p * seq_len)
    mask = np.ones(seq_len, dtype=bool)
    if n_drop > 0:
        rng = np.random.default_rng([spec.seed, MODALITIES.index(kind)])
        mask[rng.choice(seq_len, size=n_drop, replace=False)] = False
    return mask


def apply_msm(
    sample: MultimodalSample, spec: MissingSpec
) -> tuple[MultimodalSample, dict[ModalityKind, np.ndarray]]:
    """Return a masked copy of ``sample`` plus the per-modality keep-masks.

    Masked frame rows become exact zero vectors; unmasked entries pass through
    bit-exactly. The input sample is never modified.
    """
    spec.validate()
    masked: dict[ModalityKind, np.ndarray] = {}
    masks: dict[ModalityKind, np.ndarray] = {}
    for kind in MODALITIES:
        arr = sample.features[kind]
        mask = frame_mask(spec, kind, arr.shape[0])
        out = arr.copy()
        out[~mask] = 0.0
        masked[kind] = out
        masks[kind] = mask
    return MultimodalSample(features=masked, label=sample.label), masks


def apply_msm_batch(
    features: dict[ModalityKind, np.ndarray], specs: list[MissingSpec]
) -> tuple[dict[ModalityKind, np.ndarray], dict[ModalityKind, np.ndarray]]:
    """Vectorized apply_msm over stacked (N, T, d) arrays, one spec per sample."""
    n = len(specs)
    out: dict[ModalityKind, np.ndarray] = {}
    masks: dict[ModalityKind, np.ndarray] = {}
    for kind in MODALITIES:
        arr = features[kind]
        if arr.shape[0] != n:
            raise ValueError(f"{kind.value}: {arr.shape[0]} samples but {n} specs")
        keep = np.stack([frame_mask(spec, kind, arr.shape[1]) for spec in specs])
        out[kind] = np.where(keep[:, :, None], arr, 0.0).astype(arr.dtype)
        masks[kind] = keep
    return out, masks


def condition_mask(sample: MultimodalSample, condition: TestingCondition) -> MultimodalSample:
    """Zero every modality outside ``condition``; retained modalities pass through."""
    retained = condition.retained
    feats = {
        kind: (sample.features[kind].copy() if kind in retained else np.zeros_like(sample.features[kind]))
        for kind in MODALITIES
    }
    return MultimodalSample(features=feats, label=sample.label)


def condition_mask_batch(
    features: dict[ModalityKind, np.ndarray], condition: TestingCondition
) -> dict[ModalityKind, np.ndarray]:
    retained = condition.retained
    return {
        kind: (features[kind] if kind in retained else np.zeros_like(features[kind]))
        for kind in MODALITIES
    }


# Default training-time sampling: p from {0.0..0.7} and any of the seven
# nonempty retained subsets, both uniform, so the student sees both missingness
# axes without ever training on fully-empty input.
@dataclass
class MsmPolicy:
    ratios: tuple[float, ...] = tuple(i / 10 for i in range(8))
    subsets: tuple[TestingCondition, ...] = CONDITIONS

    def validate(self) -> None:
        for p in self.ratios:
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"policy ratio {p} outside [0, 1]")
        if not self.ratios or not self.subsets:
            raise ValueError("policy needs at least one ratio and one subset")

    def sample_spec(self, rng: np.random.Generator) -> MissingSpec:
        p = self.ratios[int(rng.integers(len(self.ratios)))]
        condition = self.subsets[int(rng.integers(len(self.subsets)))]
        seed = int(rng.integers(2**63))
        return MissingSpec.uniform(p, retained=condition.retained, seed=seed)
