"""Multimodal sample model, synthetic data generation, and bit-exact dataset I/O.

A dataset is three aligned feature arrays (language / audio / visual) plus a
label per sample. The synthetic generator draws every sample from a shared
scalar "sentiment factor" s and a per-modality private latent n_m; each
modality sequence is a fixed affine map of (s, n_m) plus Gaussian noise, and
the label is a deterministic function of s alone. That gives a known ground
truth for what is shared across modalities and what is private to each.

On disk a dataset is a directory of raw little-endian float32 arrays (one per
split/modality), a labels file per split, and a JSON manifest carrying shapes,
split sizes, the generation seed, and a CRC32 per file.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from statistics import NormalDist

import numpy as np


class ModalityKind(str, Enum):
    LANGUAGE = "language"
    AUDIO = "audio"
    VISUAL = "visual"


# Canonical modality order used everywhere (arrays, files, reports).
MODALITIES: tuple[ModalityKind, ...] = (
    ModalityKind.LANGUAGE,
    ModalityKind.AUDIO,
    ModalityKind.VISUAL,
)

CLASSIFICATION = "classification"
REGRESSION = "regression"
TASKS = (CLASSIFICATION, REGRESSION)

MANIFEST_NAME = "manifest.json"


class DatasetError(Exception):
    """Malformed or inconsistent on-disk dataset."""


class ChecksumError(DatasetError):
    """Stored CRC32 does not match file contents."""


@dataclass
class MultimodalSample:
    """One aligned sample: a (T_m, d_m) float array per modality plus a label."""

    features: dict[ModalityKind, np.ndarray]
    label: float | int

    def validate(self) -> None:
        for kind in MODALITIES:
            arr = self.features[kind]
            if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
                raise ValueError(f"{kind.value} features must be (T, d) with T,d >= 1, got {arr.shape}")
            if not np.isfinite(arr).all():
                raise ValueError(f"{kind.value} features contain non-finite values")


@dataclass
class Split:
    """Stacked arrays for one split: (N, T_m, d_m) per modality and (N,) labels."""

    features: dict[ModalityKind, np.ndarray]
    labels: np.ndarray

    @property
    def n_samples(self) -> int:
        return int(self.labels.shape[0])

    def sample(self, index: int) -> MultimodalSample:
        feats = {kind: np.array(self.features[kind][index]) for kind in MODALITIES}
        return MultimodalSample(features=feats, label=self.labels[index].item())


@dataclass
class Dataset:
    task: str
    seq_lens: dict[ModalityKind, int]
    feat_dims: dict[ModalityKind, int]
    splits: dict[str, Split]
    num_classes: int | None = None
    score_range: tuple[float, float] | None = None
    seed: int | None = None

    @property
    def split_sizes(self) -> dict[str, int]:
        return {name: split.n_samples for name, split in self.splits.items()}


@dataclass
class DatasetManifest:
    task: str
    seq_lens: dict[str, int]
    feat_dims: dict[str, int]
    split_sizes: dict[str, int]
    files: dict[str, dict]
    num_classes: int | None = None
    score_range: tuple[float, float] | None = None
    seed: int | None = None


@dataclass
class SyntheticConfig:
    """Parameters for the seeded synthetic generator.

    ``sentiment_seed`` / ``private_seed`` override the shared-factor and
    private-latent streams independently of ``seed`` (both derive from ``seed``
    when unset), so the two streams can be varied in isolation.
    """

    split_sizes: dict[str, int] = field(default_factory=lambda: {"train": 512, "test": 256})
    seq_lens: dict[ModalityKind, int] = field(
        default_factory=lambda: {kind: 20 for kind in MODALITIES}
    )
    feat_dims: dict[ModalityKind, int] = field(
        default_factory=lambda: {
            ModalityKind.LANGUAGE: 16,
            ModalityKind.AUDIO: 12,
            ModalityKind.VISUAL: 8,
        }
    )
    task: str = CLASSIFICATION
    num_classes: int = 2
    score_range: tuple[float, float] = (-3.0, 3.0)
    noise_scale: float = 0.05
    private_dim: int = 4
    seed: int = 0
    sentiment_seed: int | None = None
    private_seed: int | None = None

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if not self.split_sizes:
            raise ValueError("at least one split required")
        for name, n in self.split_sizes.items():
            if n < 1:
                raise ValueError(f"split {name!r} requests {n} samples; need >= 1")
        for kind in MODALITIES:
            if self.seq_lens[kind] < 1 or self.feat_dims[kind] < 1:
                raise ValueError(f"{kind.value}: T and d must be >= 1")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")
        if self.task == CLASSIFICATION and self.num_classes < 2:
            raise ValueError("classification needs num_classes >= 2")
        if self.private_dim < 1:
            raise ValueError("private_dim must be >= 1")
        lo, hi = self.score_range
        if not lo < hi:
            raise ValueError("score_range must satisfy lo < hi")


def _class_labels(s: np.ndarray, num_classes: int) -> np.ndarray:
    # Equal-mass bins of the standard normal; s exactly on a threshold falls
    # in the lower class (ties break downward).
    thresholds = np.array(
        [NormalDist().inv_cdf((i + 1) / num_classes) for i in range(num_classes - 1)]
    )
    return np.searchsorted(thresholds, s, side="left").astype(np.int32)


def _score_labels(s: np.ndarray, score_range: tuple[float, float]) -> np.ndarray:
    lo, hi = score_range
    mid, half = (lo + hi) / 2.0, (hi - lo) / 2.0
    return (mid + half * np.tanh(s)).astype(np.float32)


def generate_synthetic(config: SyntheticConfig) -> Dataset:
    """Generate a dataset with known shared/private latent structure.

    Same config (seed included) gives a bit-identical dataset. The label is a
    function of the shared factor s only, so regenerating with a different
    ``private_seed`` or ``noise_scale`` leaves all labels unchanged.
    """
    config.validate()

    proj_rng = np.random.default_rng([config.seed, 0])
    sent_seed = config.seed if config.sentiment_seed is None else config.sentiment_seed
    priv_seed = config.seed if config.private_seed is None else config.private_seed
    s_rng = np.random.default_rng([sent_seed, 1])
    n_rng = np.random.default_rng([priv_seed, 2])
    noise_rng = np.random.default_rng([config.seed, 3])

    k = config.private_dim
    proj: dict[ModalityKind, np.ndarray] = {}
    offset: dict[ModalityKind, np.ndarray] = {}
    for kind in MODALITIES:
        width = config.seq_lens[kind] * config.feat_dims[kind]
        proj[kind] = proj_rng.standard_normal((1 + k, width)) / np.sqrt(1 + k)
        offset[kind] = 0.1 * proj_rng.standard_normal(width)

    splits: dict[str, Split] = {}
    for name, n in config.split_sizes.items():
        s = s_rng.standard_normal(n)
        priv = n_rng.standard_normal((n, len(MODALITIES), k))
        feats: dict[ModalityKind, np.ndarray] = {}
        for j, kind in enumerate(MODALITIES):
            t, d = config.seq_lens[kind], config.feat_dims[kind]
            latent = np.concatenate([s[:, None], priv[:, j, :]], axis=1)
            flat = latent @ proj[kind] + offset[kind]
            flat = flat + config.noise_scale * noise_rng.standard_normal((n, t * d))
            feats[kind] = flat.reshape(n, t, d).astype(np.float32)
        if config.task == CLASSIFICATION:
            labels = _class_labels(s, config.num_classes)
        else:
            labels = _score_labels(s, config.score_range)
        splits[name] = Split(features=feats, labels=labels)

    return Dataset(
        task=config.task,
        seq_lens=dict(config.seq_lens),
        feat_dims=dict(config.feat_dims),
        splits=splits,
        num_classes=config.num_classes if config.task == CLASSIFICATION else None,
        score_range=config.score_range if config.task == REGRESSION else None,
        seed=config.seed,
    )


def _array_bytes(arr: np.ndarray, dtype: str) -> bytes:
    return np.ascontiguousarray(arr.astype(dtype, copy=False)).tobytes()


def _label_dtype(task: str) -> tuple[str, str]:
    # (numpy little-endian dtype, file extension)
    return ("<i4", "i32") if task == CLASSIFICATION else ("<f4", "f32")


def save_dataset(dataset: Dataset, directory: str | Path) -> Path:
    """Write raw arrays plus manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    files: dict[str, dict] = {}

    def write(filename: str, arr: np.ndarray, dtype: str) -> None:
        payload = _array_bytes(arr, dtype)
        (directory / filename).write_bytes(payload)
        files[filename] = {
            "shape": list(arr.shape),
            "dtype": dtype,
            "crc32": zlib.crc32(payload) & 0xFFFFFFFF,
        }

    label_dtype, label_ext = _label_dtype(dataset.task)
    for name, split in dataset.splits.items():
        for kind in MODALITIES:
            write(f"{name}_{kind.value}.f32", split.features[kind], "<f4")
        write(f"{name}_labels.{label_ext}", split.labels, label_dtype)

    manifest = {
        "task": dataset.task,
        "num_classes": dataset.num_classes,
        "score_range": list(dataset.score_range) if dataset.score_range else None,
        "seq_lens": {kind.value: dataset.seq_lens[kind] for kind in MODALITIES},
        "feat_dims": {kind.value: dataset.feat_dims[kind] for kind in MODALITIES},
        "split_sizes": dataset.split_sizes,
        "seed": dataset.seed,
        "files": files,
    }
    manifest_path = directory / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path


def _read_array(directory: Path, filename: str, meta: dict) -> np.ndarray:
    path = directory / filename
    if not path.exists():
        raise DatasetError(f"missing data file: {path}")
    payload = path.read_bytes()
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    if crc != meta["crc32"]:
        raise ChecksumError(f"{filename}: crc32 {crc:#010x} != manifest {meta['crc32']:#010x}")
    arr = np.frombuffer(payload, dtype=meta["dtype"])
    expected = int(np.prod(meta["shape"]))
    if arr.size != expected:
        raise DatasetError(
            f"{filename}: holds {arr.size} values but manifest shape {meta['shape']} needs {expected}"
        )
    arr = arr.reshape(meta["shape"])
    if np.issubdtype(arr.dtype, np.floating) and not np.isfinite(arr).all():
        raise DatasetError(f"{filename}: contains NaN/Inf")
    return arr


def load_dataset(directory: str | Path) -> Dataset:
    """Load a dataset directory, verifying checksums and shapes."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise DatasetError(f"missing manifest: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())

    task = manifest["task"]
    if task not in TASKS:
        raise DatasetError(f"manifest task {task!r} unknown")
    seq_lens = {kind: int(manifest["seq_lens"][kind.value]) for kind in MODALITIES}
    feat_dims = {kind: int(manifest["feat_dims"][kind.value]) for kind in MODALITIES}
    _, label_ext = _label_dtype(task)

    splits: dict[str, Split] = {}
    for name, n in manifest["split_sizes"].items():
        feats: dict[ModalityKind, np.ndarray] = {}
        for kind in MODALITIES:
            filename = f"{name}_{kind.value}.f32"
            if filename not in manifest["files"]:
                raise DatasetError(f"manifest lists no entry for {filename}")
            arr = _read_array(directory, filename, manifest["files"][filename])
            expected = (int(n), seq_lens[kind], feat_dims[kind])
            if tuple(arr.shape) != expected:
                raise DatasetError(f"{filename}: shape {arr.shape} != manifest dims {expected}")
            feats[kind] = arr
        label_file = f"{name}_labels.{label_ext}"
        if label_file not in manifest["files"]:
            raise DatasetError(f"manifest lists no entry for {label_file}")
        labels = _read_array(directory, label_file, manifest["files"][label_file])
        if labels.shape != (int(n),):
            raise DatasetError(f"{label_file}: shape {labels.shape} != ({n},)")
        splits[name] = Split(features=feats, labels=labels)

    return Dataset(
        task=task,
        seq_lens=seq_lens,
        feat_dims=feat_dims,
        splits=splits,
        num_classes=manifest.get("num_classes"),
        score_range=tuple(manifest["score_range"]) if manifest.get("score_range") else None,
        seed=manifest.get("seed"),
    )
