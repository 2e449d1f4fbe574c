"""Training orchestration: teacher pretraining on complete modalities, student
distillation under stochastic masking, the assembled objective, prediction,
and raw-array checkpointing.

The teacher minimizes task + factorization loss on complete inputs and is then
frozen. The student sees masked inputs and minimizes task + factorization +
mutual-information + adversarial-generator + logit-consistency terms, while a
separate Adam instance takes one discriminator step per student step. Ablation
flags zero individual terms; every reported term is the contribution as it
enters the optimized total (loss weights applied), so the reported total is
always the exact sum of the reported parts.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import CLASSIFICATION, MODALITIES, REGRESSION, TASKS, Dataset, ModalityKind, MultimodalSample
from .encoder import DivergenceError, EncoderConfig, ModalityEncoder
from .frf import FactorizationModule
from .fusion import FusionModule, ScaleStack
from .hal import ScaleDiscriminators
from .hmi import StatisticsNets, loss_hmi
from .msm import MissingSpec, MsmPolicy, TestingCondition, apply_msm_batch, condition_mask_batch

MODEL_MANIFEST = "model.json"


class CheckpointError(Exception):
    """Checkpoint directory disagrees with its manifest or the target module."""


def _derive(seed: int, tag: str) -> int:
    return zlib.crc32(f"{seed}:{tag}".encode())


@dataclass
class TrainConfig:
    task: str = CLASSIFICATION
    num_classes: int = 2
    lr: float = 1e-3
    disc_lr: float | None = None
    batch_size: int = 64
    teacher_epochs: int = 100
    student_epochs: int = 60
    seed: int = 0
    use_frf: bool = True
    use_hmi: bool = True
    use_hal: bool = True
    w_task: float = 1.0
    w_frf: float = 1.0
    w_hmi: float = 1.0
    w_hal: float = 1.0
    w_kl: float = 1.0
    kl_temperature: float = 1.0
    grad_clip: float = 5.0
    disc_steps: int = 1
    squared_norm: bool = False
    scale_combine: str = "mean"
    msm: MsmPolicy = field(default_factory=MsmPolicy)

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")
        if self.task == CLASSIFICATION and self.num_classes < 2:
            raise ValueError("classification needs num_classes >= 2")
        if self.lr <= 0 or (self.disc_lr is not None and self.disc_lr <= 0):
            raise ValueError("learning rates must be positive")
        if self.batch_size < 1 or self.teacher_epochs < 1 or self.student_epochs < 1:
            raise ValueError("batch_size and epoch counts must be >= 1")
        if self.disc_steps < 1:
            raise ValueError("disc_steps must be >= 1")
        if self.kl_temperature <= 0:
            raise ValueError("kl_temperature must be positive")
        self.msm.validate()


@dataclass
class LossBreakdown:
    """Named per-step (or per-epoch mean) loss terms, weights applied."""

    task: float = 0.0
    frf_self: float = 0.0
    frf_cross: float = 0.0
    frf_recon: float = 0.0
    frf_total: float = 0.0
    hmi: float = 0.0
    hal_gen: float = 0.0
    hal_disc: float = 0.0
    kl: float = 0.0
    total: float = 0.0

    def to_dict(self) -> dict[str, float]:
        return asdict(self)

    def add_(self, other: "LossBreakdown") -> None:
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))

    def scale_(self, factor: float) -> None:
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) * factor)


@dataclass
class NetOutput:
    z: dict[ModalityKind, torch.Tensor]
    pairs: dict[ModalityKind, tuple[torch.Tensor, torch.Tensor]]
    stack: ScaleStack
    logits: torch.Tensor


class SentimentNet(nn.Module):
    """Full per-network bundle: three modality encoders, factorization,
    fusion/refinement, and the task head on the refined joint vector."""

    def __init__(
        self,
        feat_dims: dict[ModalityKind, int],
        encoder: EncoderConfig | None = None,
        task: str = CLASSIFICATION,
        num_classes: int | None = 2,
        role: str = "teacher",
        squared_norm: bool = False,
        scale_combine: str = "mean",
    ):
        super().__init__()
        if task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")
        if task == CLASSIFICATION and (num_classes is None or num_classes < 2):
            raise ValueError("classification needs num_classes >= 2")
        encoder = encoder or EncoderConfig()
        d = encoder.embed_dim
        self.task = task
        self.num_classes = num_classes if task == CLASSIFICATION else None
        self.role = role
        self.feat_dims = dict(feat_dims)
        self.encoder_config = encoder
        self.encoders = nn.ModuleDict(
            {kind.value: ModalityEncoder(feat_dims[kind], encoder) for kind in MODALITIES}
        )
        self.frf = FactorizationModule(d, squared_norm=squared_norm)
        self.fusion = FusionModule(d, scale_combine=scale_combine)
        out_dim = self.num_classes if task == CLASSIFICATION else 1
        self.head = nn.Linear(3 * d, out_dim)

    def classify(self, refined: torch.Tensor) -> torch.Tensor:
        return self.head(refined)

    def forward(self, features: dict[ModalityKind, torch.Tensor]) -> NetOutput:
        z = {kind: self.encoders[kind.value](features[kind]) for kind in MODALITIES}
        pairs = self.frf.factorize_all(z)
        stack = self.fusion(pairs)
        logits = self.classify(stack.refined)
        return NetOutput(z=z, pairs=pairs, stack=stack, logits=logits)

    def arch_meta(self) -> dict:
        return {
            "kind": "sentiment_net",
            "role": self.role,
            "task": self.task,
            "num_classes": self.num_classes,
            "feat_dims": {kind.value: self.feat_dims[kind] for kind in MODALITIES},
            "encoder": asdict(self.encoder_config),
            "squared_norm": self.frf.squared_norm,
            "scale_combine": self.fusion.scale_combine,
        }


def loss_task(logits: torch.Tensor, labels: torch.Tensor, task: str) -> torch.Tensor:
    """Mean cross-entropy (classification) or mean squared error (regression)."""
    if task == CLASSIFICATION:
        labels = labels.long()
        k = logits.shape[-1]
        if labels.numel() and (labels.min() < 0 or labels.max() >= k):
            raise ValueError(f"label out of range for {k} classes")
        return F.cross_entropy(logits, labels)
    return F.mse_loss(logits.squeeze(-1), labels.float())


def loss_kl(
    teacher_logits: torch.Tensor,
    student_logits: torch.Tensor,
    task: str,
    temperature: float = 1.0,
) -> torch.Tensor:
    """Teacher-to-student consistency; teacher side enters as a constant.

    Classification: KL(softmax(teacher/T) || softmax(student/T)), batch mean.
    Regression: mean squared difference of the scalar outputs.
    """
    t = teacher_logits.detach()
    if task == CLASSIFICATION:
        log_p = F.log_softmax(t / temperature, dim=-1)
        log_q = F.log_softmax(student_logits / temperature, dim=-1)
        return (log_p.exp() * (log_p - log_q)).sum(dim=-1).mean()
    return ((t.squeeze(-1) - student_logits.squeeze(-1)) ** 2).mean()


def _build_net(config: TrainConfig, feat_dims, encoder: EncoderConfig, role: str) -> SentimentNet:
    torch.manual_seed(_derive(config.seed, role))
    return SentimentNet(
        feat_dims,
        encoder=encoder,
        task=config.task,
        num_classes=config.num_classes,
        role=role,
        squared_norm=config.squared_norm,
        scale_combine=config.scale_combine,
    )


def _to_tensors(
    features: dict[ModalityKind, np.ndarray], idx: np.ndarray | None = None
) -> dict[ModalityKind, torch.Tensor]:
    out = {}
    for kind in MODALITIES:
        arr = features[kind] if idx is None else features[kind][idx]
        out[kind] = torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32))
    return out


def _label_tensor(labels: np.ndarray, task: str) -> torch.Tensor:
    if task == CLASSIFICATION:
        return torch.from_numpy(np.ascontiguousarray(labels, dtype=np.int64))
    return torch.from_numpy(np.ascontiguousarray(labels, dtype=np.float32))


def _check_finite(value: float, phase: str, epoch: int, step: int) -> None:
    if not math.isfinite(value):
        raise DivergenceError(
            f"{phase} training diverged: non-finite loss at epoch {epoch}, step {step}"
        )


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train_teacher(
    dataset: Dataset, config: TrainConfig, encoder: EncoderConfig | None = None
) -> tuple[SentimentNet, list[LossBreakdown]]:
    """Train on complete modalities, minimizing task + factorization loss;
    returns the frozen network and per-epoch mean loss breakdowns."""
    config.validate()
    encoder = encoder or EncoderConfig()
    split = dataset.splits["train"]
    net = _build_net(config, dataset.feat_dims, encoder, "teacher")
    opt = torch.optim.Adam(net.parameters(), lr=config.lr)
    shuffle_rng = np.random.default_rng([config.seed, 11])
    labels_all = split.labels

    history: list[LossBreakdown] = []
    for epoch in range(config.teacher_epochs):
        epoch_mean = LossBreakdown()
        n_steps = 0
        for step, idx in enumerate(_epoch_batches(split.n_samples, config.batch_size, shuffle_rng)):
            feats = _to_tensors(split.features, idx)
            labels = _label_tensor(labels_all[idx], config.task)
            out = net(feats)
            task = config.w_task * loss_task(out.logits, labels, config.task)
            record = LossBreakdown(task=task.item())
            total = task
            if config.use_frf:
                frf = net.frf.loss(out.z)
                frf_total = config.w_frf * frf["total"]
                total = total + frf_total
                record.frf_self = config.w_frf * frf["self"].item()
                record.frf_cross = config.w_frf * frf["cross"].item()
                record.frf_recon = config.w_frf * frf["recon"].item()
                record.frf_total = frf_total.item()
            record.total = total.item()
            _check_finite(record.total, "teacher", epoch, step)
            opt.zero_grad()
            total.backward()
            torch.nn.utils.clip_grad_norm_(net.parameters(), config.grad_clip)
            opt.step()
            epoch_mean.add_(record)
            n_steps += 1
        epoch_mean.scale_(1.0 / n_steps)
        history.append(epoch_mean)

    net.requires_grad_(False)
    net.eval()
    return net, history


@dataclass
class TrainedStudent:
    net: SentimentNet
    stats: StatisticsNets
    discs: ScaleDiscriminators
    history: list[LossBreakdown]


def _check_structure(teacher: SentimentNet, student: SentimentNet) -> None:
    t_shapes = [(k, tuple(v.shape)) for k, v in teacher.state_dict().items()]
    s_shapes = [(k, tuple(v.shape)) for k, v in student.state_dict().items()]
    if t_shapes != s_shapes:
        raise ValueError("teacher/student structure mismatch")


def train_student(
    dataset: Dataset,
    teacher: SentimentNet,
    config: TrainConfig,
    encoder: EncoderConfig | None = None,
) -> TrainedStudent:
    """Distill the frozen teacher into a student trained on masked inputs."""
    config.validate()
    encoder = encoder or teacher.encoder_config
    split = dataset.splits["train"]

    teacher.requires_grad_(False)
    teacher.eval()

    student = _build_net(config, dataset.feat_dims, encoder, "student")
    _check_structure(teacher, student)
    torch.manual_seed(_derive(config.seed, "stats"))
    stats = StatisticsNets(encoder.embed_dim)
    torch.manual_seed(_derive(config.seed, "discs"))
    discs = ScaleDiscriminators(encoder.embed_dim)

    student_opt = torch.optim.Adam(
        list(student.parameters()) + list(stats.parameters()), lr=config.lr
    )
    # A full-rate discriminator spots the masked student immediately; its
    # confident rejections then dominate the clipped gradient and starve the
    # task term, so it trains at a quarter of the student rate by default.
    disc_opt = torch.optim.Adam(discs.parameters(), lr=config.disc_lr or config.lr / 4)
    student_side = list(student.parameters()) + list(stats.parameters())
    disc_side = list(discs.parameters())

    shuffle_rng = np.random.default_rng([config.seed, 11])
    msm_rng = np.random.default_rng([config.seed, 12])
    labels_all = split.labels

    history: list[LossBreakdown] = []
    global_step = 0
    for epoch in range(config.student_epochs):
        epoch_mean = LossBreakdown()
        n_steps = 0
        for step, idx in enumerate(_epoch_batches(split.n_samples, config.batch_size, shuffle_rng)):
            batch_feats = {kind: split.features[kind][idx] for kind in MODALITIES}
            specs = [config.msm.sample_spec(msm_rng) for _ in range(len(idx))]
            masked_feats, _ = apply_msm_batch(batch_feats, specs)
            labels = _label_tensor(labels_all[idx], config.task)

            with torch.no_grad():
                t_out = teacher(_to_tensors(batch_feats))
            s_out = student(_to_tensors(masked_feats))

            task = config.w_task * loss_task(s_out.logits, labels, config.task)
            kl = config.w_kl * loss_kl(
                t_out.logits, s_out.logits, config.task, config.kl_temperature
            )
            record = LossBreakdown(task=task.item(), kl=kl.item())
            total = task + kl
            if config.use_frf:
                frf = student.frf.loss(s_out.z)
                frf_total = config.w_frf * frf["total"]
                total = total + frf_total
                record.frf_self = config.w_frf * frf["self"].item()
                record.frf_cross = config.w_frf * frf["cross"].item()
                record.frf_recon = config.w_frf * frf["recon"].item()
                record.frf_total = frf_total.item()
            if config.use_hmi and len(idx) >= 2:
                hmi = config.w_hmi * loss_hmi(t_out.stack, s_out.stack, stats, shuffle_seed=global_step)
                total = total + hmi
                record.hmi = hmi.item()
            if config.use_hal:
                gen = config.w_hal * discs.generator_loss(s_out.stack)
                total = total + gen
                record.hal_gen = gen.item()
            record.total = total.item()
            _check_finite(record.total, "student", epoch, step)

            student_opt.zero_grad()
            total.backward()
            torch.nn.utils.clip_grad_norm_(student_side, config.grad_clip)
            student_opt.step()

            if config.use_hal:
                for _ in range(config.disc_steps):
                    objective = discs.discriminator_objective(t_out.stack, s_out.stack)
                    disc_opt.zero_grad()
                    (-objective).backward()
                    torch.nn.utils.clip_grad_norm_(disc_side, config.grad_clip)
                    disc_opt.step()
                record.hal_disc = objective.item()
                _check_finite(record.hal_disc, "discriminator", epoch, step)

            epoch_mean.add_(record)
            n_steps += 1
            global_step += 1
        epoch_mean.scale_(1.0 / n_steps)
        history.append(epoch_mean)

    return TrainedStudent(net=student, stats=stats, discs=discs, history=history)


def predict(
    net: SentimentNet,
    features: dict[ModalityKind, np.ndarray] | MultimodalSample,
    masking: TestingCondition | MissingSpec | None = None,
    batch_size: int = 256,
) -> np.ndarray:
    """Mask per ``masking`` (availability condition, missing-spec, or none),
    run the network in eval mode, and return logits as a numpy array.

    A MissingSpec given for a batch is expanded to one spec per sample with
    per-sample seeds drawn deterministically from the spec seed.
    """
    single = isinstance(features, MultimodalSample)
    if single:
        features = {kind: features.features[kind][None] for kind in MODALITIES}

    if isinstance(masking, TestingCondition):
        features = condition_mask_batch(features, masking)
    elif isinstance(masking, MissingSpec):
        n = features[MODALITIES[0]].shape[0]
        seeds = np.random.default_rng(masking.seed).integers(2**63, size=n)
        specs = [
            MissingSpec(dict(masking.intra_ratio), masking.retained, int(s)) for s in seeds
        ]
        features, _ = apply_msm_batch(features, specs)

    net.eval()
    n = features[MODALITIES[0]].shape[0]
    chunks = []
    with torch.no_grad():
        for start in range(0, n, batch_size):
            idx = np.arange(start, min(start + batch_size, n))
            out = net(_to_tensors(features, idx))
            chunks.append(out.logits.numpy())
    logits = np.concatenate(chunks, axis=0)
    return logits[0] if single else logits


# --- checkpoints: one raw little-endian array file per tensor plus a manifest ---


def save_module(module: nn.Module, directory: str | Path, meta: dict) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tensors: dict[str, dict] = {}
    for i, (key, tensor) in enumerate(module.state_dict().items()):
        arr = tensor.detach().cpu().numpy()
        dtype = arr.dtype.newbyteorder("<").str
        payload = np.ascontiguousarray(arr.astype(dtype, copy=False)).tobytes()
        filename = f"t{i:04d}.f32"
        (directory / filename).write_bytes(payload)
        tensors[key] = {
            "file": filename,
            "shape": list(arr.shape),
            "dtype": dtype,
            "crc32": zlib.crc32(payload) & 0xFFFFFFFF,
        }
    manifest = dict(meta)
    manifest["tensors"] = tensors
    path = directory / MODEL_MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _read_manifest(directory: Path) -> dict:
    path = directory / MODEL_MANIFEST
    if not path.exists():
        raise CheckpointError(f"missing checkpoint manifest: {path}")
    return json.loads(path.read_text())


def load_module(module: nn.Module, directory: str | Path) -> None:
    directory = Path(directory)
    manifest = _read_manifest(directory)
    state = {}
    expected = module.state_dict()
    for key, meta in manifest["tensors"].items():
        path = directory / meta["file"]
        if not path.exists():
            raise CheckpointError(f"missing tensor file: {path}")
        payload = path.read_bytes()
        crc = zlib.crc32(payload) & 0xFFFFFFFF
        if crc != meta["crc32"]:
            raise CheckpointError(f"{meta['file']}: crc32 mismatch")
        arr = np.frombuffer(payload, dtype=meta["dtype"]).copy()
        if arr.size != int(np.prod(meta["shape"])):
            raise CheckpointError(f"{meta['file']}: size disagrees with manifest shape")
        arr = arr.reshape(meta["shape"])
        if key not in expected:
            raise CheckpointError(f"checkpoint tensor {key!r} not present in module")
        if tuple(arr.shape) != tuple(expected[key].shape):
            raise CheckpointError(
                f"{key}: checkpoint shape {tuple(arr.shape)} != module shape {tuple(expected[key].shape)}"
            )
        state[key] = torch.from_numpy(arr)
    missing = set(expected) - set(state)
    if missing:
        raise CheckpointError(f"checkpoint lacks tensors: {sorted(missing)}")
    module.load_state_dict(state)


def save_bundle(net: SentimentNet, directory: str | Path) -> Path:
    return save_module(net, directory, net.arch_meta())


def load_bundle(directory: str | Path) -> SentimentNet:
    directory = Path(directory)
    meta = _read_manifest(directory)
    if meta.get("kind") != "sentiment_net":
        raise CheckpointError(f"{directory}: not a network checkpoint")
    feat_dims = {kind: int(meta["feat_dims"][kind.value]) for kind in MODALITIES}
    net = SentimentNet(
        feat_dims,
        encoder=EncoderConfig(**meta["encoder"]),
        task=meta["task"],
        num_classes=meta["num_classes"],
        role=meta["role"],
        squared_norm=meta["squared_norm"],
        scale_combine=meta["scale_combine"],
    )
    load_module(net, directory)
    net.eval()
    return net


def save_aux(module: StatisticsNets | ScaleDiscriminators, directory: str | Path) -> Path:
    kind = "statistics_nets" if isinstance(module, StatisticsNets) else "scale_discriminators"
    return save_module(module, directory, {"kind": kind, "embed_dim": module.embed_dim})


def load_aux(directory: str | Path) -> StatisticsNets | ScaleDiscriminators:
    directory = Path(directory)
    meta = _read_manifest(directory)
    if meta.get("kind") == "statistics_nets":
        module: StatisticsNets | ScaleDiscriminators = StatisticsNets(meta["embed_dim"])
    elif meta.get("kind") == "scale_discriminators":
        module = ScaleDiscriminators(meta["embed_dim"])
    else:
        raise CheckpointError(f"{directory}: unknown checkpoint kind {meta.get('kind')!r}")
    load_module(module, directory)
    return module
