"""Command-line surface: dataset generation, teacher/student training,
grid/sweep evaluation, and plot emission.

All commands read a JSON run config (strictly validated, unknown keys
rejected) and write their artifacts under ``--out``. The env var ``HRLF_SEED``
overrides every seed in the config, so experiment matrices can be scripted by
varying one variable. Commands exit 0 only when every requested artifact was
written and validated; reruns with identical config and seeds reproduce
payload files byte for byte.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np
import torch

from .data import (
    MODALITIES,
    DatasetError,
    ModalityKind,
    SyntheticConfig,
    generate_synthetic,
    load_dataset,
    save_dataset,
)
from .encoder import DivergenceError, EncoderConfig
from .eval import RATIO_GRID, ConditionReport, SweepReport, run_condition_grid, run_ratio_sweep
from .msm import MsmPolicy, TestingCondition
from .trainer import (
    CheckpointError,
    TrainConfig,
    load_bundle,
    save_aux,
    save_bundle,
    train_student,
    train_teacher,
)

ABLATABLE = ("frf", "hmi", "hal")


class ConfigError(Exception):
    """Run config violates the schema."""


class CliError(Exception):
    """Bad command input (missing/malformed files, impossible request)."""


@dataclasses.dataclass
class DataSection:
    path: str | None = None
    synthetic: SyntheticConfig = dataclasses.field(default_factory=SyntheticConfig)


@dataclasses.dataclass
class EvalSection:
    metric: str = "f1"
    split: str = "test"
    sweep_conditions: tuple[TestingCondition, ...] = (TestingCondition.LAV,)
    ratios: tuple[float, ...] = RATIO_GRID
    draws: int = 3
    seed: int = 0
    batch_size: int = 256


@dataclasses.dataclass
class RunConfig:
    data: DataSection = dataclasses.field(default_factory=DataSection)
    encoder: EncoderConfig = dataclasses.field(default_factory=EncoderConfig)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    eval: EvalSection = dataclasses.field(default_factory=EvalSection)


def _check_keys(mapping: dict, allowed: tuple[str, ...], path: str) -> None:
    if not isinstance(mapping, dict):
        raise ConfigError(f"{path}: expected an object")
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")


def _modality_map(mapping: dict, path: str) -> dict[ModalityKind, int]:
    _check_keys(mapping, tuple(k.value for k in MODALITIES), path)
    out = {}
    for kind in MODALITIES:
        if kind.value not in mapping:
            raise ConfigError(f"{path}: missing key {kind.value!r}")
        out[kind] = int(mapping[kind.value])
    return out


def _simple_section(cls, mapping: dict, path: str):
    """Build a flat dataclass from a mapping, rejecting unknown keys."""
    names = tuple(f.name for f in dataclasses.fields(cls))
    _check_keys(mapping, names, path)
    return cls(**mapping)


def _parse_synthetic(mapping: dict, path: str) -> SyntheticConfig:
    names = tuple(f.name for f in dataclasses.fields(SyntheticConfig))
    _check_keys(mapping, names, path)
    kwargs = dict(mapping)
    if "seq_lens" in kwargs:
        kwargs["seq_lens"] = _modality_map(kwargs["seq_lens"], f"{path}.seq_lens")
    if "feat_dims" in kwargs:
        kwargs["feat_dims"] = _modality_map(kwargs["feat_dims"], f"{path}.feat_dims")
    if "score_range" in kwargs:
        kwargs["score_range"] = tuple(kwargs["score_range"])
    return SyntheticConfig(**kwargs)


def _parse_condition(name: str, path: str) -> TestingCondition:
    try:
        return TestingCondition(name)
    except ValueError:
        raise ConfigError(f"{path}: unknown condition {name!r}") from None


def _parse_train(mapping: dict, path: str) -> TrainConfig:
    names = tuple(f.name for f in dataclasses.fields(TrainConfig))
    _check_keys(mapping, names, path)
    kwargs = dict(mapping)
    if "msm" in kwargs:
        msm = kwargs["msm"]
        _check_keys(msm, ("ratios", "subsets"), f"{path}.msm")
        policy = MsmPolicy()
        if "ratios" in msm:
            policy.ratios = tuple(float(p) for p in msm["ratios"])
        if "subsets" in msm:
            policy.subsets = tuple(
                _parse_condition(s, f"{path}.msm.subsets") for s in msm["subsets"]
            )
        kwargs["msm"] = policy
    config = TrainConfig(**kwargs)
    config.validate()
    return config


def _parse_eval(mapping: dict, path: str) -> EvalSection:
    names = tuple(f.name for f in dataclasses.fields(EvalSection))
    _check_keys(mapping, names, path)
    kwargs = dict(mapping)
    if "sweep_conditions" in kwargs:
        kwargs["sweep_conditions"] = tuple(
            _parse_condition(s, f"{path}.sweep_conditions") for s in kwargs["sweep_conditions"]
        )
    if "ratios" in kwargs:
        kwargs["ratios"] = tuple(float(p) for p in kwargs["ratios"])
    return EvalSection(**kwargs)


def parse_run_config(payload: dict) -> RunConfig:
    _check_keys(payload, ("data", "encoder", "train", "eval"), "config")
    config = RunConfig()
    if "data" in payload:
        _check_keys(payload["data"], ("path", "synthetic"), "config.data")
        section = DataSection()
        if "path" in payload["data"]:
            section.path = payload["data"]["path"]
        if "synthetic" in payload["data"]:
            section.synthetic = _parse_synthetic(payload["data"]["synthetic"], "config.data.synthetic")
        config.data = section
    if "encoder" in payload:
        config.encoder = _simple_section(EncoderConfig, payload["encoder"], "config.encoder")
        try:
            config.encoder.validate()
        except ValueError as exc:
            raise ConfigError(f"config.encoder: {exc}") from None
    if "train" in payload:
        try:
            config.train = _parse_train(payload["train"], "config.train")
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config.train: {exc}") from None
    if "eval" in payload:
        config.eval = _parse_eval(payload["eval"], "config.eval")
    return config


def load_run_config(path: str | Path, env: dict | None = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    try:
        config = parse_run_config(payload)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None

    env = os.environ if env is None else env
    if "HRLF_SEED" in env:
        try:
            seed = int(env["HRLF_SEED"])
        except ValueError:
            raise ConfigError(f"HRLF_SEED must be an integer, got {env['HRLF_SEED']!r}") from None
        config.data.synthetic.seed = seed
        config.train.seed = seed
        config.eval.seed = seed
    try:
        config.data.synthetic.validate()
        config.train.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return config


def _dataset_dir(config: RunConfig, out: Path) -> Path:
    return Path(config.data.path) if config.data.path else out / "dataset"


def _load_data(config: RunConfig, out: Path):
    directory = _dataset_dir(config, out)
    if not (directory / "manifest.json").exists():
        raise CliError(f"no dataset at {directory}; run gen-data or set data.path")
    dataset = load_dataset(directory)
    if dataset.task != config.train.task:
        raise ConfigError(
            f"dataset task {dataset.task!r} != config.train.task {config.train.task!r}"
        )
    if dataset.task == "classification" and dataset.num_classes != config.train.num_classes:
        raise ConfigError(
            f"dataset has {dataset.num_classes} classes, config.train.num_classes is "
            f"{config.train.num_classes}"
        )
    return dataset


def _write_history(history, path: Path) -> None:
    lines = [json.dumps({"epoch": i, **rec.to_dict()}, sort_keys=True) for i, rec in enumerate(history)]
    path.write_text("\n".join(lines) + "\n")


def cmd_gen_data(config: RunConfig, out: Path) -> Path:
    dataset = generate_synthetic(config.data.synthetic)
    manifest = save_dataset(dataset, _dataset_dir(config, out))
    print(f"wrote dataset: {manifest.parent}")
    return manifest


def cmd_train(
    config: RunConfig,
    out: Path,
    role: str,
    teacher_ckpt: str | None = None,
    ablate: tuple[str, ...] = (),
) -> Path:
    dataset = _load_data(config, out)
    train_cfg = dataclasses.replace(config.train)
    for name in ablate:
        if name not in ABLATABLE:
            raise CliError(f"--ablate accepts {ABLATABLE}, got {name!r}")
        setattr(train_cfg, f"use_{name}", False)

    if role == "teacher":
        net, history = train_teacher(dataset, train_cfg, config.encoder)
        ckpt = out / "teacher"
        save_bundle(net, ckpt)
        _write_history(history, out / "teacher_history.jsonl")
    else:
        teacher_dir = Path(teacher_ckpt) if teacher_ckpt else out / "teacher"
        if not (teacher_dir / "model.json").exists():
            raise CliError(f"missing teacher checkpoint: {teacher_dir}")
        teacher = load_bundle(teacher_dir)
        result = train_student(dataset, teacher, train_cfg, config.encoder)
        ckpt = out / "student"
        save_bundle(result.net, ckpt)
        save_aux(result.stats, out / "stats")
        save_aux(result.discs, out / "discs")
        _write_history(result.history, out / "student_history.jsonl")
    print(f"wrote checkpoint: {ckpt}")
    return ckpt


def cmd_eval(
    config: RunConfig,
    out: Path,
    ckpt: str | None = None,
    grid: bool = False,
    sweep: bool = False,
) -> list[Path]:
    dataset = _load_data(config, out)
    net = load_bundle(Path(ckpt) if ckpt else out / "student")
    if net.task != dataset.task:
        raise CheckpointError(f"checkpoint task {net.task!r} != dataset task {dataset.task!r}")
    dims = {kind: net.feat_dims[kind] for kind in MODALITIES}
    if dims != dataset.feat_dims:
        raise CheckpointError("checkpoint feature dims disagree with dataset manifest")
    section = config.eval
    if section.split not in dataset.splits:
        raise ConfigError(f"eval.split {section.split!r} not in dataset splits")
    split = dataset.splits[section.split]

    reports_dir = out / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def emit(report: ConditionReport | SweepReport, stem: str) -> None:
        json_path = reports_dir / f"{stem}.json"
        json_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
        (reports_dir / f"{stem}.txt").write_text(report.render_table())
        written.append(json_path)

    if grid:
        report = run_condition_grid(
            net, split, dataset.task, metric=section.metric, batch_size=section.batch_size
        )
        emit(report, f"grid_{section.metric}")
    if sweep:
        report = run_ratio_sweep(
            net,
            split,
            dataset.task,
            metric=section.metric,
            conditions=section.sweep_conditions,
            ratios=section.ratios,
            draws=section.draws,
            seed=section.seed,
            batch_size=section.batch_size,
        )
        emit(report, f"sweep_{section.metric}")
    for path in written:
        print(f"wrote report: {path}")
    return written


def _load_report(path: Path) -> ConditionReport | SweepReport:
    if not path.exists():
        raise CliError(f"report not found: {path}")
    try:
        payload = json.loads(path.read_text())
        if payload.get("type") == "grid":
            return ConditionReport.from_dict(payload)
        if payload.get("type") == "sweep":
            return SweepReport.from_dict(payload)
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CliError(f"malformed report {path}: {exc}") from None
    raise CliError(f"malformed report {path}: unknown type {payload.get('type')!r}")


def cmd_plot(report_paths: list[str], out: Path) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    reports = [(Path(p), _load_report(Path(p))) for p in report_paths]
    sweeps = [(p, r) for p, r in reports if isinstance(r, SweepReport)]
    grids = [(p, r) for p, r in reports if isinstance(r, ConditionReport)]
    plots_dir = out / "plots"
    plots_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    if sweeps:
        fig, ax = plt.subplots(figsize=(6, 4))
        for path, report in sweeps:
            ax.plot(report.ratios, report.values, marker="o", label=path.stem)
        ax.set_xlabel("frame drop ratio p")
        ax.set_ylabel(sweeps[0][1].metric)
        ax.legend()
        ax.grid(True, alpha=0.3)
        target = plots_dir / "sweep.png"
        fig.savefig(target, dpi=100, metadata={"Software": "hrlf"})
        plt.close(fig)
        written.append(target)

    if grids:
        columns = [c for c in ("l", "a", "v", "la", "lv", "av", "Avg.", "lav")]
        fig, ax = plt.subplots(figsize=(8, 4))
        width = 0.8 / len(grids)
        x = np.arange(len(columns))
        for j, (path, report) in enumerate(grids):
            heights = [
                report.avg_missing if c == "Avg." else report.values[c] for c in columns
            ]
            ax.bar(x + j * width, heights, width=width, label=path.stem)
        ax.set_xticks(x + 0.4 - width / 2)
        ax.set_xticklabels(columns)
        ax.set_ylabel(grids[0][1].metric)
        ax.legend()
        target = plots_dir / "grid.png"
        fig.savefig(target, dpi=100, metadata={"Software": "hrlf"})
        plt.close(fig)
        written.append(target)

    if not written:
        raise CliError("no plottable reports given")
    for path in written:
        print(f"wrote plot: {path}")
    return written


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hrlf")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate a synthetic dataset")
    gen.add_argument("--config", required=True)
    gen.add_argument("--out", required=True)

    train = sub.add_parser("train", help="train the teacher or the student")
    train.add_argument("--config", required=True)
    train.add_argument("--out", required=True)
    train.add_argument("--role", required=True, choices=("teacher", "student"))
    train.add_argument("--teacher-ckpt", default=None)
    train.add_argument("--ablate", action="append", default=[], choices=ABLATABLE)

    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("--config", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--ckpt", default=None)
    ev.add_argument("--grid", action="store_true")
    ev.add_argument("--sweep", action="store_true")

    plot = sub.add_parser("plot", help="render report files to PNG")
    plot.add_argument("--out", required=True)
    plot.add_argument("reports", nargs="+")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    torch.set_num_threads(1)
    try:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "plot":
            cmd_plot(args.reports, out)
            return 0
        config = load_run_config(args.config)
        if args.command == "gen-data":
            cmd_gen_data(config, out)
        elif args.command == "train":
            cmd_train(
                config,
                out,
                role=args.role,
                teacher_ckpt=args.teacher_ckpt,
                ablate=tuple(args.ablate),
            )
        elif args.command == "eval":
            if not (args.grid or args.sweep):
                raise CliError("eval needs --grid and/or --sweep")
            cmd_eval(config, out, ckpt=args.ckpt, grid=args.grid, sweep=args.sweep)
        return 0
    except (ConfigError, CliError, DatasetError, CheckpointError, DivergenceError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
