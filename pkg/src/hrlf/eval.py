"""Metrics, the seven-condition availability grid, and the frame-drop ratio sweep.

Binary F1 binarizes real scores by sign (exactly 0 counts as negative). The
degenerate cases are fixed: no predicted and no actual positives scores 1.0;
positives on one side only scores 0.0. Grid reports carry one value per
availability condition plus the mean over the six missing conditions; sweep
reports carry one value per drop ratio on the 11-point grid, averaged over a
few mask draws.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import CLASSIFICATION, MODALITIES, Split
from .msm import CONDITIONS, MISSING_CONDITIONS, MissingSpec, TestingCondition
from .trainer import SentimentNet, predict

RATIO_GRID: tuple[float, ...] = tuple(i / 10 for i in range(11))

METRICS = ("f1", "mae")


def _f1_from_counts(tp: int, fp: int, fn: int) -> float:
    if tp == 0 and fp == 0 and fn == 0:
        return 1.0
    if tp == 0:
        return 0.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def metric_f1_binary(scores: np.ndarray, labels: np.ndarray) -> float:
    """F1 of the positive class after binarizing scores and labels by sign."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("empty input")
    pred = scores > 0
    actual = labels > 0
    tp = int(np.sum(pred & actual))
    fp = int(np.sum(pred & ~actual))
    fn = int(np.sum(~pred & actual))
    return _f1_from_counts(tp, fp, fn)


def metric_mae(scores: np.ndarray, labels: np.ndarray) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("empty input")
    return float(np.mean(np.abs(scores - labels)))


def metric_f1_per_class(logits: np.ndarray, labels: np.ndarray, num_classes: int) -> np.ndarray:
    """One-vs-rest F1 per class from argmax predictions."""
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.size == 0:
        raise ValueError("empty input")
    pred = np.argmax(logits, axis=-1)
    out = np.zeros(num_classes)
    for c in range(num_classes):
        tp = int(np.sum((pred == c) & (labels == c)))
        fp = int(np.sum((pred == c) & (labels != c)))
        fn = int(np.sum((pred != c) & (labels == c)))
        out[c] = _f1_from_counts(tp, fp, fn)
    return out


def _grid_value(logits: np.ndarray, labels: np.ndarray, task: str, metric: str) -> float:
    """Scalar metric for one evaluation cell."""
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}, got {metric!r}")
    if task == CLASSIFICATION:
        k = logits.shape[-1]
        if metric == "mae":
            return metric_mae(np.argmax(logits, axis=-1), labels)
        if k == 2:
            margin = logits[:, 1] - logits[:, 0]
            signed = np.where(labels > 0, 1.0, -1.0)
            return metric_f1_binary(margin, signed)
        return float(np.mean(metric_f1_per_class(logits, labels, k)))
    scores = logits[:, 0]
    if metric == "mae":
        return metric_mae(scores, labels)
    return metric_f1_binary(scores, labels)


@dataclass
class ConditionReport:
    """Metric per availability condition, the six-missing mean, and the
    complete-modality value."""

    metric: str
    values: dict[str, float]
    avg_missing: float
    complete: float

    def to_dict(self) -> dict:
        return {
            "type": "grid",
            "metric": self.metric,
            "cells": [
                {"condition": c.value, "metric": self.metric, "value": self.values[c.value]}
                for c in CONDITIONS
            ],
            "avg_missing": self.avg_missing,
            "complete": self.complete,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ConditionReport":
        values = {cell["condition"]: cell["value"] for cell in payload["cells"]}
        return cls(
            metric=payload["metric"],
            values=values,
            avg_missing=payload["avg_missing"],
            complete=payload["complete"],
        )

    def render_table(self) -> str:
        header = [c.value for c in MISSING_CONDITIONS] + ["Avg.", "lav"]
        row = [f"{self.values[c.value]:.4f}" for c in MISSING_CONDITIONS]
        row += [f"{self.avg_missing:.4f}", f"{self.complete:.4f}"]
        widths = [max(len(h), len(v)) for h, v in zip(header, row)]
        lines = [
            "  ".join(h.rjust(w) for h, w in zip(header, widths)),
            "  ".join(v.rjust(w) for v, w in zip(row, widths)),
        ]
        return f"metric: {self.metric}\n" + "\n".join(lines) + "\n"


@dataclass
class SweepReport:
    """Metric per frame-drop ratio, averaged over mask draws and conditions."""

    metric: str
    ratios: list[float]
    values: list[float]
    conditions: list[str]
    draws: int
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "type": "sweep",
            "metric": self.metric,
            "conditions": self.conditions,
            "draws": self.draws,
            "seed": self.seed,
            "cells": [
                {"ratio": r, "metric": self.metric, "value": v}
                for r, v in zip(self.ratios, self.values)
            ],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "SweepReport":
        return cls(
            metric=payload["metric"],
            ratios=[cell["ratio"] for cell in payload["cells"]],
            values=[cell["value"] for cell in payload["cells"]],
            conditions=list(payload["conditions"]),
            draws=payload["draws"],
            seed=payload.get("seed", 0),
        )

    def render_table(self) -> str:
        lines = [f"metric: {self.metric}  conditions: {','.join(self.conditions)}  draws: {self.draws}"]
        lines.append(f"{'p':>4}  {self.metric:>10}")
        for r, v in zip(self.ratios, self.values):
            lines.append(f"{r:>4.1f}  {v:>10.4f}")
        return "\n".join(lines) + "\n"


def run_condition_grid(
    net: SentimentNet,
    split: Split,
    task: str,
    metric: str = "f1",
    batch_size: int = 256,
) -> ConditionReport:
    """Evaluate under each of the seven availability conditions."""
    values: dict[str, float] = {}
    for condition in CONDITIONS:
        logits = predict(net, split.features, condition, batch_size=batch_size)
        values[condition.value] = _grid_value(logits, split.labels, task, metric)
    avg = float(np.mean([values[c.value] for c in MISSING_CONDITIONS]))
    return ConditionReport(
        metric=metric,
        values=values,
        avg_missing=avg,
        complete=values[TestingCondition.LAV.value],
    )


def run_ratio_sweep(
    net: SentimentNet,
    split: Split,
    task: str,
    metric: str = "f1",
    conditions: tuple[TestingCondition, ...] = (TestingCondition.LAV,),
    ratios: tuple[float, ...] = RATIO_GRID,
    draws: int = 3,
    seed: int = 0,
    batch_size: int = 256,
) -> SweepReport:
    """For each drop ratio, mask the retained modalities at that ratio with a
    fresh recorded seed per (ratio, draw) and average the metric."""
    if draws < 1:
        raise ValueError("draws must be >= 1")
    values = []
    for i, p in enumerate(ratios):
        cell = []
        for condition in conditions:
            for draw in range(draws):
                spec_seed = int(np.random.SeedSequence([seed, i, draw]).generate_state(1)[0])
                spec = MissingSpec.uniform(p, retained=condition.retained, seed=spec_seed)
                logits = predict(net, split.features, spec, batch_size=batch_size)
                cell.append(_grid_value(logits, split.labels, task, metric))
        values.append(float(np.mean(cell)))
    return SweepReport(
        metric=metric,
        ratios=list(ratios),
        values=values,
        conditions=[c.value for c in conditions],
        draws=draws,
        seed=seed,
    )
