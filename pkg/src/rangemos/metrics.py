"""Confusion-matrix IoU evaluation and report serialisation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .dataset_io import IGNORE, MOVING

MOTION_CLASSES = ("static", "moving")
REPORT_SCHEMA = "rangemos.eval/1"


class ConfusionMatrix:
    """Counts indexed ``[truth, prediction]``; samples labelled ``ignore_index`` are skipped."""

    def __init__(self, n_classes=2, ignore_index=IGNORE):
        self.n_classes = n_classes
        self.ignore_index = ignore_index
        self.counts = np.zeros((n_classes, n_classes), dtype=np.int64)

    def update(self, prediction, truth):
        prediction = np.asarray(prediction).astype(np.int64).ravel()
        truth = np.asarray(truth).astype(np.int64).ravel()
        if prediction.shape != truth.shape:
            raise ValueError(f"{len(prediction)} predictions for {len(truth)} labels")
        keep = truth != self.ignore_index
        t, p = truth[keep], prediction[keep]
        K = self.n_classes
        if len(t) and (t.min() < 0 or t.max() >= K or p.min() < 0 or p.max() >= K):
            raise ValueError(f"labels outside [0, {K})")
        self.counts += np.bincount(t * K + p, minlength=K * K).reshape(K, K)
        return self

    def merge(self, other):
        if other.n_classes != self.n_classes:
            raise ValueError("cannot merge confusion matrices of different size")
        out = ConfusionMatrix(self.n_classes, self.ignore_index)
        out.counts = self.counts + other.counts
        return out

    __add__ = merge

    @property
    def total(self):
        return int(self.counts.sum())

    def tp(self):
        return np.diag(self.counts)

    def fp(self):
        return self.counts.sum(axis=0) - self.tp()

    def fn(self):
        return self.counts.sum(axis=1) - self.tp()


def iou(cm):
    """Per-class IoU; classes with a zero denominator are NaN (absent)."""
    tp, fp, fn = cm.tp(), cm.fp(), cm.fn()
    denom = tp + fp + fn
    out = np.full(cm.n_classes, np.nan)
    present = denom > 0
    out[present] = tp[present] / denom[present]
    return out


def mean_iou(cm):
    vals = iou(cm)
    return float(np.nanmean(vals)) if np.isfinite(vals).any() else float("nan")


@dataclass
class EvaluationReport:
    confusion: ConfusionMatrix
    frames: int
    config: dict = field(default_factory=dict)
    class_names: tuple = MOTION_CLASSES

    @property
    def iou(self):
        return iou(self.confusion)

    @property
    def moving_iou(self):
        v = self.iou[MOVING]
        return None if np.isnan(v) else float(v)

    def to_dict(self):
        cm = self.confusion
        classes = {}
        for c, name in enumerate(self.class_names):
            v = self.iou[c]
            classes[name] = {
                "iou": None if np.isnan(v) else round(float(v), 10),
                "tp": int(cm.tp()[c]),
                "fp": int(cm.fp()[c]),
                "fn": int(cm.fn()[c]),
            }
        return {
            "schema": REPORT_SCHEMA,
            "moving_iou": None if self.moving_iou is None else round(self.moving_iou, 10),
            "frames": self.frames,
            "points": cm.total,
            "classes": classes,
            "confusion": cm.counts.tolist(),
            "config": self.config,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self):
        d = self.to_dict()
        mov = "absent" if d["moving_iou"] is None else f"{d['moving_iou']:.6f}"
        lines = [f"moving_iou: {mov}", f"frames: {d['frames']}", f"points: {d['points']}"]
        for name, row in d["classes"].items():
            v = "absent" if row["iou"] is None else f"{row['iou']:.6f}"
            lines.append(f"class {name}: iou={v} tp={row['tp']} fp={row['fp']} fn={row['fn']}")
        for key in sorted(self.config):
            lines.append(f"config {key}: {self.config[key]}")
        return "\n".join(lines) + "\n"


def evaluate_sequence(predictions, truths, config=None):
    """Pool one confusion matrix over all frames of per-point motion labels.

    ``truths`` items may be :class:`~rangemos.dataset_io.TaskLabels` or plain
    motion label arrays.
    """
    if len(predictions) != len(truths):
        raise ValueError(f"{len(predictions)} predicted frames for {len(truths)} labelled frames")
    cm = ConfusionMatrix(len(MOTION_CLASSES))
    for i, (pred, truth) in enumerate(zip(predictions, truths)):
        motion = getattr(truth, "motion", truth)
        if len(pred) != len(motion):
            raise ValueError(f"frame {i}: {len(pred)} predictions for {len(motion)} points")
        cm.update(pred, motion)
    return EvaluationReport(cm, len(predictions), dict(config or {}))
