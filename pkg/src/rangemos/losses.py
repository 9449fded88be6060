"""Per-branch loss (weighted cross-entropy + Lovasz-Softmax) and the two-branch total."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset_io import IGNORE

PROB_FLOOR = 1e-12
NORM_TOL = 1e-6


def _check_inputs(probabilities, labels, ignore_index):
    probs = np.asarray(probabilities, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    if probs.ndim != 2:
        raise ValueError(f"probabilities must be (N, K), got {probs.shape}")
    if len(labels) != len(probs):
        raise ValueError(f"{len(labels)} labels for {len(probs)} samples")
    keep = labels != ignore_index
    probs, labels = probs[keep], labels[keep]
    if len(probs) and np.abs(probs.sum(axis=1) - 1.0).max() > NORM_TOL:
        raise ValueError("probability rows must sum to 1")
    if len(labels) and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise ValueError(f"labels outside [0, {probs.shape[1]})")
    return probs, labels


def weighted_ce(probabilities, labels, weights=None, ignore_index=IGNORE):
    """Mean over non-ignored samples of ``-weights[y] * ln p_y``."""
    probs, labels = _check_inputs(probabilities, labels, ignore_index)
    K = probs.shape[1]
    w = np.ones(K) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (K,):
        raise ValueError(f"expected {K} class weights, got shape {w.shape}")
    if (w < 0).any():
        raise ValueError("class weights must be non-negative")
    if len(labels) == 0:
        return 0.0
    p_true = np.maximum(probs[np.arange(len(labels)), labels], PROB_FLOOR)
    return float(np.mean(-w[labels] * np.log(p_true)))


def lovasz_grad(fg_sorted):
    """Discrete gradient of the Jaccard loss along errors sorted in decreasing order."""
    gts = fg_sorted.sum()
    intersection = gts - np.cumsum(fg_sorted)
    union = gts + np.cumsum(1.0 - fg_sorted)
    jaccard = 1.0 - intersection / union
    jaccard[1:] = jaccard[1:] - jaccard[:-1]
    return jaccard


def lovasz_softmax(probabilities, labels, ignore_index=IGNORE, per_class=False):
    """Lovasz-Softmax loss averaged over the classes present in ``labels``."""
    probs, labels = _check_inputs(probabilities, labels, ignore_index)
    losses = {}
    for c in range(probs.shape[1]):
        fg = (labels == c).astype(np.float64)
        if not fg.any():
            continue
        errors = np.abs(fg - probs[:, c])
        order = np.argsort(-errors, kind="stable")
        losses[c] = float(errors[order] @ lovasz_grad(fg[order]))
    if per_class:
        return losses
    return float(np.mean(list(losses.values()))) if losses else 0.0


def class_weights(counts, eps=1e-3):
    """Inverse square-root class frequency, ``1 / sqrt(freq + eps)``."""
    counts = np.asarray(counts, dtype=np.float64)
    freq = counts / max(counts.sum(), 1.0)
    return 1.0 / np.sqrt(freq + eps)


@dataclass(frozen=True)
class BranchLoss:
    wce: float
    lovasz: float

    @property
    def total(self):
        return self.wce + self.lovasz


@dataclass(frozen=True)
class LossReport:
    semantic: BranchLoss
    motion: BranchLoss

    @property
    def grand_total(self):
        return self.semantic.total + self.motion.total


def branch_loss(probabilities, labels, weights=None, ignore_index=IGNORE):
    return BranchLoss(
        weighted_ce(probabilities, labels, weights, ignore_index),
        lovasz_softmax(probabilities, labels, ignore_index),
    )


def total_loss(semantic, motion, ignore_index=IGNORE):
    """Sum of both branch losses.

    ``semantic`` and ``motion`` are ``(probabilities, labels[, weights])``
    tuples; the semantic branch is scored on mobility labels and the motion
    branch on motion labels.
    """
    return LossReport(
        branch_loss(*semantic, ignore_index=ignore_index),
        branch_loss(*motion, ignore_index=ignore_index),
    )
