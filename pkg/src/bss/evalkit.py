"""Late-fusion inference and classification metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import InputError
from .numkit import softmax


@dataclass
class LogitBundle:
    """Fused-head logits plus one logit vector (or batch) per modality.

    ``weights`` holds one weight for the fused source followed by one per
    modality; ``None`` means all ones.
    """

    z_multi: np.ndarray
    z_uni: Sequence[np.ndarray]
    weights: Optional[Sequence[float]] = None


def late_fusion(bundle: LogitBundle) -> np.ndarray:
    z = np.asarray(bundle.z_multi, dtype=np.float64)
    unis = [np.asarray(u, dtype=np.float64) for u in bundle.z_uni]
    w = bundle.weights
    if w is None:
        w = [1.0] * (1 + len(unis))
    if len(w) != 1 + len(unis):
        raise InputError(f"expected {1 + len(unis)} weights, got {len(w)}")
    total = w[0] * z
    for wj, u in zip(w[1:], unis):
        if u.shape != z.shape:
            raise InputError(f"logit shape mismatch: {u.shape} vs {z.shape}")
        total = total + wj * u
    return total


def predict(bundle: LogitBundle):
    """Argmax class of the fused logits; ties go to the lowest index.

    Works on a single logit vector or row-wise on a batch.
    """
    return np.argmax(late_fusion(bundle), axis=-1)


def fused_probabilities(bundle: LogitBundle) -> np.ndarray:
    return softmax(late_fusion(bundle))


def _check_pair(preds, labels):
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise InputError(f"length mismatch: {preds.shape} vs {labels.shape}")
    if preds.size == 0:
        raise InputError("no predictions")
    return preds, labels


def accuracy(preds, labels) -> float:
    preds, labels = _check_pair(preds, labels)
    return float(np.mean(preds == labels))


def macro_f1(preds, labels, classes: int) -> float:
    """Unweighted mean of per-class F1 over ``range(classes)``.

    A class with no true positives (including one absent from both lists)
    scores 0.
    """
    if classes < 2:
        raise InputError("macro F1 needs at least two classes")
    preds, labels = _check_pair(preds, labels)
    f1 = np.zeros(classes)
    for c in range(classes):
        tp = np.sum((preds == c) & (labels == c))
        fp = np.sum((preds == c) & (labels != c))
        fn = np.sum((preds != c) & (labels == c))
        if tp:
            f1[c] = 2 * tp / (2 * tp + fp + fn)
    return float(f1.mean())


def average_precision(scores, positives) -> float:
    """AP of one ranked list: mean precision at each positive hit.

    Samples are ranked by descending score, ties by ascending index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    if not positives.any():
        raise InputError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    hits = positives[order]
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, len(ranks) + 1) / ranks))


def mean_average_precision(score_matrix, labels) -> float:
    """Class-wise AP averaged over classes that have at least one positive."""
    S = np.asarray(score_matrix, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if S.ndim != 2 or S.shape[0] != labels.shape[0]:
        raise InputError(f"score matrix {S.shape} does not match {labels.shape[0]} labels")
    if not np.all(np.isfinite(S)):
        raise InputError("scores must be finite")
    aps = [
        average_precision(S[:, c], labels == c)
        for c in range(S.shape[1])
        if np.any(labels == c)
    ]
    if not aps:
        raise InputError("no class has a positive sample")
    return float(np.mean(aps))


def roc_auc(scores, positives) -> Optional[float]:
    """Probability that a random positive outscores a random negative
    (ties count one half). ``None`` when either class is empty."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    n_neg = len(positives) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    r = rankdata(scores)
    u = r[positives].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def metric_report(bundle: LogitBundle, labels, classes: int) -> dict:
    """``{acc, map, macro_f1, per_modality: {acc}}`` for a batch of logits."""
    labels = np.asarray(labels, dtype=np.int64)
    preds = predict(bundle)
    return {
        "acc": accuracy(preds, labels),
        "map": mean_average_precision(fused_probabilities(bundle), labels),
        "macro_f1": macro_f1(preds, labels, classes),
        "per_modality": {
            "acc": [accuracy(np.argmax(u, axis=1), labels) for u in bundle.z_uni],
        },
        "fusion_head_acc": accuracy(np.argmax(bundle.z_multi, axis=1), labels),
    }
