"""Per-sample balance scoring.

A balance score combines a *correlation* criterion (how much the modalities
agree, via cosine similarity of their predictions or embeddings) with an
*information* criterion (how hard the sample is, via its total loss or its
gradient norm)::

    score = norm(correlation) - norm(information)

where ``norm`` is min-max over the whole dataset. Higher means more balanced.
Single-criterion kinds keep the same orientation: ``+norm(similarity)`` or
``-norm(information)``.

For more than two modalities the correlation is the mean cosine similarity
over all unordered modality pairs.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from itertools import combinations
from typing import Optional

import numpy as np

from . import mmnet
from .errors import InputError
from .numkit import cosine_similarity_rows, min_max_normalize


class CriterionKind(enum.Enum):
    PRED_SIM = "predsim"
    FEAT_SIM = "featsim"
    LOSS = "loss"
    GRAD_MAG = "gradmag"
    PRED_SIM_LOSS = "predsim-loss"
    PRED_SIM_GRAD_MAG = "predsim-gradmag"
    FEAT_SIM_LOSS = "featsim-loss"
    FEAT_SIM_GRAD_MAG = "featsim-gradmag"

    @property
    def correlation(self) -> Optional[str]:
        head = self.value.split("-")[0]
        return head if head in ("predsim", "featsim") else None

    @property
    def information(self) -> Optional[str]:
        tail = self.value.split("-")[-1]
        return tail if tail in ("loss", "gradmag") else None

    @classmethod
    def parse(cls, name) -> "CriterionKind":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower().replace("&", "-").replace("_", "-"))
        except ValueError:
            options = ", ".join(k.value for k in cls)
            raise InputError(f"unknown criterion {name!r} (choose from {options})") from None


@dataclass(frozen=True)
class BalanceRecord:
    sample_index: int
    correlation_raw: Optional[float]
    information_raw: Optional[float]
    score: float


def _mean_pairwise_cosine(vectors: list[np.ndarray]) -> np.ndarray:
    if len(vectors) < 2:
        raise InputError("similarity needs at least two modalities")
    pairs = [cosine_similarity_rows(a, b) for a, b in combinations(vectors, 2)]
    return np.mean(pairs, axis=0)


def prediction_similarity(trace: mmnet.ForwardTrace) -> np.ndarray:
    """Cosine similarity of the uni-modal prediction vectors, per sample."""
    return _mean_pairwise_cosine(trace.uni_probs)


def feature_similarity(trace: mmnet.ForwardTrace) -> np.ndarray:
    """Cosine similarity of the modality embeddings, per sample."""
    return _mean_pairwise_cosine(trace.embeddings)


def combine_scores(correlation, information) -> np.ndarray:
    """Min-max normalize each criterion over the dataset and combine them.

    Either argument may be ``None`` for single-criterion scoring.
    """
    if correlation is None and information is None:
        raise InputError("need at least one criterion")
    score = 0.0
    if correlation is not None:
        score = score + min_max_normalize(correlation)
    if information is not None:
        score = score - min_max_normalize(information)
    return np.asarray(score, dtype=np.float64)


def criterion_values(model, features, labels, criterion, alpha=0.2, grad_scope="heads"):
    """Raw (correlation, information) arrays for ``criterion``; unused ones are None."""
    criterion = CriterionKind.parse(criterion)
    trace = mmnet.forward(model, features)
    corr = info = None
    if criterion.correlation == "predsim":
        corr = prediction_similarity(trace)
    elif criterion.correlation == "featsim":
        corr = feature_similarity(trace)
    if criterion.information == "loss":
        info = mmnet.total_loss(trace, labels, alpha)
    elif criterion.information == "gradmag":
        info = mmnet.per_sample_gradient_norm(model, features, labels, alpha, grad_scope)
    return corr, info


def evaluate_balance_scores(model, dataset, criterion="predsim-loss", alpha=0.2,
                            grad_scope="heads") -> list[BalanceRecord]:
    """Score every sample of ``dataset`` with a frozen ``model``.

    One inference pass, no parameter update; records come back in sample
    order.
    """
    if len(dataset) == 0:
        raise InputError("cannot score an empty dataset")
    corr, info = criterion_values(
        model, dataset.features, dataset.labels, criterion, alpha, grad_scope
    )
    scores = combine_scores(corr, info)
    return [
        BalanceRecord(
            i,
            None if corr is None else float(corr[i]),
            None if info is None else float(info[i]),
            float(scores[i]),
        )
        for i in range(len(scores))
    ]


def scores_of(records) -> np.ndarray:
    return np.array([r.score for r in records], dtype=np.float64)


def rank_by_balance(records_or_scores) -> np.ndarray:
    """Sample indices by descending score; ties keep ascending index order."""
    if len(records_or_scores) == 0:
        raise InputError("nothing to rank")
    first = records_or_scores[0]
    if isinstance(first, BalanceRecord):
        scores = scores_of(records_or_scores)
    else:
        scores = np.asarray(records_or_scores, dtype=np.float64)
    return np.argsort(-scores, kind="stable")


SCORE_CSV_COLUMNS = ("sample_index", "correlation_raw", "information_raw", "balance_score", "rank")


def write_scores_csv(records, path) -> None:
    """Dump records with their rank position (0 = most balanced)."""
    order = rank_by_balance(records)
    rank = np.empty(len(order), dtype=np.int64)
    rank[order] = np.arange(len(order))

    def fmt(v):
        return "" if v is None else repr(v)

    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(SCORE_CSV_COLUMNS)
        for r in records:
            w.writerow([r.sample_index, fmt(r.correlation_raw), fmt(r.information_raw),
                        repr(r.score), int(rank[r.sample_index])])
