"""Evaluation metrics: masked accuracy and rank-based AUC."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, UndefinedMetricError


@dataclass(frozen=True)
class MetricValue:
    kind: str
    split: str
    value: float

    def __post_init__(self):
        if not (0.0 <= self.value <= 1.0):
            raise ContractError(f"metric value {self.value} outside [0, 1]")


def accuracy(logits, labels, mask, split: str = "test") -> MetricValue:
    """Fraction of masked rows whose argmax matches; ties pick the lowest class."""
    mask = np.asarray(mask, dtype=np.int64).reshape(-1)
    if mask.size == 0:
        raise UndefinedMetricError(f"accuracy undefined on empty {split} split")
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    pred = np.argmax(logits[mask], axis=1)
    return MetricValue("accuracy", split, float(np.mean(pred == labels[mask])))


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size)
    i = 0
    while i < scores.size:
        j = i
        while j < scores.size and scores[order[j]] == scores[order[i]]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + j + 1)
        i = j
    return ranks


def auc(scores, labels, mask, split: str = "test") -> MetricValue:
    """Mann-Whitney AUC of class-1 scores; tied pairs count one half."""
    mask = np.asarray(mask, dtype=np.int64).reshape(-1)
    if mask.size == 0:
        raise UndefinedMetricError(f"AUC undefined on empty {split} split")
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)[mask]
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)[mask]
    if set(np.unique(labels)) - {0, 1}:
        raise ContractError("AUC requires binary labels in {0, 1}")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(f"AUC undefined: {split} split has a single class")
    ranks = _average_ranks(scores)
    rank_sum = float(np.sum(ranks[labels == 1]))
    value = (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    return MetricValue("auc", split, float(value))
