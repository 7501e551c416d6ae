"""Classification metrics: accuracy, positive-class recall, rank-based AUC."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from ..models import class_scores, loss_and_dlogits

POSITIVE = 1


@dataclass
class Metrics:
    accuracy: float
    recall: Optional[float]
    auc: Optional[float]
    loss: float

    def as_dict(self) -> dict:
        return asdict(self)


def accuracy(y_true, y_pred) -> float:
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    return float(np.mean(y_true == y_pred))


def recall(y_true, y_pred, positive: int = POSITIVE) -> Optional[float]:
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    pos = y_true == positive
    if not pos.any():
        return None
    tp = np.sum(pos & (y_pred == positive))
    return float(tp / pos.sum())


def roc_auc(y_true, scores, positive: int = POSITIVE) -> Optional[float]:
    """Mann-Whitney AUC with average ranks for ties; None for single-class input."""
    y_true = np.asarray(y_true)
    pos = y_true == positive
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(np.asarray(scores, dtype=float))
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def evaluate(model, params, data, shots: Optional[int] = None,
             rng: Optional[np.random.Generator] = None) -> Metrics:
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    logits = model.logits(params, data.X, shots=shots, rng=rng)
    loss, _ = loss_and_dlogits(logits, data.y, model.n_classes)
    pred, score = class_scores(logits, model.n_classes)
    return Metrics(accuracy(data.y, pred), recall(data.y, pred), roc_auc(data.y, score), loss)
