"""Evaluation metrics with the conventions used throughout: precision@k with
a constant denominator, micro/macro F1 with zero-division giving 0, and AUC
as the rank statistic (ties count one half).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MetricError(ValueError):
    pass


@dataclass
class EvalRun:
    scores: np.ndarray  # (docs, C) real
    predictions: np.ndarray  # (docs, C) bool
    gold: np.ndarray  # (docs, C) bool
    unseen_in_train: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not (self.scores.shape == self.predictions.shape == self.gold.shape):
            raise MetricError("score/prediction/gold shapes disagree")

    def masked(self) -> "EvalRun":
        """Labels never seen in training become automatic misses: predictions
        forced off and scores pushed below every real score."""
        if self.unseen_in_train is None or not self.unseen_in_train.any():
            return self
        scores = self.scores.copy()
        preds = self.predictions.copy()
        scores[:, self.unseen_in_train] = -np.inf
        preds[:, self.unseen_in_train] = False
        return EvalRun(scores, preds, self.gold, None)


def precision_at_k(
    scores: np.ndarray,
    gold: np.ndarray,
    k: int,
    adjusted_denominator: bool = False,
) -> float:
    """Mean over documents of |top-k scored labels ∩ gold| / k.

    Score ties break toward the lower label id. The denominator is the
    constant k by default (so a document with fewer than k gold labels cannot
    reach 1); the adjusted variant divides by min(k, |gold|) instead.
    """
    if k < 1:
        raise MetricError("k must be >= 1")
    n_docs, n_labels = scores.shape
    if k > n_labels:
        raise MetricError(f"k={k} exceeds label count {n_labels}")
    label_ids = np.arange(n_labels)
    total = 0.0
    for i in range(n_docs):
        order = np.lexsort((label_ids, -scores[i]))
        hits = int(np.sum(gold[i, order[:k]]))
        denom = k if not adjusted_denominator else max(min(k, int(gold[i].sum())), 1)
        total += hits / denom
    return total / n_docs


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def micro_macro_f1(
    predictions: np.ndarray,
    gold: np.ndarray,
    skip_zero_support: bool = False,
) -> dict[str, float]:
    """Micro pools all (doc, label) cells; macro averages per-label P/R/F1
    over all labels, with zero-support labels contributing 0 unless skipped."""
    predictions = predictions.astype(bool)
    gold = gold.astype(bool)
    tp = predictions & gold
    micro = _prf(int(tp.sum()), int((predictions & ~gold).sum()), int((~predictions & gold).sum()))
    per_label = []
    for c in range(gold.shape[1]):
        tpc = int(tp[:, c].sum())
        fpc = int((predictions[:, c] & ~gold[:, c]).sum())
        fnc = int((~predictions[:, c] & gold[:, c]).sum())
        if skip_zero_support and tpc + fpc + fnc == 0:
            continue
        per_label.append(_prf(tpc, fpc, fnc))
    if not per_label:
        raise MetricError("no labels to macro-average")
    macro = tuple(float(np.mean([x[i] for x in per_label])) for i in range(3))
    return {
        "micro_precision": micro[0],
        "micro_recall": micro[1],
        "micro_f1": micro[2],
        "macro_precision": macro[0],
        "macro_recall": macro[1],
        "macro_f1": macro[2],
    }


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the group average."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.shape[0], dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < sorted_vals.shape[0]:
        j = i
        while j + 1 < sorted_vals.shape[0] and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _rank_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    pos = labels.astype(bool)
    n_pos = int(pos.sum())
    n_neg = labels.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC undefined without both positives and negatives")
    ranks = _average_ranks(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc(scores: np.ndarray, gold: np.ndarray) -> dict[str, float]:
    """Micro AUC over pooled cells; macro AUC averaged over labels that have
    at least one positive and one negative (others skipped)."""
    flat_scores = scores.reshape(-1)
    flat_gold = gold.reshape(-1).astype(bool)
    micro = _rank_auc(flat_scores, flat_gold)
    per_label = []
    for c in range(gold.shape[1]):
        col = gold[:, c].astype(bool)
        if col.any() and not col.all():
            per_label.append(_rank_auc(scores[:, c], col))
    if not per_label:
        raise MetricError("no label with both classes for macro AUC")
    return {"micro_auc": micro, "macro_auc": float(np.mean(per_label))}


def standard_report(
    run: EvalRun, k_values: tuple[int, ...] = (5,)
) -> dict[str, float]:
    """The usual metric block: P@k, micro/macro F1, micro/macro AUC."""
    run = run.masked()
    out: dict[str, float] = {}
    for k in k_values:
        out[f"p_at_{k}"] = precision_at_k(run.scores, run.gold, k)
    out.update(micro_macro_f1(run.predictions, run.gold))
    out.update(auc(run.scores, run.gold))
    return out


def format_report(rows: list[tuple[str, dict[str, float]]]) -> str:
    """Delimited metric report, one row per model/rule variant, values at 3
    decimal places."""
    keys: list[str] = []
    for _, values in rows:
        for key in values:
            if key not in keys:
                keys.append(key)
    lines = ["\t".join(["variant"] + keys)]
    for name, values in rows:
        cells = [name] + [
            f"{values[k]:.3f}" if k in values else "" for k in keys
        ]
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"
