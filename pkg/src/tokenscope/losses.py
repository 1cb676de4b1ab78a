"""Training objectives, all computed from logits in numerically stable form.

Per-document, per-label terms (Y is the 0/1 gold assignment):

  bce       -Y log sig(doc_logit) - (1-Y) log(1 - sig(doc_logit))
  min       -log(1 - sig(min combined token score)), applied to every
            document regardless of Y (the smallest token contribution is
            pushed negative everywhere)
  max       BCE on the largest combined token score against Y
  combined  BCE on (global_logit + largest combined token score) against Y

Each enabled term is averaged over the evaluated label set, then over the
mini-batch. The evaluated set is all labels, or a per-document restriction to
the top-k labels by global logit (optionally union the gold labels, so
long-tail positives keep receiving max-term signal).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import PAD_ID
from .model import (
    ForwardTrace,
    LossGrads,
    ModelParams,
    TokenExtremes,
    decompose,
    token_extremes,
)
from .netops import bce_with_logits, bce_with_logits_grad, sigmoid, softplus

FINE_TUNE_TERMS = frozenset({"min", "max", "combined"})
VALID_TERMS = frozenset({"bce"}) | FINE_TUNE_TERMS


@dataclass
class LossConfig:
    terms: frozenset[str] = field(default_factory=lambda: frozenset({"bce"}))
    restrict_top_k: int | None = None
    include_gold_in_restriction: bool = True
    include_pad_positions: bool = True

    def __post_init__(self) -> None:
        self.terms = frozenset(self.terms)
        unknown = self.terms - VALID_TERMS
        if unknown:
            raise ValueError(f"unknown loss terms: {sorted(unknown)}")
        if "bce" in self.terms and self.terms & FINE_TUNE_TERMS:
            raise ValueError("bce cannot be combined with fine-tune terms in one phase")
        if self.terms & FINE_TUNE_TERMS and not {"min", "max"} <= self.terms:
            raise ValueError("fine-tuning requires at least the min and max terms")

    @property
    def is_finetune(self) -> bool:
        return bool(self.terms & FINE_TUNE_TERMS)


def bce_scalar(logits: np.ndarray, y: np.ndarray) -> float:
    """Mean over labels of the stable per-label BCE."""
    return float(np.mean(bce_with_logits(logits, y)))


def doc_bce_loss(
    trace: ForwardTrace,
    y: np.ndarray,
    labels: np.ndarray | None = None,
) -> tuple[float, LossGrads]:
    """BCE on the tied-layer document logits, averaged over the label set."""
    logits = trace.doc_logits
    if labels is None:
        losses = bce_with_logits(logits, y)
        d = bce_with_logits_grad(logits, y) / logits.shape[0]
        return float(np.mean(losses)), LossGrads(d_doc=d)
    labels = np.asarray(labels, dtype=np.int64)
    losses = bce_with_logits(logits[labels], y[labels])
    d = np.zeros_like(logits)
    d[labels] = bce_with_logits_grad(logits[labels], y[labels]) / labels.shape[0]
    return float(np.mean(losses)), LossGrads(d_doc=d)


def restrict_labels(
    global_logits: np.ndarray,
    gold: np.ndarray | list[int],
    k: int,
    include_gold: bool = True,
) -> np.ndarray:
    """Top-k labels by global logit (ties: lower id), optionally union gold."""
    if k < 1:
        raise ValueError("restriction k must be >= 1")
    c = global_logits.shape[0]
    k = min(k, c)
    order = np.lexsort((np.arange(c), -global_logits))
    selected = set(int(i) for i in order[:k])
    if include_gold:
        selected.update(int(g) for g in gold)
    return np.array(sorted(selected), dtype=np.int64)


def minmax_terms(
    extremes: TokenExtremes, y: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-label min+max loss and the gradients w.r.t. the two extreme scores."""
    losses = softplus(extremes.min_values) + bce_with_logits(
        extremes.max_values, y
    )
    d_min = np.asarray(sigmoid(extremes.min_values))
    d_max = bce_with_logits_grad(extremes.max_values, y)
    return np.asarray(losses), d_min, d_max


def combined_terms(
    global_logits: np.ndarray, max_values: np.ndarray, y: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per-label BCE on global logit plus max token score, and its gradient
    (shared by the global logit and the max-score token)."""
    fused = global_logits + max_values
    return np.asarray(bce_with_logits(fused, y)), bce_with_logits_grad(fused, y)


def doc_finetune_loss(
    trace: ForwardTrace,
    params: ModelParams,
    y: np.ndarray,
    config: LossConfig,
) -> tuple[float, LossGrads]:
    """Sum of the enabled fine-tune terms, averaged over the evaluated labels.

    Returns the scalar loss and the upstream gradients for backward(). The
    min/max scan runs over every position including the PAD tail unless the
    config masks pads out.
    """
    if not config.is_finetune:
        raise ValueError("doc_finetune_loss requires fine-tune terms")
    if "combined" in config.terms and not params.has_global_head:
        raise ValueError("combined loss requires the global head")
    gold = np.nonzero(y)[0]
    if config.restrict_top_k is not None:
        if trace.global_logits is None:
            raise ValueError("label restriction requires the global head")
        labels = restrict_labels(
            trace.global_logits,
            gold,
            config.restrict_top_k,
            include_gold=config.include_gold_in_restriction,
        )
    else:
        labels = np.arange(params.num_labels, dtype=np.int64)

    scores = decompose(trace, params, labels=labels)
    if not config.include_pad_positions:
        valid = int(np.sum(trace.token_ids != PAD_ID))
        valid = max(valid, 1)
        scores.combined = scores.combined[:, :valid]
    ext = token_extremes(scores)

    y_sel = y[labels].astype(np.float64)
    n_sel = labels.shape[0]
    total = np.zeros(n_sel)
    token_terms: list[tuple[int, int, float]] = []
    d_global = None

    mm_losses, d_min, d_max = minmax_terms(ext, y_sel)
    total += mm_losses
    for i, label in enumerate(labels):
        token_terms.append((int(label), int(ext.min_indices[i]), float(d_min[i]) / n_sel))

    d_max_total = d_max.copy()
    if "combined" in config.terms:
        comb_losses, d_comb = combined_terms(
            trace.global_logits[labels], ext.max_values, y_sel
        )
        total += comb_losses
        d_max_total += d_comb
        d_global = np.zeros(params.num_labels)
        d_global[labels] = d_comb / n_sel
    for i, label in enumerate(labels):
        token_terms.append(
            (int(label), int(ext.max_indices[i]), float(d_max_total[i]) / n_sel)
        )

    return float(np.mean(total)), LossGrads(
        d_global=d_global, token_terms=token_terms
    )


def doc_loss(
    trace: ForwardTrace,
    params: ModelParams,
    y: np.ndarray,
    config: LossConfig,
    warmup_labels: np.ndarray | None = None,
) -> tuple[float, LossGrads]:
    """Dispatch to the configured phase objective for one document."""
    if "bce" in config.terms:
        return doc_bce_loss(trace, y, labels=warmup_labels)
    return doc_finetune_loss(trace, params, y, config)
