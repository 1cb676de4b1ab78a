"""Two-phase training: document-level BCE first, then token min-max plus
globally normalized fine-tuning on an untied copy of the output layer.

Model selection picks the epoch with the best dev precision@k (ties go to the
earlier epoch). Runs are deterministic for a fixed seed: one RNG drives
shuffling and dropout, batches are processed in order, and gradients reduce
in a fixed order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .corpus import Document, LabelSpace
from .losses import LossConfig, doc_loss
from .metrics import EvalRun, precision_at_k
from .model import (
    ForwardTrace,
    ModelParams,
    backward,
    forward,
    infer,
    init_global_head,
    init_params,
    pad_ids,
)

DEFAULT_WIDTHS = (1, 3, 4, 5)
DEFAULT_FILTER_COUNTS = (100, 1000, 1000, 1000)
FULL_SET_FILTER_COUNTS = (200, 2000, 2000, 2000)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    phase: str = "base"  # base | finetune
    optimizer: str = "adadelta"  # adadelta | adam
    adadelta_rho: float = 0.9
    adadelta_eps: float = 1e-6
    adam_lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    dropout: float = 0.5
    batch_size: int = 16
    max_epochs: int = 20
    selection_k: int = 5  # dev-selection precision@k
    warmup_top_n: int | None = None  # frequent-label schedule (base phase)
    warmup_epochs: int = 0
    restrict_top_k: int | None = None  # fine-tune loss restriction by global logit
    include_gold_in_restriction: bool = True
    loss_terms: tuple[str, ...] = ()  # default per phase
    include_pad_positions: bool = True
    seed: int = 0
    patience: int | None = 10
    train_embeddings: bool = True
    # architecture (used when initializing a fresh model)
    embed_dim: int = 100
    widths: tuple[int, ...] = DEFAULT_WIDTHS
    filter_counts: tuple[int, ...] = DEFAULT_FILTER_COUNTS

    def __post_init__(self) -> None:
        if self.phase not in ("base", "finetune"):
            raise ValueError(f"unknown phase: {self.phase!r}")
        if self.optimizer not in ("adadelta", "adam"):
            raise ValueError(f"unknown optimizer: {self.optimizer!r}")
        if self.selection_k < 1:
            raise ValueError("selection_k must be >= 1")
        if len(self.widths) != len(self.filter_counts):
            raise ValueError("widths and filter_counts length mismatch")

    def loss_config(self) -> LossConfig:
        terms = self.loss_terms
        if not terms:
            terms = ("bce",) if self.phase == "base" else ("min", "max", "combined")
        return LossConfig(
            terms=frozenset(terms),
            restrict_top_k=self.restrict_top_k,
            include_gold_in_restriction=self.include_gold_in_restriction,
            include_pad_positions=self.include_pad_positions,
        )


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------


class Adadelta:
    """Decaying accumulators of squared gradients and squared updates."""

    def __init__(self, rho: float = 0.9, eps: float = 1e-6, lr: float = 1.0):
        self.rho = rho
        self.eps = eps
        self.lr = lr
        self.acc_grad: dict[str, np.ndarray] = {}
        self.acc_delta: dict[str, np.ndarray] = {}

    def step(self, tensors: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name in sorted(tensors):
            g = grads[name]
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for {name}")
            ag = self.acc_grad.setdefault(name, np.zeros_like(tensors[name]))
            ad = self.acc_delta.setdefault(name, np.zeros_like(tensors[name]))
            ag *= self.rho
            ag += (1.0 - self.rho) * g * g
            delta = -np.sqrt(ad + self.eps) / np.sqrt(ag + self.eps) * g
            ad *= self.rho
            ad += (1.0 - self.rho) * delta * delta
            tensors[name] += self.lr * delta


class Adam:
    """Bias-corrected first/second moment estimates."""

    def __init__(
        self,
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, tensors: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name in sorted(tensors):
            g = grads[name]
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for {name}")
            m = self.m.setdefault(name, np.zeros_like(tensors[name]))
            v = self.v.setdefault(name, np.zeros_like(tensors[name]))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            tensors[name] -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def make_optimizer(config: TrainConfig):
    if config.optimizer == "adadelta":
        return Adadelta(rho=config.adadelta_rho, eps=config.adadelta_eps)
    return Adam(
        lr=config.adam_lr,
        beta1=config.adam_beta1,
        beta2=config.adam_beta2,
        eps=config.adam_eps,
    )


# ---------------------------------------------------------------------------
# Batching and scoring
# ---------------------------------------------------------------------------


def gold_matrix(docs: list[Document], num_labels: int) -> np.ndarray:
    y = np.zeros((len(docs), num_labels), dtype=np.float64)
    for i, doc in enumerate(docs):
        for c in doc.gold:
            y[i, c] = 1.0
    return y


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def score_corpus(
    docs: list[Document],
    params: ModelParams,
    offset: float = 0.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Eval-mode scores, predictions, and winning token index per (doc, label)."""
    n = len(docs)
    scores = np.zeros((n, params.num_labels))
    preds = np.zeros((n, params.num_labels), dtype=bool)
    tokens = np.full((n, params.num_labels), -1, dtype=np.int64)
    for i, doc in enumerate(docs):
        trace = forward(doc.token_ids, params, mode="eval", keep_maps=False)
        res = infer(trace, params, offset=offset)
        scores[i] = res.logits
        preds[i] = res.predicted
        tokens[i] = res.token_indices
    return scores, preds, tokens


def dev_metric(
    docs: list[Document],
    params: ModelParams,
    label_space: LabelSpace,
    k: int,
) -> float:
    scores, preds, _ = score_corpus(docs, params)
    run = EvalRun(
        scores,
        preds,
        gold_matrix(docs, label_space.num_labels).astype(bool),
        unseen_in_train=label_space.unseen_in_train,
    ).masked()
    return precision_at_k(run.scores, run.gold, min(k, label_space.num_labels))


# ---------------------------------------------------------------------------
# Training loops
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    params: ModelParams
    best_epoch: int
    best_metric: float
    log: list[dict[str, float]] = field(default_factory=list)


def _diagnostic(epoch: int, batch: int, params: ModelParams) -> str:
    norms = ", ".join(
        f"{name}={float(np.linalg.norm(t)):.3e}" for name, t in params.tensors().items()
    )
    return f"epoch {epoch}, batch {batch}, parameter norms: {norms}"


def _run_epochs(
    train_docs: list[Document],
    dev_docs: list[Document],
    params: ModelParams,
    label_space: LabelSpace,
    config: TrainConfig,
) -> TrainResult:
    rng = np.random.default_rng(config.seed)
    optimizer = make_optimizer(config)
    loss_cfg = config.loss_config()
    y_all = gold_matrix(train_docs, label_space.num_labels)
    tensors = params.tensors()
    best: tuple[float, int] | None = None
    best_params = params.copy()
    log: list[dict[str, float]] = []
    stale = 0

    for epoch in range(1, config.max_epochs + 1):
        warmup_labels = None
        if (
            config.warmup_top_n is not None
            and "bce" in loss_cfg.terms
            and epoch <= config.warmup_epochs
        ):
            warmup_labels = label_space.most_frequent(config.warmup_top_n)
        epoch_loss = 0.0
        n_batches = 0
        for batch_no, batch in enumerate(_batches(len(train_docs), config.batch_size, rng)):
            max_len = max(
                max(len(train_docs[i]) for i in batch), params.max_width
            )
            grads_sum: dict[str, np.ndarray] | None = None
            batch_loss = 0.0
            for i in batch:
                ids = pad_ids(train_docs[i].token_ids, max_len)
                trace = forward(
                    ids,
                    params,
                    mode="train",
                    dropout_rate=config.dropout,
                    rng=rng,
                )
                loss, upstream = doc_loss(
                    trace, params, y_all[i], loss_cfg, warmup_labels=warmup_labels
                )
                batch_loss += loss
                grads = backward(trace, params, upstream)
                if grads_sum is None:
                    grads_sum = grads
                else:
                    for name in grads_sum:
                        grads_sum[name] += grads[name]
            scale = 1.0 / batch.shape[0]
            batch_loss *= scale
            if not np.isfinite(batch_loss):
                raise TrainingError(
                    f"non-finite loss; {_diagnostic(epoch, batch_no, params)}"
                )
            for name in grads_sum:
                grads_sum[name] *= scale
            if not config.train_embeddings:
                grads_sum["embedding"][:] = 0.0
            optimizer.step(tensors, grads_sum)
            params.embedding[0] = 0.0  # PAD row stays pinned
            epoch_loss += batch_loss
            n_batches += 1

        metric = dev_metric(dev_docs, params, label_space, config.selection_k)
        log.append(
            {
                "epoch": epoch,
                "train_loss": epoch_loss / max(n_batches, 1),
                f"dev_p_at_{config.selection_k}": metric,
            }
        )
        if best is None or metric > best[0]:
            best = (metric, epoch)
            best_params = params.copy()
            stale = 0
        else:
            stale += 1
            if config.patience is not None and stale >= config.patience:
                break

    return TrainResult(
        params=best_params, best_epoch=best[1], best_metric=best[0], log=log
    )


def train_base(
    train_docs: list[Document],
    dev_docs: list[Document],
    label_space: LabelSpace,
    config: TrainConfig,
    vocab_size: int,
    embedding: np.ndarray | None = None,
    params: ModelParams | None = None,
) -> TrainResult:
    """BCE training of a fresh (or provided) model; dev selection on sig(doc
    logit) ranking."""
    if config.phase != "base":
        raise ValueError("train_base requires phase=base")
    if params is None:
        params = init_params(
            vocab_size=vocab_size,
            embed_dim=config.embed_dim,
            widths=list(config.widths),
            filter_counts=list(config.filter_counts),
            num_labels=label_space.num_labels,
            seed=config.seed,
            embedding=embedding,
        )
    return _run_epochs(train_docs, dev_docs, params, label_space, config)


def init_finetune(params: ModelParams) -> ModelParams:
    """Instantiate the untied output layer as an element-wise copy of the
    tied one; every tensor stays trainable in the fine-tune phase."""
    if params.has_global_head:
        raise ValueError("global head already initialized")
    return init_global_head(params)


def train_finetune(
    train_docs: list[Document],
    dev_docs: list[Document],
    params: ModelParams,
    label_space: LabelSpace,
    config: TrainConfig,
) -> TrainResult:
    """Min-max (+ combined) fine-tuning; dev selection uses the fused
    global-plus-max-token scoring."""
    if config.phase != "finetune":
        raise ValueError("train_finetune requires phase=finetune")
    if not params.has_global_head:
        raise ValueError("fine-tuning requires init_finetune first")
    return _run_epochs(train_docs, dev_docs, params, label_space, config)


def format_epoch_log(log: list[dict[str, float]]) -> str:
    if not log:
        return ""
    keys = list(log[0].keys())
    lines = ["\t".join(keys)]
    for row in log:
        lines.append(
            "\t".join(
                f"{row[k]:.6f}" if isinstance(row[k], float) else str(row[k])
                for k in keys
            )
        )
    return "\n".join(lines) + "\n"


def config_for_full_label_set(config: TrainConfig) -> TrainConfig:
    """The larger-capacity preset: doubled filter counts, Adam with small lr,
    heavier dropout, and the frequent-label warm-up schedule."""
    return replace(
        config,
        filter_counts=FULL_SET_FILTER_COUNTS,
        optimizer="adam",
        adam_lr=1e-4,
        dropout=0.6,
        warmup_top_n=1000,
        warmup_epochs=30,
    )
