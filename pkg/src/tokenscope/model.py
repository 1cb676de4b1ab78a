"""The multi-width CNN classifier and its exact per-token decomposition.

Every label owns two rows of the output layer: row c holds its "on" weights
and row C+c its "off" weights (block layout: all on-rows, then all off-rows).
The document logit is the on/off difference:

    doc_logit[c] = (W[c] - W[C+c]) . g + b[c] - b[C+c]

where g is the ReLU'd maxpool over all filter feature maps. Because each
pooled value traces back to one winning filter window, that logit decomposes
exactly into per-token contributions: token n receives W[c,m] * g[m] from
every filter m whose winning window covers n, plus the bias. The combined
token score is on minus off.

A second, untied output layer ("global head") is instantiated for fine-tuning
as a copy of (W, b); document-level scores then come from the global head
while the decomposition keeps reading the tied layer.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import PAD_ID
from .netops import (
    FilterBank,
    PoolRecord,
    conv1d_backward,
    conv1d_forward,
    dropout_mask,
    relu_maxpool,
    relu_maxpool_backward,
    sigmoid,
)

CHECKPOINT_MAGIC = b"TSCKPT\x00\x01"


class CheckpointError(ValueError):
    pass


@dataclass
class ModelParams:
    embedding: np.ndarray  # (V, D); PAD row pinned to zero
    banks: list[FilterBank]  # ascending width order
    head_w: np.ndarray  # (2C, M_total) tied layer; decomposition reads this
    head_b: np.ndarray  # (2C,)
    num_labels: int
    global_w: np.ndarray | None = None  # untied copy, present after fine-tune init
    global_b: np.ndarray | None = None

    def __post_init__(self) -> None:
        c2 = 2 * self.num_labels
        if self.head_w.shape != (c2, self.total_filters) or self.head_b.shape != (c2,):
            raise ValueError("output layer shape does not match 2C x M_total")
        if (self.global_w is None) != (self.global_b is None):
            raise ValueError("global head weights and bias must come together")
        if self.global_w is not None and self.global_w.shape != self.head_w.shape:
            raise ValueError("global head must match the tied layer shape")
        widths = [b.width for b in self.banks]
        if widths != sorted(widths) or len(set(widths)) != len(widths):
            raise ValueError("filter banks must have unique, ascending widths")

    @property
    def widths(self) -> list[int]:
        return [b.width for b in self.banks]

    @property
    def max_width(self) -> int:
        return max(b.width for b in self.banks)

    @property
    def total_filters(self) -> int:
        return sum(b.count for b in self.banks)

    @property
    def embed_dim(self) -> int:
        return self.embedding.shape[1]

    @property
    def has_global_head(self) -> bool:
        return self.global_w is not None

    @property
    def exemplar_dim(self) -> int:
        return 2 * self.total_filters

    def tensors(self) -> dict[str, np.ndarray]:
        out = {"embedding": self.embedding}
        for bank in self.banks:
            out[f"conv{bank.width}_w"] = bank.weights
            out[f"conv{bank.width}_b"] = bank.bias
        out["head_w"] = self.head_w
        out["head_b"] = self.head_b
        if self.global_w is not None:
            out["global_w"] = self.global_w
            out["global_b"] = self.global_b
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(
            embedding=self.embedding.copy(),
            banks=[
                FilterBank(b.width, b.weights.copy(), b.bias.copy())
                for b in self.banks
            ],
            head_w=self.head_w.copy(),
            head_b=self.head_b.copy(),
            num_labels=self.num_labels,
            global_w=None if self.global_w is None else self.global_w.copy(),
            global_b=None if self.global_b is None else self.global_b.copy(),
        )


def init_params(
    vocab_size: int,
    embed_dim: int,
    widths: list[int],
    filter_counts: list[int],
    num_labels: int,
    seed: int = 0,
    embedding: np.ndarray | None = None,
) -> ModelParams:
    """Seeded Glorot-uniform filters and output layer; optional pre-trained
    embedding table (PAD row forced to zero either way)."""
    rng = np.random.default_rng(seed)
    if embedding is None:
        bound = 0.25 / embed_dim
        embedding = rng.uniform(-bound, bound, size=(vocab_size, embed_dim))
    else:
        embedding = np.array(embedding, dtype=np.float64)
    embedding[PAD_ID] = 0.0
    banks = []
    for width, count in zip(widths, filter_counts):
        fan_in = width * embed_dim
        bound = np.sqrt(6.0 / (fan_in + count))
        banks.append(
            FilterBank(
                width,
                rng.uniform(-bound, bound, size=(count, fan_in)),
                np.zeros(count),
            )
        )
    m_total = sum(filter_counts)
    bound = np.sqrt(6.0 / (m_total + 2 * num_labels))
    head_w = rng.uniform(-bound, bound, size=(2 * num_labels, m_total))
    head_b = np.zeros(2 * num_labels)
    return ModelParams(embedding, banks, head_w, head_b, num_labels)


def init_global_head(params: ModelParams) -> ModelParams:
    """Instantiate the untied output layer as an exact copy of the tied one."""
    out = params.copy()
    out.global_w = params.head_w.copy()
    out.global_b = params.head_b.copy()
    return out


def pad_ids(token_ids: np.ndarray, min_len: int) -> np.ndarray:
    if token_ids.shape[0] >= min_len:
        return token_ids
    padded = np.full(min_len, PAD_ID, dtype=token_ids.dtype)
    padded[: token_ids.shape[0]] = token_ids
    return padded


@dataclass
class ForwardTrace:
    token_ids: np.ndarray
    feature_maps: list[np.ndarray] | None  # raw (pre-ReLU) maps per width
    pools: list[PoolRecord]
    pooled: np.ndarray  # g before dropout
    dropped: np.ndarray  # g after dropout (identical in eval mode)
    drop_mask: np.ndarray | None
    doc_logits: np.ndarray  # tied-layer document scores
    global_logits: np.ndarray | None  # untied-layer document scores

    @property
    def length(self) -> int:
        return int(self.token_ids.shape[0])


def _on_off_diff(w: np.ndarray, b: np.ndarray, c: int) -> tuple[np.ndarray, np.ndarray]:
    return w[:c] - w[c:], b[:c] - b[c:]


def forward(
    token_ids: np.ndarray,
    params: ModelParams,
    mode: str = "eval",
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
    fixed_mask: np.ndarray | None = None,
    keep_maps: bool = True,
) -> ForwardTrace:
    """Run the CNN over one (pre-padded) document.

    Dropout applies to the pooled vector only, in train mode; the recorded
    mask already carries the inverted-dropout scale. fixed_mask overrides the
    RNG draw (used by gradient checks).
    """
    token_ids = pad_ids(np.asarray(token_ids, dtype=np.int64), params.max_width)
    x = params.embedding[token_ids].T  # (D, N)
    maps, pools, segments = [], [], []
    for bank in params.banks:
        h = conv1d_forward(x, bank)
        maps.append(h)
        rec = relu_maxpool(h)
        pools.append(rec)
        segments.append(rec.values)
    pooled = np.concatenate(segments)
    if mode == "train" and (dropout_rate > 0.0 or fixed_mask is not None):
        if fixed_mask is not None:
            mask = fixed_mask
        else:
            if rng is None:
                raise ValueError("train-mode dropout requires an RNG")
            mask = dropout_mask(pooled.shape[0], dropout_rate, rng)
        dropped = pooled * mask
    elif mode in ("train", "eval"):
        mask = None
        dropped = pooled
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    c = params.num_labels
    w_diff, b_diff = _on_off_diff(params.head_w, params.head_b, c)
    doc_logits = w_diff @ dropped + b_diff
    global_logits = None
    if params.has_global_head:
        gw_diff, gb_diff = _on_off_diff(params.global_w, params.global_b, c)
        global_logits = gw_diff @ dropped + gb_diff
    return ForwardTrace(
        token_ids=token_ids,
        feature_maps=maps if keep_maps else None,
        pools=pools,
        pooled=pooled,
        dropped=dropped,
        drop_mask=mask,
        doc_logits=doc_logits,
        global_logits=global_logits,
    )


def coverage_matrix(trace: ForwardTrace, params: ModelParams) -> np.ndarray:
    """(M_total, N) indicator: filter m's winning window covers token n."""
    n = trace.length
    cov = np.zeros((params.total_filters, n))
    offset = 0
    for bank, rec in zip(params.banks, trace.pools):
        for m in range(bank.count):
            start = int(rec.indices[m])
            cov[offset + m, start : start + bank.width] = 1.0
        offset += bank.count
    return cov


def filter_token_contributions(
    trace: ForwardTrace, params: ModelParams, label: int
) -> np.ndarray:
    """(M_total, N) matrix of per-filter on-state contributions
    W[c,m] * g[m] * cover(m,n), excluding the bias term."""
    cov = coverage_matrix(trace, params)
    weighted = params.head_w[label] * trace.dropped  # (M,)
    return weighted[:, None] * cov


@dataclass
class TokenScores:
    labels: np.ndarray  # label ids the rows correspond to
    on: np.ndarray  # (L, N)
    off: np.ndarray  # (L, N)
    combined: np.ndarray  # on - off


def decompose(
    trace: ForwardTrace,
    params: ModelParams,
    labels: np.ndarray | list[int] | None = None,
) -> TokenScores:
    """Per-token on/off/combined scores for the requested labels (default all).

    Always reads the tied layer; the untied global head only ever enters
    through the document-level global logits.
    """
    c = params.num_labels
    labels = (
        np.arange(c, dtype=np.int64)
        if labels is None
        else np.asarray(labels, dtype=np.int64)
    )
    cov = coverage_matrix(trace, params)  # (M, N)
    on_w = params.head_w[labels] * trace.dropped  # (L, M)
    off_w = params.head_w[labels + c] * trace.dropped
    on = on_w @ cov + params.head_b[labels][:, None]
    off = off_w @ cov + params.head_b[labels + c][:, None]
    return TokenScores(labels=labels, on=on, off=off, combined=on - off)


@dataclass
class TokenExtremes:
    labels: np.ndarray
    max_values: np.ndarray
    max_indices: np.ndarray
    min_values: np.ndarray
    min_indices: np.ndarray


def token_extremes(scores: TokenScores) -> TokenExtremes:
    """Max/min combined token score per label; ties take the first index."""
    combined = scores.combined
    max_idx = np.argmax(combined, axis=1)
    min_idx = np.argmin(combined, axis=1)
    rows = np.arange(combined.shape[0])
    return TokenExtremes(
        labels=scores.labels,
        max_values=combined[rows, max_idx],
        max_indices=max_idx,
        min_values=combined[rows, min_idx],
        min_indices=min_idx,
    )


@dataclass
class InferenceResult:
    logits: np.ndarray  # per-label decision logits (before offset)
    predicted: np.ndarray  # bool per label, after offset
    token_indices: np.ndarray  # argmax combined-score token per label (-1 base mode)
    mode: str  # "fused" (global + max token score) or "base"


def infer(
    trace: ForwardTrace,
    params: ModelParams,
    offset: float | np.ndarray = 0.0,
) -> InferenceResult:
    """Label decisions under the current bias offset.

    Fine-tuned models score each label as global_logit + max combined token
    score; models without the global head fall back to the tied document
    logit. The offset (end-user slider; scalar or per-label) is added inside
    the sigmoid, so predictions are monotone in it.
    """
    if params.has_global_head:
        ext = token_extremes(decompose(trace, params))
        logits = trace.global_logits + ext.max_values
        token_indices = ext.max_indices
        mode = "fused"
    else:
        logits = trace.doc_logits.copy()
        token_indices = np.full(params.num_labels, -1, dtype=np.int64)
        mode = "base"
    predicted = sigmoid(logits + np.asarray(offset)) > 0.5
    return InferenceResult(
        logits=logits, predicted=predicted, token_indices=token_indices, mode=mode
    )


def token_mask(
    trace: ForwardTrace,
    params: ModelParams,
    label: int,
    mode: str = "combined",
) -> tuple[np.ndarray, np.ndarray]:
    """Boolean token highlight plus raw combined scores for one label.

    combined mode: highlight token n iff its combined score is positive AND
    the global logit plus that score is positive (a negative token score is
    never highlighted, whatever the global logit). minmax mode: combined
    score strictly positive.
    """
    scores = decompose(trace, params, labels=[label]).combined[0]
    if mode == "minmax":
        return scores > 0.0, scores
    if mode != "combined":
        raise ValueError(f"unknown token_mask mode: {mode!r}")
    if not params.has_global_head:
        raise ValueError("combined token_mask requires the global head")
    g = trace.global_logits[label]
    return (scores > 0.0) & (g + scores > 0.0), scores


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------


@dataclass
class LossGrads:
    """Upstream gradients produced by the loss layer for one document.

    token_terms lists (label, token_index, d_loss/d_combined_score) entries;
    the combined score at a specific token is linear in the tied layer and in
    the pooled vector, so each term splats into those gradients directly.
    """

    d_doc: np.ndarray | None = None  # dL/d doc_logits (C,)
    d_global: np.ndarray | None = None  # dL/d global_logits (C,)
    token_terms: list[tuple[int, int, float]] | None = None


def backward(
    trace: ForwardTrace, params: ModelParams, upstream: LossGrads
) -> dict[str, np.ndarray]:
    """Hand-derived reverse pass for the fixed architecture.

    Max-pool routes gradient only to winning indices; the ReLU gate at zero
    passes zero gradient; the PAD embedding row is zeroed after accumulation.
    """
    if trace.feature_maps is None:
        raise RuntimeError("backward requires a trace with recorded feature maps")
    c = params.num_labels
    m_total = params.total_filters
    grads = {name: np.zeros_like(t) for name, t in params.tensors().items()}
    d_dropped = np.zeros(m_total)
    w_diff, _ = _on_off_diff(params.head_w, params.head_b, c)

    if upstream.d_doc is not None:
        gd = upstream.d_doc
        grads["head_w"][:c] += np.outer(gd, trace.dropped)
        grads["head_w"][c:] -= np.outer(gd, trace.dropped)
        grads["head_b"][:c] += gd
        grads["head_b"][c:] -= gd
        d_dropped += w_diff.T @ gd

    if upstream.d_global is not None:
        if not params.has_global_head:
            raise ValueError("global-head gradient without a global head")
        gg = upstream.d_global
        gw_diff, _ = _on_off_diff(params.global_w, params.global_b, c)
        grads["global_w"][:c] += np.outer(gg, trace.dropped)
        grads["global_w"][c:] -= np.outer(gg, trace.dropped)
        grads["global_b"][:c] += gg
        grads["global_b"][c:] -= gg
        d_dropped += gw_diff.T @ gg

    if upstream.token_terms:
        cov = coverage_matrix(trace, params)
        for label, token, weight in upstream.token_terms:
            cov_n = cov[:, token]
            grads["head_w"][label] += weight * trace.dropped * cov_n
            grads["head_w"][c + label] -= weight * trace.dropped * cov_n
            grads["head_b"][label] += weight
            grads["head_b"][c + label] -= weight
            d_dropped += weight * w_diff[label] * cov_n

    d_pooled = d_dropped if trace.drop_mask is None else d_dropped * trace.drop_mask

    x = params.embedding[trace.token_ids].T
    d_x = np.zeros_like(x)
    offset = 0
    for bank, rec, h in zip(params.banks, trace.pools, trace.feature_maps):
        d_values = d_pooled[offset : offset + bank.count]
        d_h = relu_maxpool_backward(h, rec, d_values)
        d_w, d_b, d_x_part = conv1d_backward(x, bank, d_h)
        grads[f"conv{bank.width}_w"] += d_w
        grads[f"conv{bank.width}_b"] += d_b
        d_x += d_x_part
        offset += bank.count

    np.add.at(grads["embedding"], trace.token_ids, d_x.T)
    grads["embedding"][PAD_ID] = 0.0
    return grads


# ---------------------------------------------------------------------------
# Checkpoint container
# ---------------------------------------------------------------------------


def params_hash(params: ModelParams) -> str:
    digest = hashlib.sha256()
    for name, tensor in params.tensors().items():
        digest.update(name.encode())
        digest.update(str(tensor.shape).encode())
        digest.update(np.ascontiguousarray(tensor, dtype=np.float64).tobytes())
    return digest.hexdigest()


def save_checkpoint(
    params: ModelParams,
    path: str | Path,
    vocab_sha256: str = "",
    labels_sha256: str = "",
    extra: dict | None = None,
) -> None:
    """Self-describing binary container; byte-identical for identical inputs."""
    tensors = params.tensors()
    entries = []
    offset = 0
    blobs = []
    for name, tensor in tensors.items():
        blob = np.ascontiguousarray(tensor, dtype=np.float64).tobytes()
        entries.append(
            {"name": name, "shape": list(tensor.shape), "dtype": "float64", "offset": offset}
        )
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format_version": 1,
        "num_labels": params.num_labels,
        "widths": params.widths,
        "filter_counts": [b.count for b in params.banks],
        "embed_dim": params.embed_dim,
        "vocab_size": int(params.embedding.shape[0]),
        "has_global_head": params.has_global_head,
        "vocab_sha256": vocab_sha256,
        "labels_sha256": labels_sha256,
        "params_sha256": params_hash(params),
        "extra": extra or {},
        "tensors": entries,
    }
    head_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(head_bytes)))
        fh.write(head_bytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict]:
    raw = Path(path).read_bytes()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    head_len = struct.unpack("<Q", raw[8:16])[0]
    header = json.loads(raw[16 : 16 + head_len].decode())
    if header.get("format_version") != 1:
        raise CheckpointError(f"{path}: unsupported format version")
    base = 16 + head_len
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = base + entry["offset"]
        arr = np.frombuffer(raw, dtype=np.float64, count=count, offset=start)
        tensors[entry["name"]] = arr.reshape(shape).copy()
    banks = [
        FilterBank(width, tensors[f"conv{width}_w"], tensors[f"conv{width}_b"])
        for width in header["widths"]
    ]
    params = ModelParams(
        embedding=tensors["embedding"],
        banks=banks,
        head_w=tensors["head_w"],
        head_b=tensors["head_b"],
        num_labels=header["num_labels"],
        global_w=tensors.get("global_w"),
        global_b=tensors.get("global_b"),
    )
    if params_hash(params) != header["params_sha256"]:
        raise CheckpointError(f"{path}: tensor payload does not match stored hash")
    return params, header
