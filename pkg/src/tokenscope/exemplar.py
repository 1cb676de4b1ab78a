"""Exemplar auditing: compact per-token feature vectors, a training-set
database of them, exact nearest-neighbor retrieval of the four
class-conditional exemplars (training TP / FN / FP / TN for the queried
label), and the decision rules built on top.

A token's exemplar vector concatenates, per filter width, the average of all
raw (pre-ReLU) filter applications whose window covered the token, followed
by the document's ReLU'd maxpool vector, giving 2 * M_total dimensions.

The database stores one record per (document, label) with the label either
predicted or gold, keyed by the vector at the token with the largest combined
contribution score. Retrieval is exact: softmax weights over negative
distances are computed only across the classes actually present.
"""

from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Document, LabelSpace
from .model import (
    ForwardTrace,
    ModelParams,
    decompose,
    forward,
    params_hash,
    token_extremes,
)
from .netops import sigmoid

DATABASE_MAGIC = b"TSEXDB\x00\x01"
RECORD_STRUCT = struct.Struct("<IIIIBxxxd")
CLASS_ORDER = ("tp", "fn", "fp", "tn")
RULE_NAMES = ("soft", "tp_only", "db_only", "tp_tau")

LARGE_ABSENT_DISTANCE = 1e9

# database scans larger than this split across worker threads
PARALLEL_THRESHOLD = 20_000
CHUNK_ROWS = 8192


class DatabaseError(ValueError):
    pass


def token_vector(trace: ForwardTrace, params: ModelParams, n: int) -> np.ndarray:
    """Exemplar vector for token n: averaged covering filter applications per
    width (raw, signed), then the pooled maxpool block (nonnegative)."""
    if trace.feature_maps is None:
        raise ValueError("token_vector requires a trace with feature maps")
    length = trace.length
    if not 0 <= n < length:
        raise ValueError(f"token index {n} out of range for length {length}")
    blocks = []
    for bank, h in zip(params.banks, trace.feature_maps):
        lo = max(0, n - bank.width + 1)
        hi = min(n, length - bank.width)
        if hi < lo:  # can only happen for tokens past every window; N >= K holds
            blocks.append(np.zeros(bank.count))
        else:
            blocks.append(h[:, lo : hi + 1].mean(axis=1))
    blocks.append(trace.pooled)
    return np.concatenate(blocks)


@dataclass
class ExemplarDatabase:
    vectors: np.ndarray  # (R, dim)
    doc_ids: list[str]
    snippets: list[str]
    token_indices: np.ndarray  # (R,)
    labels: np.ndarray  # (R,)
    predicted: np.ndarray  # (R,) bool
    gold: np.ndarray  # (R,) bool
    logits: np.ndarray  # (R,) database score per record
    model_sha256: str
    vocab_sha256: str = ""
    labels_sha256: str = ""
    snippet_window: int = 8
    _doc_keys: np.ndarray = field(init=False, repr=False)
    _docs_with_label: dict[int, np.ndarray] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        r = self.vectors.shape[0]
        if not (
            len(self.doc_ids)
            == len(self.snippets)
            == self.token_indices.shape[0]
            == self.labels.shape[0]
            == self.predicted.shape[0]
            == self.gold.shape[0]
            == self.logits.shape[0]
            == r
        ):
            raise DatabaseError("record arrays disagree in length")
        if r and not np.all(self.predicted | self.gold):
            raise DatabaseError("every record must be a predicted or gold label")
        unique = {d: i for i, d in enumerate(dict.fromkeys(self.doc_ids))}
        self._doc_keys = np.array([unique[d] for d in self.doc_ids], dtype=np.int64)
        self._docs_with_label = {}
        for label in np.unique(self.labels):
            self._docs_with_label[int(label)] = np.unique(
                self._doc_keys[self.labels == label]
            )

    def __len__(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def class_masks(self, label: int) -> dict[str, np.ndarray]:
        """Record masks for the four retrieval classes of one query label.

        TP/FN/FP are this label's own records split by training outcome; TN
        candidates are records of documents not associated with the label at
        all (as prediction or gold), i.e. tokens that were the strongest
        detection for some other label."""
        own = self.labels == label
        assoc_docs = self._docs_with_label.get(int(label))
        if assoc_docs is None:
            doc_assoc = np.zeros(len(self), dtype=bool)
        else:
            doc_assoc = np.isin(self._doc_keys, assoc_docs)
        return {
            "tp": own & self.predicted & self.gold,
            "fn": own & self.gold & ~self.predicted,
            "fp": own & self.predicted & ~self.gold,
            "tn": ~doc_assoc,
        }


def snippet_text(doc: Document, token: int, window: int) -> str:
    lo = max(0, token - window)
    hi = min(len(doc.tokens), token + window + 1)
    parts = []
    if lo > 0:
        parts.append("...")
    for i in range(lo, hi):
        parts.append(f"[{doc.tokens[i]}]" if i == token else doc.tokens[i])
    if hi < len(doc.tokens):
        parts.append("...")
    return " ".join(parts)


def build_database(
    docs: list[Document],
    params: ModelParams,
    label_space: LabelSpace,
    snippet_window: int = 8,
    dtype: np.dtype = np.float64,
    vocab_sha256: str = "",
) -> ExemplarDatabase:
    """One record per (document, label) with the label predicted or gold,
    at the token with the max combined contribution score. Eval mode, offset
    zero; requires the fine-tuned (global-head) model."""
    if not params.has_global_head:
        raise DatabaseError("database construction requires the fine-tuned model")
    vecs: list[np.ndarray] = []
    doc_ids: list[str] = []
    snippets: list[str] = []
    tok_idx: list[int] = []
    labels: list[int] = []
    predicted: list[bool] = []
    gold: list[bool] = []
    logits: list[float] = []
    for doc in docs:
        trace = forward(doc.token_ids, params, mode="eval", keep_maps=True)
        ext = token_extremes(decompose(trace, params))
        fused = trace.global_logits + ext.max_values
        pred = fused > 0.0
        keep = sorted(set(np.nonzero(pred)[0].tolist()) | set(doc.gold))
        vec_cache: dict[int, np.ndarray] = {}
        for c in keep:
            n = int(ext.max_indices[c])
            if n not in vec_cache:
                vec_cache[n] = token_vector(trace, params, n)
            vecs.append(vec_cache[n])
            doc_ids.append(doc.doc_id)
            snippets.append(snippet_text(doc, n, snippet_window))
            tok_idx.append(n)
            labels.append(int(c))
            predicted.append(bool(pred[c]))
            gold.append(c in doc.gold)
            logits.append(float(fused[c]))
    dim = 2 * params.total_filters
    vectors = (
        np.array(vecs, dtype=dtype) if vecs else np.zeros((0, dim), dtype=dtype)
    )
    return ExemplarDatabase(
        vectors=vectors,
        doc_ids=doc_ids,
        snippets=snippets,
        token_indices=np.array(tok_idx, dtype=np.int64),
        labels=np.array(labels, dtype=np.int64),
        predicted=np.array(predicted, dtype=bool),
        gold=np.array(gold, dtype=bool),
        logits=np.array(logits, dtype=np.float64),
        model_sha256=params_hash(params),
        vocab_sha256=vocab_sha256,
        labels_sha256=label_space.sha256(),
        snippet_window=snippet_window,
    )


# ---------------------------------------------------------------------------
# Exact nearest-neighbor scan
# ---------------------------------------------------------------------------


def euclidean_distances(
    vectors: np.ndarray, query: np.ndarray, workers: int | None = None
) -> np.ndarray:
    """Exact distances from query to every row, accumulated at 64-bit.

    The scan partitions rows into fixed chunks; chunks may be computed on
    worker threads, and results concatenate in row order either way, so the
    parallel and serial scans agree bit for bit."""
    r = vectors.shape[0]
    q = query.astype(vectors.dtype, copy=False)
    ranges = [(s, min(s + CHUNK_ROWS, r)) for s in range(0, r, CHUNK_ROWS)]

    def chunk_dist(bounds: tuple[int, int]) -> np.ndarray:
        lo, hi = bounds
        diff = vectors[lo:hi] - q
        return np.sqrt(np.sum(diff * diff, axis=1, dtype=np.float64))

    if workers is None:
        workers = 4 if r >= PARALLEL_THRESHOLD else 1
    if workers > 1 and len(ranges) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(chunk_dist, ranges))
    else:
        parts = [chunk_dist(b) for b in ranges]
    return np.concatenate(parts) if parts else np.zeros(0)


def _nearest(
    db: ExemplarDatabase, distances: np.ndarray, mask: np.ndarray
) -> tuple[int, float] | None:
    idx = np.nonzero(mask)[0]
    if idx.shape[0] == 0:
        return None
    d = distances[idx]
    dmin = float(d.min())
    ties = idx[d == dmin]
    if ties.shape[0] > 1:
        # deterministic tie-break: (doc_id, label, record index)
        best = min(ties, key=lambda i: (db.doc_ids[i], int(db.labels[i]), int(i)))
    else:
        best = int(ties[0])
    return int(best), dmin


@dataclass
class RetrievedExemplar:
    record_index: int
    doc_id: str
    token_index: int
    label: int
    predicted: bool
    gold: bool
    logit: float
    snippet: str
    distance: float


@dataclass
class AuditResult:
    label: int
    exemplars: dict[str, RetrievedExemplar | None]
    probs: dict[str, float]  # softmax over negative distances, present classes
    i_star: str  # class name of the overall-nearest exemplar
    query_token: int = -1
    query_logit: float = 0.0
    query_predicted: bool = False
    exa_logit: float = 0.0
    tau: float = 0.0
    decisions: dict[str, bool] = field(default_factory=dict)

    @property
    def nearest(self) -> RetrievedExemplar:
        return self.exemplars[self.i_star]


def retrieve(
    query_vec: np.ndarray,
    label: int,
    db: ExemplarDatabase,
    absent_large_distance: bool = False,
    workers: int | None = None,
) -> AuditResult:
    """Euclidean-nearest database record per retrieval class for one label.

    Absent classes are excluded from the softmax by default (the limit of
    assigning them a very large distance); absent_large_distance=True keeps
    them in the denominator at a literal 1e9 instead. The overall-nearest
    class breaks distance ties in TP, FN, FP, TN order.

    The four retrieved records necessarily come from four distinct documents:
    a document holds at most one record per label (so at most one of TP, FN,
    FP), and TN candidates come from documents unrelated to the label.
    """
    if len(db) == 0:
        raise DatabaseError("empty exemplar database")
    distances = euclidean_distances(db.vectors, query_vec, workers=workers)
    masks = db.class_masks(label)
    exemplars: dict[str, RetrievedExemplar | None] = {}
    found: dict[str, float] = {}
    for cls in CLASS_ORDER:
        hit = _nearest(db, distances, masks[cls])
        if hit is None:
            exemplars[cls] = None
            continue
        i, dist = hit
        exemplars[cls] = RetrievedExemplar(
            record_index=i,
            doc_id=db.doc_ids[i],
            token_index=int(db.token_indices[i]),
            label=int(db.labels[i]),
            predicted=bool(db.predicted[i]),
            gold=bool(db.gold[i]),
            logit=float(db.logits[i]),
            snippet=db.snippets[i],
            distance=dist,
        )
        found[cls] = dist
    if not found:
        raise DatabaseError(f"no retrievable exemplar for label {label}")
    if absent_large_distance:
        cand = {
            cls: found.get(cls, LARGE_ABSENT_DISTANCE) for cls in CLASS_ORDER
        }
    else:
        cand = found
    dmin = min(cand.values())
    weights = {cls: np.exp(-(d - dmin)) for cls, d in cand.items()}
    total = sum(weights.values())
    probs = {cls: float(w / total) for cls, w in weights.items() if cls in found}
    i_star = min(found, key=lambda cls: (found[cls], CLASS_ORDER.index(cls)))
    return AuditResult(label=label, exemplars=exemplars, probs=probs, i_star=i_star)


def exa_logit(query_logit: float, result: AuditResult) -> float:
    """Query logit plus the matched training score weighted by the nearest
    exemplar's softmax probability."""
    return query_logit + result.nearest.logit * result.probs[result.i_star]


def decision_rules(
    query_predicted: bool,
    query_logit: float,
    result: AuditResult,
    tau: float = 0.0,
) -> dict[str, bool]:
    """All four rules. Rules only ever veto positives; a query-negative label
    stays negative under every rule."""
    if not query_predicted:
        return {name: False for name in RULE_NAMES}
    soft = exa_logit(query_logit, result) > 0.0
    tp_only = result.i_star == "tp"
    db_only = float(sigmoid(result.nearest.logit)) > 0.5
    tp_tau = tp_only and result.probs.get("tp", 0.0) > tau
    return {"soft": soft, "tp_only": tp_only, "db_only": db_only, "tp_tau": tp_tau}


def audit_label(
    trace: ForwardTrace,
    params: ModelParams,
    db: ExemplarDatabase,
    label: int,
    offset: float = 0.0,
    tau: float = 0.0,
    absent_large_distance: bool = False,
) -> AuditResult:
    """Full audit of one (document, label): query vector at the token with the
    max combined score, four-way retrieval, and the decision-rule outcomes."""
    ext = token_extremes(decompose(trace, params, labels=[label]))
    n = int(ext.max_indices[0])
    query_logit = float(trace.global_logits[label] + ext.max_values[0])
    query_predicted = bool(sigmoid(query_logit + offset) > 0.5)
    vec = token_vector(trace, params, n)
    result = retrieve(
        vec, label, db, absent_large_distance=absent_large_distance
    )
    result.query_token = n
    result.query_logit = query_logit
    result.query_predicted = query_predicted
    result.exa_logit = exa_logit(query_logit, result) if query_predicted else query_logit
    result.tau = tau
    result.decisions = decision_rules(query_predicted, query_logit, result, tau=tau)
    return result


def apply_rule_to_predictions(
    docs: list[Document],
    params: ModelParams,
    db: ExemplarDatabase,
    rule: str,
    tau: float = 0.0,
    offset: float = 0.0,
) -> np.ndarray:
    """Prediction matrix after filtering query positives through one rule."""
    if rule not in RULE_NAMES:
        raise ValueError(f"unknown decision rule: {rule!r}")
    preds = np.zeros((len(docs), params.num_labels), dtype=bool)
    for i, doc in enumerate(docs):
        trace = forward(doc.token_ids, params, mode="eval", keep_maps=True)
        ext = token_extremes(decompose(trace, params))
        fused = trace.global_logits + ext.max_values
        positive = np.asarray(sigmoid(fused + offset)) > 0.5
        vec_cache: dict[int, np.ndarray] = {}
        for c in np.nonzero(positive)[0]:
            n = int(ext.max_indices[c])
            if n not in vec_cache:
                vec_cache[n] = token_vector(trace, params, n)
            result = retrieve(vec_cache[n], int(c), db)
            decisions = decision_rules(True, float(fused[c]), result, tau=tau)
            preds[i, c] = decisions[rule]
    return preds


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_database(db: ExemplarDatabase, path: str | Path) -> None:
    strings: list[str] = []
    ref: dict[str, int] = {}

    def intern(s: str) -> int:
        if s not in ref:
            ref[s] = len(strings)
            strings.append(s)
        return ref[s]

    header = {
        "format_version": 1,
        "dim": db.dim,
        "dtype": str(db.vectors.dtype),
        "record_count": len(db),
        "model_sha256": db.model_sha256,
        "vocab_sha256": db.vocab_sha256,
        "labels_sha256": db.labels_sha256,
        "snippet_window": db.snippet_window,
    }
    head_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(DATABASE_MAGIC)
        fh.write(struct.pack("<Q", len(head_bytes)))
        fh.write(head_bytes)
        for i in range(len(db)):
            fh.write(
                RECORD_STRUCT.pack(
                    intern(db.doc_ids[i]),
                    intern(db.snippets[i]),
                    int(db.token_indices[i]),
                    int(db.labels[i]),
                    (1 if db.predicted[i] else 0) | (2 if db.gold[i] else 0),
                    float(db.logits[i]),
                )
            )
        fh.write(np.ascontiguousarray(db.vectors).tobytes())
        fh.write(struct.pack("<I", len(strings)))
        for s in strings:
            raw = s.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)


def load_database(path: str | Path) -> ExemplarDatabase:
    raw = Path(path).read_bytes()
    if raw[: len(DATABASE_MAGIC)] != DATABASE_MAGIC:
        raise DatabaseError(f"{path}: not an exemplar database file")
    head_len = struct.unpack("<Q", raw[8:16])[0]
    header = json.loads(raw[16 : 16 + head_len].decode())
    if header.get("format_version") != 1:
        raise DatabaseError(f"{path}: unsupported format version")
    r = header["record_count"]
    dim = header["dim"]
    dtype = np.dtype(header["dtype"])
    pos = 16 + head_len
    doc_refs, snip_refs, tok_idx, labels, flags, logits = [], [], [], [], [], []
    for _ in range(r):
        d, s, t, c, f, lg = RECORD_STRUCT.unpack_from(raw, pos)
        pos += RECORD_STRUCT.size
        doc_refs.append(d)
        snip_refs.append(s)
        tok_idx.append(t)
        labels.append(c)
        flags.append(f)
        logits.append(lg)
    vec_bytes = r * dim * dtype.itemsize
    vectors = np.frombuffer(raw, dtype=dtype, count=r * dim, offset=pos).reshape(r, dim).copy()
    pos += vec_bytes
    (n_strings,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    strings = []
    for _ in range(n_strings):
        (slen,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        strings.append(raw[pos : pos + slen].decode("utf-8"))
        pos += slen
    flags_arr = np.array(flags, dtype=np.int64)
    return ExemplarDatabase(
        vectors=vectors,
        doc_ids=[strings[i] for i in doc_refs],
        snippets=[strings[i] for i in snip_refs],
        token_indices=np.array(tok_idx, dtype=np.int64),
        labels=np.array(labels, dtype=np.int64),
        predicted=(flags_arr & 1).astype(bool),
        gold=(flags_arr & 2).astype(bool),
        logits=np.array(logits, dtype=np.float64),
        model_sha256=header["model_sha256"],
        vocab_sha256=header.get("vocab_sha256", ""),
        labels_sha256=header.get("labels_sha256", ""),
        snippet_window=header.get("snippet_window", 8),
    )


def check_compatible(
    db: ExemplarDatabase,
    params: ModelParams,
    vocab_sha256: str | None = None,
    labels_sha256: str | None = None,
) -> None:
    model_hash = params_hash(params)
    if db.model_sha256 != model_hash:
        raise DatabaseError(
            "exemplar database was built with a different model "
            f"(db {db.model_sha256[:12]}.. vs model {model_hash[:12]}..)"
        )
    if vocab_sha256 and db.vocab_sha256 and db.vocab_sha256 != vocab_sha256:
        raise DatabaseError(
            "exemplar database vocabulary hash mismatch "
            f"(db {db.vocab_sha256[:12]}.. vs {vocab_sha256[:12]}..)"
        )
    if labels_sha256 and db.labels_sha256 and db.labels_sha256 != labels_sha256:
        raise DatabaseError(
            "exemplar database label-space hash mismatch "
            f"(db {db.labels_sha256[:12]}.. vs {labels_sha256[:12]}..)"
        )
