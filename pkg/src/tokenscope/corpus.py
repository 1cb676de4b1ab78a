"""Corpus ingestion, vocabulary construction, embeddings, and synthetic data.

The on-disk corpus format is one document per line:

    doc_id<TAB>token token token ...<TAB>code;code;...

The label column may be empty. Tokens are lowercased on ingestion and any
token without at least one alphabetic character is dropped. Documents are
truncated to ``max_len`` tokens.

The synthetic generator plants a distinct trigger n-gram for each label and
records exactly where it was planted, giving a token-level ground truth that
the model never sees during training.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_ID = 0
UNK_ID = 1

SPLIT_NAMES = ("train", "dev", "test")

DEFAULT_MAX_LEN = 2500


class CorpusError(ValueError):
    """Malformed corpus input (bad row, missing file, empty corpus)."""


@dataclass(frozen=True)
class Document:
    doc_id: str
    tokens: tuple[str, ...]
    gold: frozenset[int]
    token_ids: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class LabelSpace:
    codes: list[str]
    descriptions: dict[str, str]
    train_freq: np.ndarray
    unseen_in_train: np.ndarray  # bool per label

    @property
    def num_labels(self) -> int:
        return len(self.codes)

    def __post_init__(self) -> None:
        if self.num_labels < 1:
            raise CorpusError("label space must contain at least one label")
        self._id_of = {c: i for i, c in enumerate(self.codes)}
        if len(self._id_of) != len(self.codes):
            raise CorpusError("duplicate label codes")

    def label_id(self, code: str) -> int:
        try:
            return self._id_of[code]
        except KeyError:
            raise KeyError(f"unknown label code: {code!r}") from None

    def description(self, code: str) -> str:
        return self.descriptions.get(code, code)

    def sha256(self) -> str:
        payload = "\n".join(
            f"{c}\t{self.descriptions.get(c, '')}\t{int(f)}\t{int(u)}"
            for c, f, u in zip(self.codes, self.train_freq, self.unseen_in_train)
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def most_frequent(self, top_n: int) -> np.ndarray:
        """Label ids of the top_n labels by training frequency (ties: lower id)."""
        order = np.lexsort((np.arange(self.num_labels), -self.train_freq))
        return np.sort(order[: min(top_n, self.num_labels)])


class Vocabulary:
    """Token/id mapping with reserved PAD (0) and UNK (1) entries."""

    def __init__(self, tokens: list[str]):
        self.id_to_token = [PAD_TOKEN, UNK_TOKEN] + list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise CorpusError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def encode(self, tokens: tuple[str, ...] | list[str]) -> np.ndarray:
        return np.array(
            [self.token_to_id.get(t, UNK_ID) for t in tokens], dtype=np.int64
        )

    def sha256(self) -> str:
        payload = "\n".join(self.id_to_token)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.id_to_token) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if lines[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise CorpusError(f"{path}: not a vocabulary file (missing reserved rows)")
        return cls(lines[2:])


def has_alpha(token: str) -> bool:
    return any(ch.isalpha() for ch in token)


def normalize_tokens(tokens: list[str]) -> list[str]:
    """Lowercase and drop tokens lacking an alphabetic character."""
    return [t.lower() for t in tokens if t and has_alpha(t)]


def build_vocab(
    train_docs: list[Document],
    max_size: int = 50_000,
    min_doc_freq: int = 3,
) -> Vocabulary:
    """Rank tokens by total count (ties lexicographic), keep those appearing in
    at least min_doc_freq training documents, cap at max_size entries.

    PAD/UNK are added on top of max_size retained tokens, matching a stated cap
    of "the 50k most common tokens".
    """
    if not train_docs:
        raise CorpusError("empty corpus")
    if max_size < 2:
        raise CorpusError("max_size must be at least 2")
    total: dict[str, int] = {}
    doc_freq: dict[str, int] = {}
    for doc in train_docs:
        seen = set()
        for tok in doc.tokens:
            if not has_alpha(tok):
                continue
            total[tok] = total.get(tok, 0) + 1
            if tok not in seen:
                seen.add(tok)
                doc_freq[tok] = doc_freq.get(tok, 0) + 1
    kept = [t for t, df in doc_freq.items() if df >= min_doc_freq]
    kept.sort(key=lambda t: (-total[t], t))
    return Vocabulary(kept[:max_size])


def encode_documents(docs: list[Document], vocab: Vocabulary) -> list[Document]:
    return [
        Document(d.doc_id, d.tokens, d.gold, token_ids=vocab.encode(d.tokens))
        for d in docs
    ]


# ---------------------------------------------------------------------------
# Delimited corpus format
# ---------------------------------------------------------------------------


def _parse_line(line: str, path: str, lineno: int, max_len: int) -> tuple[str, list[str], list[str]]:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 3:
        raise CorpusError(
            f"{path}:{lineno}: expected 3 tab-separated columns "
            f"(doc_id, tokens, labels), found {len(parts)}"
        )
    doc_id, token_field, label_field = parts
    if not doc_id:
        raise CorpusError(f"{path}:{lineno}: empty document id")
    tokens = normalize_tokens(token_field.split())[:max_len]
    codes = [c for c in label_field.split(";") if c]
    return doc_id, tokens, codes


def read_split_file(path: str | Path, max_len: int = DEFAULT_MAX_LEN) -> list[tuple[str, list[str], list[str]]]:
    p = Path(path)
    if not p.exists():
        raise CorpusError(f"missing split file: {p}")
    rows = []
    with open(p, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rows.append(_parse_line(line, str(p), lineno, max_len))
    return rows


def load_corpus_dir(
    path: str | Path,
    max_len: int = DEFAULT_MAX_LEN,
) -> tuple[dict[str, list[Document]], LabelSpace]:
    """Load train/dev/test splits from a directory and derive the label space.

    The label space is the union of codes across splits, with codes absent from
    the training split flagged unseen (scored as automatic misses downstream).
    Label ids are assigned in lexicographic code order for determinism.
    """
    directory = Path(path)
    raw: dict[str, list[tuple[str, list[str], list[str]]]] = {}
    for split in SPLIT_NAMES:
        raw[split] = read_split_file(directory / f"{split}.txt", max_len=max_len)
    if not raw["train"]:
        raise CorpusError("empty corpus")

    train_codes: dict[str, int] = {}
    all_codes: set[str] = set()
    for split, rows in raw.items():
        for _, _, codes in rows:
            all_codes.update(codes)
            if split == "train":
                for c in set(codes):
                    train_codes[c] = train_codes.get(c, 0) + 1
    codes = sorted(all_codes)
    descriptions = _load_descriptions(directory / "labels.txt")
    label_space = LabelSpace(
        codes=codes,
        descriptions={c: descriptions.get(c, c) for c in codes},
        train_freq=np.array([train_codes.get(c, 0) for c in codes], dtype=np.int64),
        unseen_in_train=np.array([c not in train_codes for c in codes], dtype=bool),
    )
    splits = {
        split: [
            Document(
                doc_id,
                tuple(tokens),
                frozenset(label_space.label_id(c) for c in set(codes_)),
            )
            for doc_id, tokens, codes_ in rows
        ]
        for split, rows in raw.items()
    }
    return splits, label_space


def _load_descriptions(path: Path) -> dict[str, str]:
    if not path.exists():
        return {}
    out = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) < 2:
            raise CorpusError(f"{path}:{lineno}: expected code<TAB>description")
        out[parts[0]] = parts[1]
    return out


def write_corpus(
    docs: list[Document], label_space: LabelSpace, path: str | Path
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            codes = ";".join(sorted(label_space.codes[i] for i in doc.gold))
            fh.write(f"{doc.doc_id}\t{' '.join(doc.tokens)}\t{codes}\n")


def write_corpus_dir(
    splits: dict[str, list[Document]], label_space: LabelSpace, directory: str | Path
) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for split in SPLIT_NAMES:
        write_corpus(splits[split], label_space, directory / f"{split}.txt")
    with open(directory / "labels.txt", "w", encoding="utf-8") as fh:
        for i, code in enumerate(label_space.codes):
            fh.write(
                f"{code}\t{label_space.descriptions.get(code, code)}\t"
                f"{int(label_space.train_freq[i])}\n"
            )


# ---------------------------------------------------------------------------
# Embeddings
# ---------------------------------------------------------------------------


def load_embeddings(
    path: str | Path,
    vocab: Vocabulary,
    dim: int = 100,
    seed: int = 0,
) -> np.ndarray:
    """Read plain-text word vectors (token followed by reals, space-separated).

    Tokens missing from the file are initialized uniform in [-0.25/D, 0.25/D];
    the PAD row is forced to zero. A leading "count dim" header line is
    tolerated and skipped.
    """
    vectors: dict[str, np.ndarray] = {}
    file_dim: int | None = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            parts = [p for p in parts if p]
            if not parts:
                continue
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                continue  # word2vec-style header
            token, values = parts[0], parts[1:]
            if file_dim is None:
                file_dim = len(values)
                if file_dim == 0:
                    raise CorpusError(f"{path}:{lineno}: no vector values")
            elif len(values) != file_dim:
                raise CorpusError(
                    f"{path}:{lineno}: dimension mismatch "
                    f"(expected {file_dim}, found {len(values)})"
                )
            vectors[token] = np.array([float(v) for v in values], dtype=np.float64)
    if file_dim is not None:
        dim = file_dim
    rng = np.random.default_rng(seed)
    bound = 0.25 / dim
    table = rng.uniform(-bound, bound, size=(len(vocab), dim))
    for token, vec in vectors.items():
        idx = vocab.token_to_id.get(token)
        if idx is not None:
            table[idx] = vec
    table[PAD_ID] = 0.0
    return table


def init_embeddings(vocab_size: int, dim: int, seed: int = 0) -> np.ndarray:
    """Seeded uniform init in [-0.25/D, 0.25/D] with a zero PAD row."""
    rng = np.random.default_rng(seed)
    bound = 0.25 / dim
    table = rng.uniform(-bound, bound, size=(vocab_size, dim))
    table[PAD_ID] = 0.0
    return table


# ---------------------------------------------------------------------------
# Synthetic corpus with planted triggers
# ---------------------------------------------------------------------------


@dataclass
class SyntheticSpec:
    num_labels: int = 10
    trigger_len: int = 2
    noise_vocab_size: int = 200
    doc_len_range: tuple[int, int] = (50, 120)
    labels_per_doc_range: tuple[int, int] = (1, 3)
    num_train: int = 1000
    num_dev: int = 200
    num_test: int = 200
    seed: int = 0
    triggers: list[tuple[str, ...]] | None = field(default=None)

    def resolved_triggers(self) -> list[tuple[str, ...]]:
        if self.triggers is not None:
            trigs = [tuple(t) for t in self.triggers]
            if len(trigs) != self.num_labels:
                raise CorpusError(
                    f"expected {self.num_labels} triggers, got {len(trigs)}"
                )
        else:
            trigs = [
                tuple(f"trig{c}x{j}" for j in range(self.trigger_len))
                for c in range(self.num_labels)
            ]
        seen_tokens: set[str] = set()
        seen_ngrams: set[tuple[str, ...]] = set()
        for t in trigs:
            if t in seen_ngrams or any(tok in seen_tokens for tok in t):
                raise CorpusError(f"trigger {' '.join(t)!r} overlaps across labels")
            seen_ngrams.add(t)
            seen_tokens.update(t)
        return trigs

    def validate(self) -> None:
        if self.num_labels < 1:
            raise CorpusError("num_labels must be >= 1")
        lo, hi = self.doc_len_range
        k_lo, k_hi = self.labels_per_doc_range
        if k_hi > self.num_labels:
            raise CorpusError("labels_per_doc exceeds label count")
        if lo < k_hi * self.trigger_len:
            raise CorpusError("documents too short to hold the planted triggers")
        self.resolved_triggers()


TriggerMap = dict[tuple[str, int], int]


def generate_synthetic(
    spec: SyntheticSpec,
) -> tuple[dict[str, list[Document]], LabelSpace, TriggerMap]:
    """Generate seeded train/dev/test splits with planted per-label triggers.

    Returns the splits, the label space, and a map (doc_id, label_id) -> token
    index of the planted trigger start. Trigger tokens never occur in the noise
    vocabulary, so a trigger occurs in a document iff it was planted there.
    """
    spec.validate()
    triggers = spec.resolved_triggers()
    rng = np.random.default_rng(spec.seed)
    noise = [f"w{i:04d}" for i in range(spec.noise_vocab_size)]
    trigger_map: TriggerMap = {}
    splits: dict[str, list[Document]] = {}
    counts = {"train": spec.num_train, "dev": spec.num_dev, "test": spec.num_test}
    label_freq = np.zeros(spec.num_labels, dtype=np.int64)
    for split in SPLIT_NAMES:
        docs = []
        for i in range(counts[split]):
            doc_id = f"{split}-{i:05d}"
            length = int(rng.integers(spec.doc_len_range[0], spec.doc_len_range[1] + 1))
            tokens = list(rng.choice(noise, size=length))
            k_lo, k_hi = spec.labels_per_doc_range
            k = int(rng.integers(k_lo, k_hi + 1))
            labels = sorted(int(c) for c in rng.choice(spec.num_labels, size=k, replace=False))
            taken: set[int] = set()
            for c in labels:
                start = _place_trigger(rng, length, spec.trigger_len, taken)
                tokens[start : start + spec.trigger_len] = triggers[c]
                trigger_map[(doc_id, c)] = start
                if split == "train":
                    label_freq[c] += 1
            docs.append(Document(doc_id, tuple(tokens), frozenset(labels)))
        splits[split] = docs
    label_space = LabelSpace(
        codes=[f"L{c:02d}" for c in range(spec.num_labels)],
        descriptions={
            f"L{c:02d}": f"planted trigger {' '.join(triggers[c])}"
            for c in range(spec.num_labels)
        },
        train_freq=label_freq,
        unseen_in_train=np.zeros(spec.num_labels, dtype=bool),
    )
    return splits, label_space, trigger_map


def _place_trigger(
    rng: np.random.Generator, length: int, width: int, taken: set[int]
) -> int:
    candidates = [
        s
        for s in range(0, length - width + 1)
        if all(p not in taken for p in range(s, s + width))
    ]
    if not candidates:
        raise CorpusError("no room left to plant a trigger")
    start = int(candidates[int(rng.integers(len(candidates)))])
    taken.update(range(start, start + width))
    return start


def write_trigger_map(trigger_map: TriggerMap, label_space: LabelSpace, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("doc_id\tlabel\ttoken_index\n")
        for (doc_id, label), idx in sorted(trigger_map.items()):
            fh.write(f"{doc_id}\t{label_space.codes[label]}\t{idx}\n")


def read_trigger_map(path: str | Path, label_space: LabelSpace) -> TriggerMap:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    out: TriggerMap = {}
    for line in lines[1:]:
        doc_id, code, idx = line.split("\t")
        out[(doc_id, label_space.label_id(code))] = int(idx)
    return out
