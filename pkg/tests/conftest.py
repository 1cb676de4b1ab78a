import numpy as np
import pytest

from tokenscope.corpus import (
    Document,
    LabelSpace,
    SyntheticSpec,
    build_vocab,
    encode_documents,
    generate_synthetic,
)
from tokenscope.model import init_global_head, init_params
from tokenscope.train import TrainConfig, init_finetune, train_base, train_finetune


def tiny_params(
    seed: int = 0,
    vocab_size: int = 9,
    embed_dim: int = 4,
    widths=(2, 3),
    counts=(3, 3),
    num_labels: int = 2,
    global_head: bool = True,
    randomize_head: bool = True,
):
    """Small random model with nonzero output layers (head init is zero by
    default, which would make most gradient paths degenerate)."""
    params = init_params(
        vocab_size, embed_dim, list(widths), list(counts), num_labels, seed=seed
    )
    rng = np.random.default_rng(seed + 1000)
    if randomize_head:
        params.head_w += rng.normal(0.0, 0.3, params.head_w.shape)
        params.head_b += rng.normal(0.0, 0.3, params.head_b.shape)
    if global_head:
        params = init_global_head(params)
        params.global_w += rng.normal(0.0, 0.2, params.global_w.shape)
        params.global_b += rng.normal(0.0, 0.2, params.global_b.shape)
    return params


def random_ids(rng: np.random.Generator, n: int, vocab_size: int) -> np.ndarray:
    return rng.integers(1, vocab_size, size=n)


def zero_params(
    num_labels=3, vocab=6, dim=3, widths=(1, 2), counts=(2, 2), global_head=False
):
    """Model with every tensor zeroed (logits identically zero)."""
    params = init_params(vocab, dim, list(widths), list(counts), num_labels, seed=0)
    params.embedding[:] = 0.0
    for bank in params.banks:
        bank.weights[:] = 0.0
        bank.bias[:] = 0.0
    params.head_w[:] = 0.0
    params.head_b[:] = 0.0
    if global_head:
        params = init_global_head(params)
    return params


@pytest.fixture(scope="session")
def small_synthetic():
    """A small planted-trigger corpus shared by mid-weight tests."""
    spec = SyntheticSpec(
        num_labels=4,
        num_train=120,
        num_dev=40,
        num_test=40,
        doc_len_range=(30, 60),
        labels_per_doc_range=(1, 2),
        noise_vocab_size=80,
        seed=11,
    )
    splits, label_space, trigger_map = generate_synthetic(spec)
    vocab = build_vocab(splits["train"], max_size=2000, min_doc_freq=2)
    encoded = {k: encode_documents(v, vocab) for k, v in splits.items()}
    return spec, encoded, label_space, vocab, trigger_map


SMALL_KW = dict(
    selection_k=1,
    embed_dim=12,
    widths=(1, 2, 3),
    filter_counts=(4, 6, 6),
    patience=None,
    batch_size=16,
)


@pytest.fixture(scope="session")
def small_finetuned(small_synthetic):
    """Base-trained then fine-tuned model over the small corpus."""
    _, encoded, label_space, vocab, _ = small_synthetic
    base_cfg = TrainConfig(phase="base", max_epochs=4, seed=3, **SMALL_KW)
    base = train_base(
        encoded["train"], encoded["dev"], label_space, base_cfg, vocab_size=len(vocab)
    )
    ft_cfg = TrainConfig(phase="finetune", max_epochs=3, seed=5, **SMALL_KW)
    ft = train_finetune(
        encoded["train"], encoded["dev"], init_finetune(base.params), label_space, ft_cfg
    )
    return base, ft


def make_label_space(num_labels: int) -> LabelSpace:
    return LabelSpace(
        codes=[f"L{c:02d}" for c in range(num_labels)],
        descriptions={},
        train_freq=np.ones(num_labels, dtype=np.int64),
        unseen_in_train=np.zeros(num_labels, dtype=bool),
    )


def make_doc(doc_id: str, tokens: list[str], gold=(), vocab=None) -> Document:
    ids = None if vocab is None else vocab.encode(tokens)
    return Document(doc_id, tuple(tokens), frozenset(gold), token_ids=ids)
