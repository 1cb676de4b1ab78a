"""Build a small deterministic model + database + corpus for frontend tests.

Usage: python3 build_fixture.py OUT_DIR
Writes OUT_DIR/{data/, model.ckpt, train.exdb} in a few seconds.
"""

import sys
from pathlib import Path

import numpy as np

from tokenscope.cli import save_model_bundle
from tokenscope.corpus import (
    SyntheticSpec,
    build_vocab,
    encode_documents,
    generate_synthetic,
    write_corpus_dir,
)
from tokenscope.exemplar import build_database, save_database
from tokenscope.train import TrainConfig, init_finetune, train_base, train_finetune


def main(out_dir: str) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = SyntheticSpec(
        num_labels=4, num_train=100, num_dev=24, num_test=24,
        doc_len_range=(25, 45), labels_per_doc_range=(1, 2),
        noise_vocab_size=70, seed=29,
    )
    splits, label_space, _ = generate_synthetic(spec)
    write_corpus_dir(splits, label_space, out / "data")
    vocab = build_vocab(splits["train"], max_size=2000, min_doc_freq=2)
    encoded = {k: encode_documents(v, vocab) for k, v in splits.items()}
    kw = dict(
        selection_k=1, embed_dim=16, widths=(1, 2, 3), filter_counts=(4, 8, 8),
        patience=None, batch_size=16,
    )
    base = train_base(
        encoded["train"], encoded["dev"], label_space,
        TrainConfig(phase="base", max_epochs=6, seed=1, **kw),
        vocab_size=len(vocab),
    )
    ft = train_finetune(
        encoded["train"], encoded["dev"], init_finetune(base.params),
        label_space, TrainConfig(phase="finetune", max_epochs=3, seed=2, **kw),
    )
    save_model_bundle(ft.params, vocab, label_space, out / "model.ckpt", "finetune", ft)
    db = build_database(
        encoded["train"], ft.params, label_space, vocab_sha256=vocab.sha256()
    )
    save_database(db, out / "train.exdb")
    print(f"fixture ready: {out}")


if __name__ == "__main__":
    main(sys.argv[1])
