"""Operator entry points for the full pipeline.

Every command takes an optional key=value config file plus override flags
(flags win), validates artifact-hash compatibility before running, writes
artifacts/reports to files or stdout, and keeps diagnostics on stderr.
Checkpoints are self-contained: the vocabulary and label space ride inside
the checkpoint, so downstream commands need only the checkpoint plus data.
"""

from __future__ import annotations

import dataclasses
import sys
from pathlib import Path

import click
import numpy as np

from . import corpus as corpus_mod
from .corpus import (
    CorpusError,
    Document,
    LabelSpace,
    SyntheticSpec,
    Vocabulary,
    build_vocab,
    encode_documents,
    generate_synthetic,
    load_corpus_dir,
    load_embeddings,
    write_corpus_dir,
    write_trigger_map,
)
from .exemplar import (
    DatabaseError,
    apply_rule_to_predictions,
    audit_label,
    build_database,
    check_compatible,
    load_database,
    save_database,
    RULE_NAMES,
)
from .metrics import EvalRun, MetricError, format_report, micro_macro_f1, standard_report
from .model import (
    CheckpointError,
    ModelParams,
    forward,
    load_checkpoint,
    save_checkpoint,
    token_mask,
)
from .reports import (
    audit_result_to_dict,
    render_audit_text,
    save_rule_tradeoff_figure,
    save_token_score_figure,
    write_audit_json,
)
from .service import SessionState, create_server, serve_forever
from .train import (
    TrainConfig,
    TrainingError,
    TrainResult,
    format_epoch_log,
    gold_matrix,
    init_finetune,
    score_corpus,
    train_base,
    train_finetune,
)

KNOWN_ERRORS = (
    CorpusError,
    DatabaseError,
    CheckpointError,
    TrainingError,
    MetricError,
    ValueError,
    OSError,
)


def _fail(message: str) -> "click.ClickException":
    return click.ClickException(message)


def read_config_file(path: str | None) -> dict[str, str]:
    if not path:
        return {}
    cfg: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise CorpusError(f"{path}:{lineno}: expected key = value")
        key, value = stripped.split("=", 1)
        cfg[key.strip()] = value.strip()
    return cfg


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _parse_float_list(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}

TRAIN_KEY_PARSERS = {
    "phase": str,
    "optimizer": str,
    "adadelta_rho": float,
    "adadelta_eps": float,
    "adam_lr": float,
    "adam_beta1": float,
    "adam_beta2": float,
    "adam_eps": float,
    "dropout": float,
    "batch_size": int,
    "max_epochs": int,
    "selection_k": int,
    "warmup_top_n": int,
    "warmup_epochs": int,
    "restrict_top_k": int,
    "include_gold_in_restriction": lambda v: _BOOL[v.lower()],
    "include_pad_positions": lambda v: _BOOL[v.lower()],
    "loss_terms": lambda v: tuple(x.strip() for x in v.split(",") if x.strip()),
    "seed": int,
    "patience": int,
    "train_embeddings": lambda v: _BOOL[v.lower()],
    "embed_dim": int,
    "widths": _parse_int_list,
    "filter_counts": _parse_int_list,
}

DATA_KEYS = {"vocab_size": int, "min_doc_freq": int, "max_len": int}
DATA_DEFAULTS = {"vocab_size": 50_000, "min_doc_freq": 3, "max_len": 2500}


def build_train_config(cfg_file: dict[str, str], overrides: dict) -> tuple[TrainConfig, dict]:
    kwargs = {}
    data = dict(DATA_DEFAULTS)
    for key, raw in cfg_file.items():
        if key in TRAIN_KEY_PARSERS:
            kwargs[key] = TRAIN_KEY_PARSERS[key](raw)
        elif key in DATA_KEYS:
            data[key] = DATA_KEYS[key](raw)
        else:
            raise CorpusError(f"unknown config key: {key}")
    for key, value in overrides.items():
        if value is None:
            continue
        if key in DATA_KEYS:
            data[key] = value
        else:
            kwargs[key] = value
    return TrainConfig(**kwargs), data


def print_effective_config(config: TrainConfig, data: dict) -> None:
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        click.echo(f"{f.name} = {value}")
    for key in sorted(data):
        click.echo(f"{key} = {data[key]}")


# ---------------------------------------------------------------------------
# Bundles: checkpoint + vocabulary + label space in one file
# ---------------------------------------------------------------------------


def save_model_bundle(
    params: ModelParams,
    vocab: Vocabulary,
    label_space: LabelSpace,
    path: str | Path,
    phase: str,
    result: TrainResult | None = None,
) -> None:
    extra = {
        "phase": phase,
        "vocab_tokens": vocab.id_to_token[2:],
        "label_codes": label_space.codes,
        "label_descriptions": label_space.descriptions,
        "label_train_freq": [int(x) for x in label_space.train_freq],
        "label_unseen": [bool(x) for x in label_space.unseen_in_train],
    }
    if result is not None:
        extra["best_epoch"] = result.best_epoch
        extra["best_metric"] = result.best_metric
    save_checkpoint(
        params,
        path,
        vocab_sha256=vocab.sha256(),
        labels_sha256=label_space.sha256(),
        extra=extra,
    )


def load_model_bundle(path: str | Path) -> tuple[ModelParams, Vocabulary, LabelSpace, dict]:
    params, header = load_checkpoint(path)
    extra = header.get("extra", {})
    if "vocab_tokens" not in extra:
        raise CheckpointError(f"{path}: checkpoint lacks the embedded vocabulary")
    vocab = Vocabulary(extra["vocab_tokens"])
    label_space = LabelSpace(
        codes=list(extra["label_codes"]),
        descriptions=dict(extra["label_descriptions"]),
        train_freq=np.array(extra["label_train_freq"], dtype=np.int64),
        unseen_in_train=np.array(extra["label_unseen"], dtype=bool),
    )
    if vocab.sha256() != header.get("vocab_sha256"):
        raise CheckpointError(f"{path}: embedded vocabulary hash mismatch")
    if label_space.sha256() != header.get("labels_sha256"):
        raise CheckpointError(f"{path}: embedded label-space hash mismatch")
    return params, vocab, label_space, header


def ensure_labels_match(bundle: LabelSpace, data: LabelSpace, where: str) -> None:
    if bundle.codes != data.codes:
        only_model = sorted(set(bundle.codes) - set(data.codes))[:5]
        only_data = sorted(set(data.codes) - set(bundle.codes))[:5]
        raise CorpusError(
            f"label space mismatch between model and {where}: "
            f"model-only {only_model}, data-only {only_data}"
        )


def _load_split(
    data_dir: str, split: str, vocab: Vocabulary, bundle_labels: LabelSpace, max_len: int
) -> list[Document]:
    splits, data_labels = load_corpus_dir(data_dir, max_len=max_len)
    ensure_labels_match(bundle_labels, data_labels, data_dir)
    return encode_documents(splits[split], vocab)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


@click.group()
def main() -> None:
    """Multi-label text classifier with token-level decomposition and
    exemplar auditing."""


def _guard(fn):
    import functools

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except KNOWN_ERRORS as err:
            raise _fail(str(err)) from err

    return wrapper


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--num-labels", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--num-train", type=int, default=None)
@click.option("--num-dev", type=int, default=None)
@click.option("--num-test", type=int, default=None)
@click.option("--print-config", is_flag=True, default=False)
@_guard
def synth(config_path, out_dir, num_labels, seed, num_train, num_dev, num_test, print_config):
    """Generate a seeded synthetic corpus with planted per-label triggers."""
    cfg = read_config_file(config_path)
    spec_kwargs: dict = {}
    int_keys = {
        "num_labels",
        "trigger_len",
        "noise_vocab_size",
        "num_train",
        "num_dev",
        "num_test",
        "seed",
    }
    for key, raw in cfg.items():
        if key in int_keys:
            spec_kwargs[key] = int(raw)
        elif key in ("doc_len_range", "labels_per_doc_range"):
            lo, hi = _parse_int_list(raw)
            spec_kwargs[key] = (lo, hi)
        else:
            raise CorpusError(f"unknown synthetic config key: {key}")
    for key, value in (
        ("num_labels", num_labels),
        ("seed", seed),
        ("num_train", num_train),
        ("num_dev", num_dev),
        ("num_test", num_test),
    ):
        if value is not None:
            spec_kwargs[key] = value
    spec = SyntheticSpec(**spec_kwargs)
    if print_config:
        for f in dataclasses.fields(spec):
            click.echo(f"{f.name} = {getattr(spec, f.name)}")
        return
    splits, label_space, trigger_map = generate_synthetic(spec)
    out = Path(out_dir)
    write_corpus_dir(splits, label_space, out)
    write_trigger_map(trigger_map, label_space, out / "triggers.tsv")
    click.echo(
        f"wrote {sum(len(d) for d in splits.values())} documents, "
        f"{label_space.num_labels} labels to {out}",
        err=True,
    )


_train_options = [
    click.option("--config", "config_path", type=click.Path(exists=True), default=None),
    click.option("--data", "data_dir", required=True, type=click.Path(exists=True)),
    click.option("--out", "out_path", required=True, type=click.Path()),
    click.option("--log", "log_path", type=click.Path(), default=None),
    click.option("--epochs", "max_epochs", type=int, default=None),
    click.option("--batch-size", type=int, default=None),
    click.option("--seed", type=int, default=None),
    click.option("--dropout", type=float, default=None),
    click.option("--optimizer", type=click.Choice(["adadelta", "adam"]), default=None),
    click.option("--selection-k", type=int, default=None),
    click.option("--patience", type=int, default=None),
    click.option("--print-config", is_flag=True, default=False),
]


def _apply_options(options):
    def deco(fn):
        for option in reversed(options):
            fn = option(fn)
        return fn

    return deco


@main.command()
@_apply_options(_train_options)
@click.option("--embeddings", "embeddings_path", type=click.Path(exists=True), default=None)
@click.option("--embed-dim", type=int, default=None)
@click.option("--widths", type=str, default=None)
@click.option("--filter-counts", type=str, default=None)
@click.option("--vocab-size", type=int, default=None)
@click.option("--min-doc-freq", type=int, default=None)
@click.option("--max-len", type=int, default=None)
@_guard
def train(
    config_path,
    data_dir,
    out_path,
    log_path,
    max_epochs,
    batch_size,
    seed,
    dropout,
    optimizer,
    selection_k,
    patience,
    print_config,
    embeddings_path,
    embed_dim,
    widths,
    filter_counts,
    vocab_size,
    min_doc_freq,
    max_len,
):
    """Train the base model with document-level BCE."""
    overrides = {
        "phase": "base",
        "max_epochs": max_epochs,
        "batch_size": batch_size,
        "seed": seed,
        "dropout": dropout,
        "optimizer": optimizer,
        "selection_k": selection_k,
        "patience": patience,
        "embed_dim": embed_dim,
        "widths": _parse_int_list(widths) if widths else None,
        "filter_counts": _parse_int_list(filter_counts) if filter_counts else None,
        "vocab_size": vocab_size,
        "min_doc_freq": min_doc_freq,
        "max_len": max_len,
    }
    config, data_cfg = build_train_config(read_config_file(config_path), overrides)
    if print_config:
        print_effective_config(config, data_cfg)
        return
    splits, label_space = load_corpus_dir(data_dir, max_len=data_cfg["max_len"])
    vocab = build_vocab(
        splits["train"],
        max_size=data_cfg["vocab_size"],
        min_doc_freq=data_cfg["min_doc_freq"],
    )
    train_docs = encode_documents(splits["train"], vocab)
    dev_docs = encode_documents(splits["dev"], vocab)
    embedding = None
    if embeddings_path:
        embedding = load_embeddings(
            embeddings_path, vocab, dim=config.embed_dim, seed=config.seed
        )
    result = train_base(
        train_docs,
        dev_docs,
        label_space,
        config,
        vocab_size=len(vocab),
        embedding=embedding,
    )
    save_model_bundle(result.params, vocab, label_space, out_path, "base", result)
    if log_path:
        Path(log_path).write_text(format_epoch_log(result.log), encoding="utf-8")
    click.echo(
        f"best epoch {result.best_epoch}, dev P@{config.selection_k} "
        f"{result.best_metric:.3f} -> {out_path}",
        err=True,
    )


@main.command()
@_apply_options(_train_options)
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--terms", type=str, default=None, help="comma list: min,max,combined")
@click.option("--restrict-top-k", type=int, default=None)
@_guard
def finetune(
    config_path,
    data_dir,
    out_path,
    log_path,
    max_epochs,
    batch_size,
    seed,
    dropout,
    optimizer,
    selection_k,
    patience,
    print_config,
    model_path,
    terms,
    restrict_top_k,
):
    """Fine-tune a base model with the token min-max (+ combined) losses."""
    overrides = {
        "phase": "finetune",
        "max_epochs": max_epochs,
        "batch_size": batch_size,
        "seed": seed,
        "dropout": dropout,
        "optimizer": optimizer,
        "selection_k": selection_k,
        "patience": patience,
        "loss_terms": tuple(terms.split(",")) if terms else None,
        "restrict_top_k": restrict_top_k,
    }
    config, data_cfg = build_train_config(read_config_file(config_path), overrides)
    if print_config:
        print_effective_config(config, data_cfg)
        return
    params, vocab, label_space, _ = load_model_bundle(model_path)
    splits, data_labels = load_corpus_dir(data_dir, max_len=data_cfg["max_len"])
    ensure_labels_match(label_space, data_labels, data_dir)
    train_docs = encode_documents(splits["train"], vocab)
    dev_docs = encode_documents(splits["dev"], vocab)
    if not params.has_global_head:
        params = init_finetune(params)
    result = train_finetune(train_docs, dev_docs, params, label_space, config)
    save_model_bundle(result.params, vocab, label_space, out_path, "finetune", result)
    if log_path:
        Path(log_path).write_text(format_epoch_log(result.log), encoding="utf-8")
    click.echo(
        f"best epoch {result.best_epoch}, dev P@{config.selection_k} "
        f"{result.best_metric:.3f} -> {out_path}",
        err=True,
    )


@main.command("build-db")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--split", default="train", type=click.Choice(list(corpus_mod.SPLIT_NAMES)))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--snippet-window", type=int, default=8)
@click.option("--dtype", type=click.Choice(["float32", "float64"]), default="float32")
@click.option("--max-len", type=int, default=2500)
@_guard
def build_db(model_path, data_dir, split, out_path, snippet_window, dtype, max_len):
    """Build the exemplar database from a fine-tuned model over a split."""
    params, vocab, label_space, _ = load_model_bundle(model_path)
    docs = _load_split(data_dir, split, vocab, label_space, max_len)
    db = build_database(
        docs,
        params,
        label_space,
        snippet_window=snippet_window,
        dtype=np.dtype(dtype),
        vocab_sha256=vocab.sha256(),
    )
    save_database(db, out_path)
    click.echo(f"stored {len(db)} exemplar records -> {out_path}", err=True)


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--split", default="test", type=click.Choice(list(corpus_mod.SPLIT_NAMES)))
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--top", type=int, default=None)
@click.option("--offset", type=float, default=0.0)
@click.option("--max-len", type=int, default=2500)
@_guard
def predict(model_path, data_dir, split, out_path, top, offset, max_len):
    """Rank labels per document; writes a delimited file or stdout."""
    params, vocab, label_space, _ = load_model_bundle(model_path)
    docs = _load_split(data_dir, split, vocab, label_space, max_len)
    scores, preds, tokens = score_corpus(docs, params, offset=offset)
    lines = ["doc_id\trank\tlabel\tlogit\tsigmoid\tpredicted\ttoken_index"]
    sig = 1.0 / (1.0 + np.exp(-(scores + offset)))
    for i, doc in enumerate(docs):
        order = np.argsort(-scores[i], kind="stable")
        for rank, c in enumerate(order[: top or len(order)], start=1):
            lines.append(
                f"{doc.doc_id}\t{rank}\t{label_space.codes[c]}\t"
                f"{scores[i, c]:.6f}\t{sig[i, c]:.6f}\t"
                f"{int(preds[i, c])}\t{int(tokens[i, c])}"
            )
    text = "\n".join(lines) + "\n"
    if out_path:
        Path(out_path).write_text(text, encoding="utf-8")
    else:
        click.echo(text, nl=False)


@main.command("eval")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--split", default="test", type=click.Choice(list(corpus_mod.SPLIT_NAMES)))
@click.option("--db", "db_path", type=click.Path(exists=True), default=None)
@click.option("--rules", type=str, default=None, help="comma list from: soft,tp_only,db_only,tp_tau")
@click.option("--tau", "taus", type=str, default="0.0", help="comma list of thresholds for tp_tau")
@click.option("--k", "k_list", type=str, default="5", help="comma list of precision@k cutoffs")
@click.option("--offset", type=float, default=0.0)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--figures/--no-figures", default=True)
@click.option("--max-len", type=int, default=2500)
@_guard
def eval_cmd(
    model_path, data_dir, split, db_path, rules, taus, k_list, offset, out_path, figures, max_len
):
    """Metric report, optionally with exemplar decision-rule rows."""
    params, vocab, label_space, _ = load_model_bundle(model_path)
    docs = _load_split(data_dir, split, vocab, label_space, max_len)
    scores, preds, _ = score_corpus(docs, params, offset=offset)
    gold = gold_matrix(docs, label_space.num_labels).astype(bool)
    run = EvalRun(scores, preds, gold, unseen_in_train=label_space.unseen_in_train)
    ks = tuple(k for k in _parse_int_list(k_list) if k <= label_space.num_labels)
    rows = [("model", standard_report(run, k_values=ks))]

    rule_list = [r.strip() for r in (rules.split(",") if rules else []) if r.strip()]
    tau_values = list(_parse_float_list(taus))
    sweep: list[tuple[float, float, float]] = []
    if rule_list:
        if db_path is None:
            raise _fail("--rules requires --db")
        db = load_database(db_path)
        check_compatible(db, params, vocab.sha256(), label_space.sha256())
        masked = run.masked()
        for rule in rule_list:
            if rule not in RULE_NAMES:
                raise _fail(f"unknown rule {rule!r}; choose from {', '.join(RULE_NAMES)}")
            rule_taus = tau_values if rule == "tp_tau" else [0.0]
            for tau in rule_taus:
                rpred = apply_rule_to_predictions(docs, params, db, rule, tau=tau, offset=offset)
                rpred[:, label_space.unseen_in_train] = False
                name = f"{rule}@tau={tau:g}" if rule == "tp_tau" else rule
                values = micro_macro_f1(rpred, masked.gold)
                rows.append((name, values))
                if rule == "tp_tau":
                    sweep.append((tau, values["micro_precision"], values["micro_recall"]))

    text = format_report(rows)
    if out_path:
        Path(out_path).write_text(text, encoding="utf-8")
        if figures and len(sweep) >= 2:
            fig_path = Path(out_path).with_suffix("").as_posix() + "_rules.png"
            save_rule_tradeoff_figure(
                [s[0] for s in sweep],
                [s[1] for s in sweep],
                [s[2] for s in sweep],
                fig_path,
            )
            click.echo(f"figure -> {fig_path}", err=True)
    else:
        click.echo(text, nl=False)


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--db", "db_path", required=True, type=click.Path(exists=True))
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--doc", "doc_id", required=True, type=str)
@click.option("--label", "label_codes", multiple=True, type=str)
@click.option("--tau", type=float, default=0.0)
@click.option("--offset", type=float, default=0.0)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--json", "json_path", type=click.Path(), default=None)
@click.option("--figures/--no-figures", default=True)
@click.option("--max-len", type=int, default=2500)
@_guard
def audit(
    model_path, db_path, data_dir, doc_id, label_codes, tau, offset, out_path, json_path, figures, max_len
):
    """Audit (document, label) pairs against the exemplar database."""
    params, vocab, label_space, _ = load_model_bundle(model_path)
    db = load_database(db_path)
    check_compatible(db, params, vocab.sha256(), label_space.sha256())
    splits, data_labels = load_corpus_dir(data_dir, max_len=max_len)
    ensure_labels_match(label_space, data_labels, data_dir)
    doc = None
    for split_docs in splits.values():
        for d in split_docs:
            if d.doc_id == doc_id:
                doc = d
                break
    if doc is None:
        raise _fail(f"document not found in any split: {doc_id}")
    doc = encode_documents([doc], vocab)[0]
    trace = forward(doc.token_ids, params, mode="eval", keep_maps=True)
    if label_codes:
        labels = [label_space.label_id(code) for code in label_codes]
    else:
        from .model import infer as _infer

        res = _infer(trace, params, offset=offset)
        labels = sorted(set(np.nonzero(res.predicted)[0].tolist()) | set(doc.gold))
        if not labels:
            click.echo(f"no predicted or gold labels for {doc_id}", err=True)
    payloads = []
    for label in labels:
        result = audit_label(trace, params, db, label, offset=offset, tau=tau)
        payloads.append(audit_result_to_dict(result, doc, label_space, db.snippet_window))
    text = render_audit_text(payloads)
    if out_path:
        Path(out_path).write_text(text, encoding="utf-8")
        if figures:
            for label, payload in zip(labels, payloads):
                mask, tok_scores = token_mask(
                    trace,
                    params,
                    label,
                    mode="combined" if params.has_global_head else "minmax",
                )
                fig_path = (
                    Path(out_path).with_suffix("").as_posix()
                    + f"_{doc.doc_id}_{payload['label']}.png"
                )
                save_token_score_figure(
                    list(doc.tokens),
                    tok_scores,
                    mask,
                    f"{doc.doc_id} / {payload['label']}",
                    fig_path,
                )
    else:
        click.echo(text, nl=False)
    if json_path:
        write_audit_json(payloads, json_path)


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--db", "db_path", type=click.Path(exists=True), default=None)
@click.option("--data", "data_dir", type=click.Path(exists=True), default=None)
@click.option("--split", default="test", type=click.Choice(list(corpus_mod.SPLIT_NAMES)))
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8750)
@click.option("--annotations", "annotations_path", type=click.Path(), default=None)
@click.option("--tau", type=float, default=0.0)
@click.option("--ui", "ui_dir", type=click.Path(exists=True), default=None)
@click.option("--max-len", type=int, default=2500)
@_guard
def serve(
    model_path, db_path, data_dir, split, host, port, annotations_path, tau, ui_dir, max_len
):
    """Serve the audit HTTP API (and optionally a UI bundle)."""
    params, vocab, label_space, _ = load_model_bundle(model_path)
    db = None
    if db_path:
        db = load_database(db_path)
        check_compatible(db, params, vocab.sha256(), label_space.sha256())
    docs = None
    if data_dir:
        docs = _load_split(data_dir, split, vocab, label_space, max_len)
    state = SessionState(
        params,
        vocab,
        label_space,
        db=db,
        docs=docs,
        annotations_path=annotations_path,
        tau=tau,
    )
    server = create_server(state, host=host, port=port, ui_dir=ui_dir)
    actual_port = server.server_address[1]
    click.echo(f"listening on http://{host}:{actual_port}", err=True)
    serve_forever(server)


if __name__ == "__main__":
    main()
