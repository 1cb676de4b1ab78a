"""Audit-report rendering (plain text and a machine-readable variant) plus
the figures the report path writes alongside the delimited output.

The text report shows, per (document, label): the label code, description,
and training frequency; the query snippet with the focus token bracketed;
each retrieved exemplar's snippet, raw distance, and normalized softmax
distance (higher means relatively closer); which exemplar class was overall
nearest; and the decision-rule outcomes.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .corpus import Document, LabelSpace
from .exemplar import CLASS_ORDER, AuditResult, snippet_text
from .netops import sigmoid

CLASS_TITLES = {
    "tp": "TP (predicted, gold)",
    "fn": "FN (gold, not predicted)",
    "fp": "FP (predicted, not gold)",
    "tn": "TN (document unrelated to label)",
}


def audit_result_to_dict(
    result: AuditResult,
    doc: Document,
    label_space: LabelSpace,
    snippet_window: int = 8,
) -> dict:
    code = label_space.codes[result.label]
    payload = {
        "doc_id": doc.doc_id,
        "label": code,
        "description": label_space.description(code),
        "train_frequency": int(label_space.train_freq[result.label]),
        "query": {
            "token_index": result.query_token,
            "token": doc.tokens[result.query_token]
            if 0 <= result.query_token < len(doc.tokens)
            else None,
            "snippet": snippet_text(doc, result.query_token, snippet_window),
            "logit": result.query_logit,
            "sigmoid": float(sigmoid(result.query_logit)),
            "predicted": result.query_predicted,
        },
        "i_star": result.i_star,
        "softmax_probs": result.probs,
        "exa_logit": result.exa_logit,
        "tau": result.tau,
        "decisions": result.decisions,
        "exemplars": {},
    }
    for cls in CLASS_ORDER:
        ex = result.exemplars[cls]
        if ex is None:
            payload["exemplars"][cls] = None
        else:
            payload["exemplars"][cls] = {
                "doc_id": ex.doc_id,
                "token_index": ex.token_index,
                "snippet": ex.snippet,
                "distance": ex.distance,
                "softmax_prob": result.probs.get(cls),
                "logit": ex.logit,
            }
    return payload


def render_audit_text(payloads: list[dict]) -> str:
    lines: list[str] = []
    for p in payloads:
        lines.append("=" * 72)
        lines.append(f"Document {p['doc_id']}")
        lines.append(
            f"Label {p['label']}  {p['description']}; "
            f"training frequency: {p['train_frequency']}"
        )
        lines.append("-" * 72)
        q = p["query"]
        status = "predicted" if q["predicted"] else "not predicted"
        lines.append(
            f"query ({status}, logit {q['logit']:.3f}, sigmoid {q['sigmoid']:.3f}, "
            f"token {q['token_index']}):"
        )
        lines.append(f"  {q['snippet']}")
        lines.append(f"nearest exemplar: {p['i_star'].upper()}")
        decisions = "  ".join(
            f"{name}={'yes' if flag else 'no'}" for name, flag in p["decisions"].items()
        )
        lines.append(f"decisions (tau={p['tau']:g}): {decisions}")
        for cls in CLASS_ORDER:
            ex = p["exemplars"][cls]
            if ex is None:
                lines.append(f"  {CLASS_TITLES[cls]}: absent (not in database)")
                continue
            marker = " *" if cls == p["i_star"] else ""
            lines.append(
                f"  {CLASS_TITLES[cls]}{marker}: train doc {ex['doc_id']}, "
                f"distance {ex['distance']:.4f}, "
                f"normalized softmax distance {ex['softmax_prob']:.3f}"
            )
            lines.append(f"    {ex['snippet']}")
        lines.append("")
    return "\n".join(lines)


def write_audit_json(payloads: list[dict], path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(payloads, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------


def save_token_score_figure(
    tokens: list[str],
    scores: np.ndarray,
    highlighted: np.ndarray,
    title: str,
    path: str | Path,
    max_tokens: int = 120,
) -> None:
    """Signed bar chart of combined token scores, highlighted tokens accented."""
    n = min(len(tokens), max_tokens)
    scores = np.asarray(scores[:n], dtype=float)
    colors = [
        ("#d62728" if highlighted[i] else "#1f77b4") if scores[i] > 0 else "#7f7f7f"
        for i in range(n)
    ]
    fig, ax = plt.subplots(figsize=(max(6.0, n * 0.12), 3.2))
    ax.bar(np.arange(n), scores, color=colors, width=0.85)
    ax.axhline(0.0, color="black", linewidth=0.6)
    ax.set_title(title, fontsize=9)
    ax.set_xlabel("token position")
    ax.set_ylabel("combined score")
    if n <= 60:
        ax.set_xticks(np.arange(n))
        ax.set_xticklabels(tokens[:n], rotation=90, fontsize=5)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_rule_tradeoff_figure(
    taus: list[float],
    precisions: list[float],
    recalls: list[float],
    path: str | Path,
) -> None:
    """Micro precision/recall against the TP softmax-probability threshold."""
    fig, ax = plt.subplots(figsize=(4.8, 3.2))
    ax.plot(taus, precisions, marker="o", label="micro precision")
    ax.plot(taus, recalls, marker="s", label="micro recall")
    ax.set_xlabel("softmax threshold for nearest-TP admission")
    ax.set_ylabel("value")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
