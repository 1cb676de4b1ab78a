"""Multi-label text classification with an exactly decomposable CNN and
exemplar-based prediction auditing."""

from .corpus import (
    Document,
    LabelSpace,
    SyntheticSpec,
    Vocabulary,
    build_vocab,
    encode_documents,
    generate_synthetic,
    load_corpus_dir,
    load_embeddings,
)
from .exemplar import (
    AuditResult,
    ExemplarDatabase,
    audit_label,
    build_database,
    decision_rules,
    load_database,
    retrieve,
    save_database,
    token_vector,
)
from .losses import LossConfig, doc_bce_loss, doc_finetune_loss, restrict_labels
from .metrics import EvalRun, auc, micro_macro_f1, precision_at_k, standard_report
from .model import (
    ForwardTrace,
    ModelParams,
    backward,
    decompose,
    forward,
    infer,
    init_params,
    load_checkpoint,
    save_checkpoint,
    token_mask,
)
from .train import (
    Adadelta,
    Adam,
    TrainConfig,
    init_finetune,
    score_corpus,
    train_base,
    train_finetune,
)

__version__ = "0.1.0"
