import numpy as np
import pytest

from tokenscope.model import forward, params_hash, save_checkpoint, load_checkpoint
from tokenscope.train import (
    Adadelta,
    Adam,
    TrainConfig,
    TrainingError,
    config_for_full_label_set,
    init_finetune,
    train_base,
    train_finetune,
)

from conftest import SMALL_KW, tiny_params


class TestOptimizers:
    def test_zero_gradient_leaves_params_unchanged(self):
        for opt in (Adadelta(), Adam(lr=0.1)):
            tensors = {"w": np.array([1.0, -2.0])}
            before = tensors["w"].copy()
            opt.step(tensors, {"w": np.zeros(2)})
            assert np.array_equal(tensors["w"], before)

    def test_adam_converges_on_quadratic(self):
        # f(w) = w^2, gradient 2w
        tensors = {"w": np.array([1.0])}
        opt = Adam(lr=0.1)
        for _ in range(200):
            opt.step(tensors, {"w": 2.0 * tensors["w"]})
        assert abs(tensors["w"][0]) < 1e-2

    def test_adadelta_matches_hand_unrolled_recurrence(self):
        rho, eps = 0.9, 1e-6
        w = 0.7
        grads = [0.3, -0.2, 0.5]
        acc_g = acc_d = 0.0
        for g in grads:
            acc_g = rho * acc_g + (1 - rho) * g * g
            delta = -np.sqrt(acc_d + eps) / np.sqrt(acc_g + eps) * g
            acc_d = rho * acc_d + (1 - rho) * delta * delta
            w += delta
        tensors = {"w": np.array([0.7])}
        opt = Adadelta(rho=rho, eps=eps)
        for g in grads:
            opt.step(tensors, {"w": np.array([g])})
        assert abs(tensors["w"][0] - w) < 1e-12

    def test_nan_gradient_aborts(self):
        opt = Adam()
        with pytest.raises(TrainingError, match="non-finite"):
            opt.step({"w": np.zeros(1)}, {"w": np.array([np.nan])})

    def test_adam_bias_correction_first_step(self):
        # after one step from fresh state the update is exactly lr * sign(g)
        tensors = {"w": np.array([0.0])}
        opt = Adam(lr=0.01, eps=0.0)
        opt.step(tensors, {"w": np.array([0.4])})
        assert tensors["w"][0] == pytest.approx(-0.01)


class TestConfigPresets:
    def test_default_architecture(self):
        cfg = TrainConfig()
        assert cfg.widths == (1, 3, 4, 5)
        assert cfg.filter_counts == (100, 1000, 1000, 1000)
        assert sum(cfg.filter_counts) == 3100
        assert cfg.optimizer == "adadelta" and cfg.dropout == 0.5

    def test_full_label_set_preset(self):
        cfg = config_for_full_label_set(TrainConfig())
        assert cfg.filter_counts == (200, 2000, 2000, 2000)
        assert sum(cfg.filter_counts) == 6200
        assert cfg.optimizer == "adam" and cfg.adam_lr == 1e-4
        assert cfg.dropout == 0.6
        assert cfg.warmup_top_n == 1000 and cfg.warmup_epochs == 30

    def test_invalid_phase(self):
        with pytest.raises(ValueError):
            TrainConfig(phase="warmup")


class TestTrainingLoops:
    def test_one_epoch_determinism(self, small_synthetic):
        _, encoded, label_space, vocab, _ = small_synthetic
        docs = encoded["train"][:10]
        dev = encoded["dev"][:5]
        cfg = TrainConfig(phase="base", max_epochs=1, seed=42, **SMALL_KW)
        a = train_base(docs, dev, label_space, cfg, vocab_size=len(vocab))
        b = train_base(docs, dev, label_space, cfg, vocab_size=len(vocab))
        assert params_hash(a.params) == params_hash(b.params)
        assert a.log == b.log

    def test_selection_returns_best_epoch(self, small_finetuned):
        base, ft = small_finetuned
        for result, key in ((base, "dev_p_at_1"), (ft, "dev_p_at_1")):
            best_logged = max(row[key] for row in result.log)
            assert result.best_metric == best_logged
            # earliest epoch with that metric wins ties
            first = min(r["epoch"] for r in result.log if r[key] == best_logged)
            assert result.best_epoch == first

    def test_warmup_restricts_tied_layer_gradients(self, small_synthetic):
        _, encoded, label_space, vocab, _ = small_synthetic
        docs = encoded["train"][:12]
        dev = encoded["dev"][:4]
        cfg = TrainConfig(
            phase="base", max_epochs=1, seed=1, warmup_top_n=2, warmup_epochs=1,
            **SMALL_KW,
        )
        res = train_base(docs, dev, label_space, cfg, vocab_size=len(vocab))
        # rows of labels outside the warmup set never received gradient:
        # they keep their init values
        from tokenscope.model import init_params

        init = init_params(
            len(vocab), cfg.embed_dim, list(cfg.widths), list(cfg.filter_counts),
            label_space.num_labels, seed=cfg.seed,
        )
        warm = set(label_space.most_frequent(2).tolist())
        c = label_space.num_labels
        for label in range(c):
            on_changed = not np.array_equal(res.params.head_w[label], init.head_w[label])
            off_changed = not np.array_equal(
                res.params.head_w[c + label], init.head_w[c + label]
            )
            if label in warm:
                assert on_changed and off_changed
            else:
                assert not on_changed and not off_changed

    def test_finetune_requires_global_head(self, small_synthetic):
        _, encoded, label_space, vocab, _ = small_synthetic
        params = tiny_params(global_head=False)
        cfg = TrainConfig(phase="finetune", max_epochs=1, **SMALL_KW)
        with pytest.raises(ValueError, match="init_finetune"):
            train_finetune(encoded["train"][:4], encoded["dev"][:2], params, label_space, cfg)


class TestInitFinetune:
    def test_logit_identity_at_step_zero(self, small_synthetic, small_finetuned):
        _, encoded, _, _, _ = small_synthetic
        base, _ = small_finetuned
        params = init_finetune(base.params)
        worst = 0.0
        for doc in encoded["dev"]:
            trace = forward(doc.token_ids, params)
            worst = max(worst, float(np.max(np.abs(trace.global_logits - trace.doc_logits))))
        assert worst == 0.0

    def test_fused_score_equals_tied_parts_at_init(self, small_synthetic, small_finetuned):
        from tokenscope.model import decompose, infer, token_extremes

        _, encoded, _, _, _ = small_synthetic
        base, _ = small_finetuned
        params = init_finetune(base.params)
        doc = encoded["dev"][0]
        trace = forward(doc.token_ids, params)
        res = infer(trace, params)
        ext = token_extremes(decompose(trace, params))
        assert np.array_equal(res.logits, trace.doc_logits + ext.max_values)

    def test_round_trip_bit_identical(self, small_finetuned, tmp_path):
        base, _ = small_finetuned
        params = init_finetune(base.params)
        p1 = tmp_path / "a.ckpt"
        p2 = tmp_path / "b.ckpt"
        save_checkpoint(params, p1)
        loaded, _ = load_checkpoint(p1)
        save_checkpoint(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_double_init_rejected(self, small_finetuned):
        base, _ = small_finetuned
        params = init_finetune(base.params)
        with pytest.raises(ValueError, match="already initialized"):
            init_finetune(params)


class TestFineTuneQuality:
    def test_finetune_preserves_document_ranking(self, small_synthetic, small_finetuned):
        # fine-tuning must not collapse document scores
        base, ft = small_finetuned
        assert ft.best_metric >= base.best_metric - 0.02

    def test_restriction_full_k_equals_unrestricted_trajectory(self, small_synthetic):
        _, encoded, label_space, vocab, _ = small_synthetic
        docs = encoded["train"][:16]
        dev = encoded["dev"][:4]
        base_cfg = TrainConfig(phase="base", max_epochs=1, seed=2, **SMALL_KW)
        base = train_base(docs, dev, label_space, base_cfg, vocab_size=len(vocab))
        ft_a = TrainConfig(phase="finetune", max_epochs=2, seed=3, **SMALL_KW)
        ft_b = TrainConfig(
            phase="finetune", max_epochs=2, seed=3,
            restrict_top_k=label_space.num_labels, **SMALL_KW,
        )
        ra = train_finetune(docs, dev, init_finetune(base.params), label_space, ft_a)
        rb = train_finetune(docs, dev, init_finetune(base.params), label_space, ft_b)
        for name, tensor in ra.params.tensors().items():
            assert np.allclose(tensor, rb.params.tensors()[name], atol=1e-9)
