import numpy as np
import pytest

from tokenscope.losses import (
    LossConfig,
    bce_scalar,
    combined_terms,
    doc_bce_loss,
    doc_finetune_loss,
    minmax_terms,
    restrict_labels,
)
from tokenscope.model import TokenExtremes, decompose, forward, token_extremes

from conftest import random_ids, tiny_params, zero_params

LN2 = float(np.log(2.0))


def extremes(min_vals, max_vals):
    n = len(min_vals)
    return TokenExtremes(
        labels=np.arange(n),
        max_values=np.asarray(max_vals, dtype=float),
        max_indices=np.zeros(n, dtype=np.int64),
        min_values=np.asarray(min_vals, dtype=float),
        min_indices=np.zeros(n, dtype=np.int64),
    )


class TestBce:
    def test_zero_logit_positive_label(self):
        assert bce_scalar(np.array([0.0]), np.array([1.0])) == pytest.approx(LN2)

    def test_saturated_no_overflow(self):
        assert bce_scalar(np.array([50.0]), np.array([1.0])) < 1e-20
        assert np.isfinite(bce_scalar(np.array([500.0]), np.array([0.0])))

    def test_mean_over_labels(self):
        loss = bce_scalar(np.array([0.0, 0.0, 0.0, 0.0]), np.array([1.0, 0, 0, 0]))
        assert loss == pytest.approx(LN2)


class TestMinMax:
    def test_all_zero_scores_give_ln2_each(self):
        ext = extremes([0.0, 0.0], [0.0, 0.0])
        losses, _, _ = minmax_terms(ext, np.array([1.0, 0.0]))
        assert np.allclose(losses, 2 * LN2)  # ln2 for min term + ln2 for max term

    def test_saturated_positive_document(self):
        ext = extremes([-50.0], [50.0])
        losses, _, _ = minmax_terms(ext, np.array([1.0]))
        assert losses[0] < 1e-20

    def test_min_term_applies_regardless_of_label(self):
        # positive min score is penalized on negative AND positive documents
        ext = extremes([3.0], [3.0])
        loss_pos, _, _ = minmax_terms(ext, np.array([1.0]))
        loss_neg, _, _ = minmax_terms(ext, np.array([0.0]))
        softplus3 = np.log1p(np.exp(3.0))
        assert loss_pos[0] == pytest.approx(softplus3 + np.log1p(np.exp(-3.0)))
        assert loss_neg[0] == pytest.approx(softplus3 + softplus3)

    def test_monotone_decreasing_in_max_for_positive_label(self):
        y = np.array([1.0])
        values = [
            minmax_terms(extremes([-1.0], [s]), y)[0][0] for s in (0.0, 0.5, 1.0, 3.0)
        ]
        assert all(a > b for a, b in zip(values, values[1:]))


class TestCombined:
    def test_global_cancels_max_gives_ln2(self):
        losses, _ = combined_terms(
            np.array([-2.5]), np.array([2.5]), np.array([1.0])
        )
        assert losses[0] == pytest.approx(LN2)
        losses0, _ = combined_terms(
            np.array([-2.5]), np.array([2.5]), np.array([0.0])
        )
        assert losses0[0] == pytest.approx(LN2)

    def test_requires_global_head(self):
        params = tiny_params(global_head=False)
        trace = forward(np.array([1, 2, 3]), params)
        cfg = LossConfig(terms=frozenset({"min", "max", "combined"}))
        with pytest.raises(ValueError, match="global head"):
            doc_finetune_loss(trace, params, np.zeros(params.num_labels), cfg)

    def test_zero_params_negative_label(self):
        params = zero_params(global_head=True)
        trace = forward(np.array([1, 2, 3]), params)
        cfg = LossConfig(terms=frozenset({"min", "max", "combined"}))
        loss, _ = doc_finetune_loss(trace, params, np.zeros(params.num_labels), cfg)
        assert loss == pytest.approx(3 * LN2)  # min, max, combined each ln 2

    def test_nonnegative(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            g = rng.normal(size=3)
            m = rng.normal(size=3)
            y = rng.integers(0, 2, size=3).astype(float)
            losses, _ = combined_terms(g, m, y)
            assert np.all(losses >= 0)


class TestRestrictLabels:
    def test_k_equals_c_selects_all(self):
        out = restrict_labels(np.array([3.0, 1.0, 2.0]), [], 3)
        assert list(out) == [0, 1, 2]

    def test_top_k_union_gold(self):
        out = restrict_labels(np.array([5.0, 4.0, 3.0, 2.0, 1.0]), [4], 2)
        assert list(out) == [0, 1, 4]

    def test_gold_within_top_one(self):
        out = restrict_labels(np.array([9.0, 1.0]), [0], 1)
        assert list(out) == [0]

    def test_k_clamped_to_c(self):
        out = restrict_labels(np.array([1.0, 2.0]), [], 10)
        assert list(out) == [0, 1]

    def test_literal_mode_excludes_gold(self):
        out = restrict_labels(np.array([5.0, 4.0, 3.0]), [2], 1, include_gold=False)
        assert list(out) == [0]

    def test_tie_breaks_to_lower_id(self):
        out = restrict_labels(np.array([1.0, 1.0, 1.0]), [], 2)
        assert list(out) == [0, 1]

    def test_invalid_k(self):
        with pytest.raises(ValueError):
            restrict_labels(np.array([1.0]), [], 0)


class TestDocLosses:
    def test_restriction_at_full_k_equals_unrestricted(self):
        params = tiny_params(seed=4, num_labels=4)
        rng = np.random.default_rng(8)
        ids = random_ids(rng, 12, params.embedding.shape[0])
        trace = forward(ids, params)
        y = np.array([1.0, 0.0, 1.0, 0.0])
        full = LossConfig(terms=frozenset({"min", "max", "combined"}))
        restricted = LossConfig(
            terms=frozenset({"min", "max", "combined"}), restrict_top_k=4
        )
        l1, g1 = doc_finetune_loss(trace, params, y, full)
        l2, g2 = doc_finetune_loss(trace, params, y, restricted)
        assert abs(l1 - l2) < 1e-12
        assert np.allclose(g1.d_global, g2.d_global)

    def test_restricted_set_matches_sort_oracle(self):
        params = tiny_params(seed=6, num_labels=5)
        rng = np.random.default_rng(2)
        ids = random_ids(rng, 10, params.embedding.shape[0])
        trace = forward(ids, params)
        y = np.zeros(5)
        y[3] = 1.0
        cfg = LossConfig(terms=frozenset({"min", "max", "combined"}), restrict_top_k=2)
        _, grads = doc_finetune_loss(trace, params, y, cfg)
        touched = {label for label, _, _ in grads.token_terms}
        order = np.argsort(-trace.global_logits, kind="stable")
        expected = set(order[:2].tolist()) | {3}
        assert touched == expected

    def test_bce_loss_zero_model_is_ln2(self):
        params = zero_params()
        trace = forward(np.array([1, 2, 3]), params)
        loss, grads = doc_bce_loss(trace, np.zeros(params.num_labels))
        assert loss == pytest.approx(LN2)
        assert np.allclose(grads.d_doc, 0.5 / params.num_labels)

    def test_pad_exclusion_option_changes_scan(self):
        from tokenscope.corpus import PAD_ID

        params = tiny_params(seed=12)
        ids = np.array([1, 2, 3, PAD_ID, PAD_ID])
        trace = forward(ids, params)
        y = np.zeros(params.num_labels)
        incl = LossConfig(terms=frozenset({"min", "max"}))
        excl = LossConfig(terms=frozenset({"min", "max"}), include_pad_positions=False)
        l_incl, _ = doc_finetune_loss(trace, params, y, incl)
        l_excl, _ = doc_finetune_loss(trace, params, y, excl)
        combined = decompose(trace, params).combined
        # the masked variant must equal a manual scan over real positions only
        import tokenscope.netops as nops

        manual = np.mean(
            nops.softplus(combined[:, :3].min(axis=1))
            + nops.bce_with_logits(combined[:, :3].max(axis=1), y)
        )
        assert l_excl == pytest.approx(float(manual))
        assert np.isfinite(l_incl)


class TestLossConfig:
    def test_bce_exclusive_with_finetune_terms(self):
        with pytest.raises(ValueError, match="bce cannot be combined"):
            LossConfig(terms=frozenset({"bce", "min", "max"}))

    def test_finetune_requires_min_and_max(self):
        with pytest.raises(ValueError, match="min and max"):
            LossConfig(terms=frozenset({"combined"}))

    def test_unknown_term(self):
        with pytest.raises(ValueError, match="unknown loss terms"):
            LossConfig(terms=frozenset({"huber"}))
