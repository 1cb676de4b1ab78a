import numpy as np
import pytest

from tokenscope.exemplar import (
    CLASS_ORDER,
    AuditResult,
    DatabaseError,
    ExemplarDatabase,
    apply_rule_to_predictions,
    audit_label,
    build_database,
    check_compatible,
    decision_rules,
    euclidean_distances,
    exa_logit,
    load_database,
    retrieve,
    save_database,
    token_vector,
)
from tokenscope.model import decompose, forward, infer, params_hash, token_extremes
from tokenscope.train import DEFAULT_FILTER_COUNTS, FULL_SET_FILTER_COUNTS

from conftest import make_doc, make_label_space, random_ids, tiny_params, zero_params


def make_db(vectors, labels, predicted, gold, doc_ids=None, logits=None):
    r = len(labels)
    return ExemplarDatabase(
        vectors=np.asarray(vectors, dtype=np.float64),
        doc_ids=doc_ids or [f"doc{i}" for i in range(r)],
        snippets=["..."] * r,
        token_indices=np.zeros(r, dtype=np.int64),
        labels=np.asarray(labels, dtype=np.int64),
        predicted=np.asarray(predicted, dtype=bool),
        gold=np.asarray(gold, dtype=bool),
        logits=np.asarray(logits if logits is not None else np.zeros(r), dtype=np.float64),
        model_sha256="m",
    )


class TestTokenVector:
    def test_width_one_is_raw_column(self):
        params = tiny_params(seed=3, widths=(1,), counts=(4,))
        rng = np.random.default_rng(0)
        ids = random_ids(rng, 6, params.embedding.shape[0])
        trace = forward(ids, params)
        for n in range(6):
            vec = token_vector(trace, params, n)
            assert np.array_equal(vec[:4], trace.feature_maps[0][:, n])
            assert np.array_equal(vec[4:], trace.pooled)

    def test_interior_token_averages_covering_windows(self):
        params = tiny_params(seed=1, widths=(3,), counts=(2,))
        trace = forward(np.array([1, 2, 3, 4, 5, 6, 7]), params)
        h = trace.feature_maps[0]
        # token 2 (0-based) is covered by applications starting at 0, 1, 2
        vec = token_vector(trace, params, 2)
        assert np.allclose(vec[:2], h[:, 0:3].mean(axis=1))

    def test_boundary_token_clips_window_range(self):
        params = tiny_params(seed=2, widths=(3,), counts=(2,))
        trace = forward(np.array([1, 2, 3, 4, 5, 6]), params)
        h = trace.feature_maps[0]
        assert np.allclose(token_vector(trace, params, 0)[:2], h[:, 0])
        # last token: only the final application covers it
        assert np.allclose(token_vector(trace, params, 5)[:2], h[:, 3])

    def test_dimension_is_twice_total_filters(self):
        params = tiny_params(seed=5)
        trace = forward(np.array([1, 2, 3, 4]), params)
        assert token_vector(trace, params, 0).shape == (2 * params.total_filters,)

    def test_paper_scale_dimensions(self):
        assert 2 * sum(DEFAULT_FILTER_COUNTS) == 6200
        assert 2 * sum(FULL_SET_FILTER_COUNTS) == 12400

    def test_out_of_range(self):
        params = tiny_params(seed=1)
        trace = forward(np.array([1, 2, 3, 4]), params)
        with pytest.raises(ValueError, match="out of range"):
            token_vector(trace, params, 9)

    def test_token_block_keeps_negative_values(self):
        params = tiny_params(seed=9)
        rng = np.random.default_rng(4)
        ids = random_ids(rng, 10, params.embedding.shape[0])
        trace = forward(ids, params)
        m = params.total_filters
        found_negative = any(
            np.any(token_vector(trace, params, n)[:m] < 0) for n in range(10)
        )
        assert found_negative  # raw filter block is signed
        for n in range(10):
            assert np.all(token_vector(trace, params, n)[m:] >= 0.0)


class TestBuildDatabase:
    def test_predicted_and_gold_rule(self):
        ls = make_label_space(8)
        params = zero_params(num_labels=8, global_head=True)
        params.global_b[7] = 5.0  # label 7 predicted everywhere
        doc = make_doc("d0", ["a", "b"], gold=[3])
        doc = doc.__class__(doc.doc_id, doc.tokens, doc.gold, token_ids=np.array([1, 2]))
        db = build_database([doc], params, ls)
        assert len(db) == 2
        stored = {(int(l), bool(p), bool(g)) for l, p, g in zip(db.labels, db.predicted, db.gold)}
        assert stored == {(3, False, True), (7, True, False)}

    def test_doc_without_labels_stores_nothing(self):
        ls = make_label_space(4)
        params = zero_params(num_labels=4, global_head=True)
        doc = make_doc("d0", ["a", "b"], gold=[])
        doc = doc.__class__(doc.doc_id, doc.tokens, doc.gold, token_ids=np.array([1, 2]))
        db = build_database([doc], params, ls)
        assert len(db) == 0

    def test_record_count_matches_recount_oracle(self, small_synthetic, small_finetuned):
        _, encoded, label_space, _, _ = small_synthetic
        _, ft = small_finetuned
        docs = encoded["train"][:40]
        db = build_database(docs, ft.params, label_space)
        expected = 0
        for doc in docs:
            trace = forward(doc.token_ids, ft.params)
            res = infer(trace, ft.params)
            expected += len(set(np.nonzero(res.predicted)[0].tolist()) | set(doc.gold))
        assert len(db) == expected

    def test_storage_restriction_invariants(self, small_synthetic, small_finetuned):
        _, encoded, label_space, _, _ = small_synthetic
        _, ft = small_finetuned
        db = build_database(encoded["train"][:40], ft.params, label_space)
        assert np.all(db.predicted | db.gold)
        pairs = list(zip(db.doc_ids, db.labels.tolist()))
        assert len(pairs) == len(set(pairs))

    def test_requires_global_head(self):
        ls = make_label_space(2)
        params = zero_params(num_labels=2)
        with pytest.raises(DatabaseError, match="fine-tuned"):
            build_database([], params, ls)


class TestRetrieve:
    def test_single_tp_at_zero_distance(self):
        db = make_db([[1.0, 0.0]], [0], [True], [True])
        res = retrieve(np.array([1.0, 0.0]), 0, db)
        assert res.i_star == "tp"
        assert res.probs == {"tp": 1.0}
        assert res.exemplars["tp"].distance == 0.0
        for cls in ("fn", "fp", "tn"):
            assert res.exemplars[cls] is None

    def test_equal_distances_give_quarter_each(self):
        vectors = [[1.0, 0], [0, 1.0], [-1.0, 0], [0, -1.0]]
        # tp, fn, fp for label 0; tn from a doc only associated with label 1
        db = make_db(
            vectors,
            labels=[0, 0, 0, 1],
            predicted=[True, False, True, True],
            gold=[True, True, False, True],
        )
        res = retrieve(np.zeros(2), 0, db)
        assert set(res.probs) == {"tp", "fn", "fp", "tn"}
        for p in res.probs.values():
            assert p == 0.25  # exact
        assert res.i_star == "tp"  # tie broken in class order

    def test_absent_classes_excluded_from_softmax(self):
        db = make_db(
            [[0.0, 0.0], [3.0, 4.0]],
            labels=[0, 0],
            predicted=[True, False],
            gold=[True, True],
        )
        res = retrieve(np.zeros(2), 0, db)
        assert set(res.probs) == {"tp", "fn"}
        assert sum(res.probs.values()) == pytest.approx(1.0, abs=1e-12)
        assert res.probs["tp"] > res.probs["fn"]

    def test_absent_large_distance_mode_matches_excluded_mode(self):
        db = make_db(
            [[0.5, 0.0], [1.0, 1.0]],
            labels=[0, 0],
            predicted=[True, False],
            gold=[True, True],
        )
        q = np.zeros(2)
        a = retrieve(q, 0, db)
        b = retrieve(q, 0, db, absent_large_distance=True)
        for cls in a.probs:
            assert a.probs[cls] == pytest.approx(b.probs[cls], abs=1e-12)

    def test_tn_candidates_exclude_docs_associated_with_label(self):
        # doc0 has a record for label 0 and one for label 1: its label-1 record
        # must not be a TN candidate for a query on label 0
        db = make_db(
            [[0.0, 0.0], [0.1, 0.0], [5.0, 5.0]],
            labels=[0, 1, 1],
            predicted=[True, True, True],
            gold=[True, False, True],
            doc_ids=["doc0", "doc0", "doc9"],
        )
        res = retrieve(np.zeros(2), 0, db)
        assert res.exemplars["tn"].doc_id == "doc9"

    def test_matches_bruteforce_scan(self):
        rng = np.random.default_rng(99)
        for trial in range(10):
            r, dim, c = 120, 6, 5
            vectors = rng.normal(size=(r, dim))
            labels = rng.integers(0, c, size=r)
            predicted = rng.random(r) < 0.7
            gold = rng.random(r) < 0.5
            keep = predicted | gold
            db = make_db(
                vectors[keep],
                labels=labels[keep],
                predicted=predicted[keep],
                gold=gold[keep],
                doc_ids=[f"doc{i}" for i in np.nonzero(keep)[0]],
            )
            q = rng.normal(size=dim)
            label = int(rng.integers(0, c))
            res = retrieve(q, label, db)
            masks = db.class_masks(label)
            dists = np.sqrt(((db.vectors - q) ** 2).sum(axis=1))
            for cls in CLASS_ORDER:
                idx = np.nonzero(masks[cls])[0]
                if idx.shape[0] == 0:
                    assert res.exemplars[cls] is None
                    continue
                best = idx[np.argmin(dists[idx])]
                assert abs(res.exemplars[cls].distance - dists[best]) < 1e-9
                assert res.exemplars[cls].record_index in set(
                    idx[dists[idx] == dists[best]].tolist()
                )

    def test_parallel_scan_equals_serial(self):
        rng = np.random.default_rng(5)
        vectors = rng.normal(size=(30_000, 8))
        q = rng.normal(size=8)
        serial = euclidean_distances(vectors, q, workers=1)
        parallel = euclidean_distances(vectors, q, workers=4)
        assert np.array_equal(serial, parallel)

    def test_empty_database(self):
        db = make_db(np.zeros((0, 2)), [], [], [])
        with pytest.raises(DatabaseError, match="empty"):
            retrieve(np.zeros(2), 0, db)


class TestDecisionRules:
    def _result(self, i_star, probs, db_logit):
        from tokenscope.exemplar import RetrievedExemplar

        exemplars = {cls: None for cls in CLASS_ORDER}
        exemplars[i_star] = RetrievedExemplar(
            record_index=0, doc_id="d", token_index=0, label=0, predicted=True,
            gold=True, logit=db_logit, snippet="", distance=0.5,
        )
        return AuditResult(label=0, exemplars=exemplars, probs=probs, i_star=i_star)

    def test_zero_database_score_keeps_query_decision(self):
        res = self._result("tp", {"tp": 1.0}, 0.0)
        assert exa_logit(0.3, res) == pytest.approx(0.3)
        assert decision_rules(True, 0.3, res)["soft"] is True

    def test_strong_negative_database_score_rejects(self):
        res = self._result("tp", {"tp": 0.9}, -10.0)
        assert exa_logit(0.1, res) == pytest.approx(0.1 - 9.0)
        assert decision_rules(True, 0.1, res)["soft"] is False

    def test_influence_monotone_in_softmax_prob(self):
        logits = [
            exa_logit(0.1, self._result("tp", {"tp": p}, 2.0))
            for p in (0.25, 0.5, 0.75, 1.0)
        ]
        assert all(a < b for a, b in zip(logits, logits[1:]))

    def test_tau_zero_equals_plain_tp_rule(self):
        res = self._result("tp", {"tp": 0.6}, 1.0)
        d = decision_rules(True, 1.0, res, tau=0.0)
        assert d["tp_tau"] == d["tp_only"] is True

    def test_fp_nearest_rejects_regardless_of_distance(self):
        res = self._result("fp", {"fp": 1.0}, 5.0)
        d = decision_rules(True, 1.0, res)
        assert d["tp_only"] is False and d["tp_tau"] is False

    def test_negative_queries_stay_negative(self):
        res = self._result("tp", {"tp": 1.0}, 10.0)
        d = decision_rules(False, -1.0, res)
        assert not any(d.values())

    def test_db_only_substitutes_training_score(self):
        pos = self._result("tp", {"tp": 1.0}, 0.2)
        neg = self._result("tp", {"tp": 1.0}, -0.2)
        assert decision_rules(True, 5.0, pos)["db_only"] is True
        assert decision_rules(True, 5.0, neg)["db_only"] is False


class TestRulePredictions:
    def test_rule_sets_nested_in_query_positives(self, small_synthetic, small_finetuned):
        _, encoded, label_space, _, _ = small_synthetic
        _, ft = small_finetuned
        db = build_database(encoded["train"][:60], ft.params, label_space)
        docs = encoded["test"][:25]
        from tokenscope.train import score_corpus

        _, query_pos, _ = score_corpus(docs, ft.params)
        for rule in ("soft", "tp_only", "db_only"):
            preds = apply_rule_to_predictions(docs, ft.params, db, rule)
            assert np.all(~preds | query_pos)  # rule set within query positives
        taus = [0.0, 0.2, 0.4, 0.6]
        rule_preds = [
            apply_rule_to_predictions(docs, ft.params, db, "tp_tau", tau=t)
            for t in taus
        ]
        for a, b in zip(rule_preds, rule_preds[1:]):
            assert np.all(~b | a)  # nested non-increasing in tau

    def test_audit_label_round_trip(self, small_synthetic, small_finetuned):
        _, encoded, label_space, _, _ = small_synthetic
        _, ft = small_finetuned
        db = build_database(encoded["train"][:60], ft.params, label_space)
        doc = encoded["test"][0]
        trace = forward(doc.token_ids, ft.params, keep_maps=True)
        label = sorted(doc.gold)[0]
        res = audit_label(trace, ft.params, db, label)
        assert sum(res.probs.values()) == pytest.approx(1.0, abs=1e-12)
        ext = token_extremes(decompose(trace, ft.params, labels=[label]))
        assert res.query_token == int(ext.max_indices[0])
        assert set(res.decisions) == {"soft", "tp_only", "db_only", "tp_tau"}


class TestPersistence:
    def test_round_trip(self, small_synthetic, small_finetuned):
        _, encoded, label_space, vocab, _ = small_synthetic
        _, ft = small_finetuned
        db = build_database(
            encoded["train"][:30], ft.params, label_space, vocab_sha256=vocab.sha256()
        )
        import tempfile, os

        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "db.exdb")
            save_database(db, path)
            loaded = load_database(path)
            assert np.array_equal(loaded.vectors, db.vectors)
            assert loaded.doc_ids == db.doc_ids
            assert loaded.snippets == db.snippets
            assert np.array_equal(loaded.labels, db.labels)
            assert np.array_equal(loaded.predicted, db.predicted)
            assert np.array_equal(loaded.gold, db.gold)
            assert np.array_equal(loaded.logits, db.logits)
            assert loaded.model_sha256 == db.model_sha256
            # deterministic bytes
            path2 = os.path.join(tmp, "db2.exdb")
            save_database(loaded, path2)
            with open(path, "rb") as a, open(path2, "rb") as b:
                assert a.read() == b.read()

    def test_model_hash_mismatch_rejected(self, small_synthetic, small_finetuned):
        _, encoded, label_space, _, _ = small_synthetic
        _, ft = small_finetuned
        db = build_database(encoded["train"][:10], ft.params, label_space)
        other = tiny_params(seed=123)
        with pytest.raises(DatabaseError, match="different model"):
            check_compatible(db, other)
        check_compatible(db, ft.params)  # no raise

    def test_float32_storage(self, small_synthetic, small_finetuned):
        _, encoded, label_space, _, _ = small_synthetic
        _, ft = small_finetuned
        db = build_database(
            encoded["train"][:10], ft.params, label_space, dtype=np.float32
        )
        assert db.vectors.dtype == np.float32
        res = retrieve(db.vectors[0].astype(np.float64), int(db.labels[0]), db)
        assert res.exemplars[res.i_star].distance == pytest.approx(0.0, abs=1e-6)
