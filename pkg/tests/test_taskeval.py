import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import accuracy_score, precision_recall_fscore_support

from advmask import corpus, mlm, taskeval

V = 16


def tiny_model(seed=0):
    cfg = mlm.MlmConfig(vocab_size=V, hidden_size=16, num_layers=1, num_heads=2, ffn_size=32, max_seq_len=16,
                        dropout=0.0)
    return mlm.MaskedLM(cfg, np.random.default_rng(seed))


def separable_corpus(rng, size=64):
    # ids 4..9 are always O, ids 10..12 begin a span, ids 13..15 continue one
    out = []
    for _ in range(size):
        ids, labels = [], []
        for _ in range(int(rng.integers(3, 8))):
            if rng.random() < 0.3:
                ids += [int(rng.integers(10, 13)), int(rng.integers(13, 16))]
                labels += ["B", "I"]
            else:
                ids.append(int(rng.integers(4, 10)))
                labels.append("O")
        out.append(corpus.TokenSequence(tuple(f"w{i}" for i in ids), tuple(ids), None, tuple(labels)))
    return out


def sk_report(gold, pred):
    p, r, f, _ = precision_recall_fscore_support(gold, pred, labels=list(taskeval.POSITIVE), average="micro",
                                                 zero_division=0)
    return 100 * p, 100 * r, 100 * f


def test_perfect_predictions():
    gold = [np.array([0, 1, 2, 0]), np.array([1, 0])]
    rep = taskeval.score(gold, gold)
    assert rep.precision == rep.recall == rep.f1 == 100.0
    assert rep.accuracy == 100.0


def test_all_o_has_zero_recall():
    gold = [np.array([0, 1, 2, 0])]
    rep = taskeval.score(gold, [np.zeros(4, int)])
    assert rep.recall == 0.0 and rep.f1 == 0.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2), st.booleans()), min_size=1, max_size=60))
def test_scores_match_sklearn(rows):
    gold = np.array([r[0] for r in rows])
    pred = np.array([r[1] for r in rows])
    oov = np.array([r[2] for r in rows])
    rep = taskeval.score([gold], [pred], [oov])
    p, r, f = sk_report(gold, pred)
    assert rep.precision == pytest.approx(p, abs=1e-9)
    assert rep.recall == pytest.approx(r, abs=1e-9)
    assert rep.f1 == pytest.approx(f, abs=1e-9)
    assert rep.accuracy == pytest.approx(100 * accuracy_score(gold, pred), abs=1e-9)
    assert rep.n_oov + rep.n_non_oov == rep.n_tokens
    weighted = (rep.oov_accuracy * rep.n_oov + rep.non_oov_accuracy * rep.n_non_oov) / rep.n_tokens
    assert weighted == pytest.approx(rep.accuracy, abs=1e-9)
    for lab in taskeval.POSITIVE:
        tp, tr, tf, _ = precision_recall_fscore_support(gold, pred, labels=[lab], average="micro", zero_division=0)
        per = rep.per_tag[taskeval.LABELS[lab]]
        assert per["f1"] == pytest.approx(100 * tf, abs=1e-9)
    assert 0 <= rep.f1 <= 100
    if rep.precision > 0 and rep.recall > 0:
        assert min(rep.precision, rep.recall) - 1e-9 <= rep.f1 <= max(rep.precision, rep.recall) + 1e-9


def test_predictions_file_rescoring_matches(tmp_path):
    rng = np.random.default_rng(0)
    data = separable_corpus(rng, 20)
    model, head = tiny_model(), taskeval.TaggerHead(16, np.random.default_rng(1))
    source_vocab = {"w4", "w5", "w10", "w13"}
    rep = taskeval.evaluate(model, head, data, source_vocab, tmp_path / "pred.txt")
    again = taskeval.score_predictions_file(tmp_path / "pred.txt", source_vocab)
    assert rep == again
    # an independent parse of the file, scored with sklearn
    gold, pred = [], []
    for line in (tmp_path / "pred.txt").read_text().splitlines():
        if line:
            _, g, p = line.split()
            gold.append("OBI".index(g))
            pred.append("OBI".index(p))
    assert rep.f1 == pytest.approx(sk_report(gold, pred)[2], abs=1e-9)


def test_gold_as_predictions_file(tmp_path):
    data = separable_corpus(np.random.default_rng(2), 10)
    taskeval.write_predictions(tmp_path / "p.txt", data, [taskeval.label_ids(s) for s in data])
    assert taskeval.score_predictions_file(tmp_path / "p.txt", set()).f1 == 100.0


def test_bad_predictions_line(tmp_path):
    (tmp_path / "p.txt").write_text("tok O\n")
    with pytest.raises(ValueError, match=":1:"):
        taskeval.read_predictions(tmp_path / "p.txt")


def test_finetune_learns_separable_labels():
    rng = np.random.default_rng(0)
    data = separable_corpus(rng, 96)
    model, head = tiny_model(), taskeval.TaggerHead(16, np.random.default_rng(1))
    taskeval.finetune_task(model, head, data, rng, epochs=30, batch_size=16, lr=3e-3)
    rep = taskeval.evaluate(model, head, data, set())
    assert rep.accuracy > 99.0


def test_head_only_keeps_encoder_fixed():
    rng = np.random.default_rng(0)
    data = separable_corpus(rng, 32)
    model, head = tiny_model(), taskeval.TaggerHead(16, np.random.default_rng(1))
    before = {k: v.data.copy() for k, v in model.named_parameters()}
    head_before = head.proj.weight.data.copy()
    taskeval.finetune_task(model, head, data, rng, epochs=2, batch_size=8, lr=1e-2, full_model=False)
    for k, v in model.named_parameters():
        np.testing.assert_array_equal(v.data, before[k])
    assert np.any(head.proj.weight.data != head_before)


def test_zero_epochs_leaves_head():
    rng = np.random.default_rng(0)
    head = taskeval.TaggerHead(16, np.random.default_rng(1))
    w = head.proj.weight.data.copy()
    assert taskeval.finetune_task(tiny_model(), head, separable_corpus(rng, 8), rng, epochs=0) == []
    np.testing.assert_array_equal(head.proj.weight.data, w)


def test_missing_labels_rejected():
    s = corpus.TokenSequence(("a",), (4,))
    with pytest.raises(taskeval.MissingLabelsError):
        taskeval.finetune_task(tiny_model(), taskeval.TaggerHead(16, np.random.default_rng(0)), [s],
                               np.random.default_rng(0))


def test_evaluation_is_deterministic():
    data = separable_corpus(np.random.default_rng(3), 12)
    model, head = tiny_model(), taskeval.TaggerHead(16, np.random.default_rng(1))
    assert taskeval.evaluate(model, head, data, set()) == taskeval.evaluate(model, head, data, set())


def test_report_json_and_table():
    rep = taskeval.score([np.array([0, 1, 2])], [np.array([0, 1, 0])], [np.array([True, False, False])])
    assert '"f1"' in rep.to_json()
    assert "oov_accuracy" in rep.table()
    assert rep.n_oov == 1 and rep.oov_accuracy == 100.0
