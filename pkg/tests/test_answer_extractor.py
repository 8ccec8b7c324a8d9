import math

import numpy as np
import pytest

from tabtextqa import answer_extractor as ae
from tabtextqa.answer_extractor import (
    TOKEN_FEATURES,
    ExtractionInstance,
    ExtractorTrainConfig,
    SpanScorerModel,
    answerable_mask,
    best_gold_span,
    build_extraction_instances,
    candidate_spans,
    multi_span_training,
    score_spans,
    select_feedback_row,
    span_loss_and_grad,
    token_features,
)
from tabtextqa.context import Segment, TokenSequence
from tabtextqa.supervision import SupervisionBag, find_answer_rows


def _cell_context(text):
    seq = TokenSequence()
    seq.add_text("h", Segment("header", 0))
    seq.add("is")
    seq.add_text(text, Segment("cell", 0))
    seq.add(".")
    return seq


def test_single_token_context():
    seq = TokenSequence()
    seq.add_text("eagles", Segment("passage", "P"))
    assert candidate_spans(seq).tolist() == [[0, 0]]
    spans = score_spans("who", seq, SpanScorerModel(), k=5)
    assert [(s.start, s.end) for s in spans] == [(0, 0)]


def test_candidate_exhaustion():
    seq = TokenSequence()
    seq.add_text("alpha beta gamma", Segment("passage", "P"))
    assert len(score_spans("q", seq, SpanScorerModel(), k=5, max_len=1)) == 3


def test_peaked_model_ranks_gold_first():
    seq = _cell_context("alpha beta 1995 gamma")
    m = SpanScorerModel()
    i = TOKEN_FEATURES.index("numeric")
    m.start_weights[i] = m.end_weights[i] = 5.0
    top = score_spans("when", seq, m, k=3)[0]
    assert (top.start, top.end) == (4, 4)
    assert top.surface == "1995" and top.provenance == Segment("cell", 0)


def test_spans_never_cross_segments():
    seq = _cell_context("one two")
    seq.add_text("three four", Segment("passage", "P"))
    for a, b in candidate_spans(seq):
        seq.provenance(a, b)


def test_uniform_model_loss_is_log_n():
    seq = TokenSequence()
    seq.add_text("a b c d e f", Segment("passage", "P"))
    F = token_features("q", seq)
    loss, _ = span_loss_and_grad(F, answerable_mask(seq), SpanScorerModel(), (1, 2))
    assert loss == pytest.approx(2 * math.log(6))


def test_peaked_model_loss_near_zero():
    seq = _cell_context("alpha 1995")
    m = SpanScorerModel()
    i = TOKEN_FEATURES.index("numeric")
    m.start_weights[i] = m.end_weights[i] = 40.0
    loss, _ = span_loss_and_grad(token_features("q", seq), answerable_mask(seq), m, (3, 3))
    assert loss < 1e-6


def test_span_gradient_finite_difference():
    rng = np.random.default_rng(1)
    seq = _cell_context("one two 33 four")
    seq.add_text("five six seven eight", Segment("passage", "P"))
    F = token_features("two five", seq)
    mask = answerable_mask(seq)
    n = len(TOKEN_FEATURES)
    m = SpanScorerModel(rng.normal(size=n), rng.normal(size=n), 0.2, -0.1)

    def loss_at(sw, ew, sb, eb):
        return span_loss_and_grad(F, mask, SpanScorerModel(sw, ew, sb, eb), (3, 4))[0]

    _, (g_st, g_en, gb_st, gb_en) = span_loss_and_grad(F, mask, m, (3, 4))
    h = 1e-6
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        num = (loss_at(m.start_weights + e, m.end_weights, 0.2, -0.1) - loss_at(m.start_weights - e, m.end_weights, 0.2, -0.1)) / (2 * h)
        assert g_st[j] == pytest.approx(num, rel=1e-4, abs=1e-7)
        num = (loss_at(m.start_weights, m.end_weights + e, 0.2, -0.1) - loss_at(m.start_weights, m.end_weights - e, 0.2, -0.1)) / (2 * h)
        assert g_en[j] == pytest.approx(num, rel=1e-4, abs=1e-7)
    num = (loss_at(m.start_weights, m.end_weights, 0.2 + h, -0.1) - loss_at(m.start_weights, m.end_weights, 0.2 - h, -0.1)) / (2 * h)
    assert gb_st == pytest.approx(num, abs=1e-7)


class _TableModel:
    """Stand-in span scorer returning fixed per-position scores."""

    def __init__(self, s_st, s_en):
        self.s_st, self.s_en = np.asarray(s_st, float), np.asarray(s_en, float)

    def token_scores(self, F):
        return self.s_st, self.s_en


def test_three_occurrence_denoising():
    # "eagles" at positions 1, 4 and 7; context around the second supports it
    seq = TokenSequence()
    seq.add_text("the eagles won then eagles beat rivals eagles fans", Segment("passage", "P"))
    inst = ExtractionInstance("q", "T", 0, "who won", seq, [(1, 1), (4, 4), (7, 7)])
    s = np.zeros(len(seq))
    s[[1, 4, 7]] = [-3.0, 7.0, -2.0]
    model = _TableModel(s, s)
    lp = s - np.log(np.exp(s).sum())
    losses = [-2 * lp[i] for i in (1, 4, 7)]
    assert losses[1] < 0.1 < losses[2] < losses[0]
    assert best_gold_span(inst, model) == (4, 4)


def test_single_span_instances_pass_through(small_bench):
    b = small_bench
    bags = {q.id: find_answer_rows(b.corpus.table(q.table_id), b.corpus, q.answer_text, q.id) for q in b.questions}
    D = build_extraction_instances(b.split("train"), bags, b.corpus, feedback=False)
    res = multi_span_training(D, ExtractorTrainConfig(epochs=2))
    singles = [d for d in D if len(d.gold_spans) == 1]
    assert [d.gold_spans for d in res.single] == [d.gold_spans for d in singles]
    multi = [d for d in D if len(d.gold_spans) > 1]
    assert len(res.denoised) == len(multi)
    for d, orig in zip(res.denoised, multi):
        assert d.gold_spans[0] in orig.gold_spans and len(d.gold_spans) == 1
    first = multi_span_training(D, ExtractorTrainConfig(epochs=2), mode="first")
    assert [d.gold_spans[0] for d in first.denoised] == [d.gold_spans[0] for d in multi]


def test_mst_needs_single_span_instances():
    seq = TokenSequence()
    seq.add_text("x y x", Segment("passage", "P"))
    with pytest.raises(ValueError, match="single-span"):
        multi_span_training([ExtractionInstance("q", "T", 0, "q", seq, [(0, 0), (2, 2)])])


def _bag(rows):
    from tabtextqa.supervision import SpanRef

    bag = SupervisionBag("q1", "T1")
    for r in rows:
        bag.spans_per_row[r] = [SpanRef(Segment("cell", 1), 0, 0, "x")]
    return bag


def test_feedback_row_argmax(monkeypatch, draft_corpus, draft_question):
    monkeypatch.setattr(ae, "linearize_rows", lambda *a, **k: {})
    monkeypatch.setattr(ae, "score_rows", lambda lin, m: {0: 0.1, 2: 0.3, 5: 0.8})
    t = draft_corpus.table("T1")
    assert select_feedback_row(_bag([2, 5]), None, draft_question, t, draft_corpus) == 5
    monkeypatch.setattr(ae, "score_rows", lambda lin, m: {2: 0.3, 5: 0.3})
    assert select_feedback_row(_bag([2, 5]), None, draft_question, t, draft_corpus) == 2
    assert select_feedback_row(_bag([2]), None, draft_question, t, draft_corpus) == 2


def test_feedback_off_one_instance_per_row(draft_corpus):
    from tabtextqa.corpus import Question

    q = Question("q1", "where", "Boston", "T1")
    bag = find_answer_rows(draft_corpus.table("T1"), draft_corpus, "Boston", "q1")
    assert bag.positive_rows == {1, 2}
    D = build_extraction_instances([q], {"q1": bag}, draft_corpus, feedback=False)
    assert [d.row for d in D] == [1, 2]
    with pytest.raises(ValueError):
        build_extraction_instances([q], {"q1": bag}, draft_corpus, feedback=True)


def test_checkpoint_round_trip(tmp_path):
    n = len(TOKEN_FEATURES)
    m = SpanScorerModel(np.arange(n, dtype=float), -np.arange(n, dtype=float), 0.5, -0.5, {"k": 1})
    m.save(tmp_path / "ae.json")
    m2 = SpanScorerModel.load(tmp_path / "ae.json")
    assert m2.to_dict() == m.to_dict()
