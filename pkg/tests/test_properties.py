"""Cross-cutting invariants checked with generated inputs."""

import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from rerank_fold import TABLE, StubSource, candidate
from tabtextqa.answer_extractor import ExtractorTrainConfig, build_extraction_instances, multi_span_training
from tabtextqa.context import TfidfScorer
from tabtextqa.corpus import Question
from tabtextqa.metrics import evaluate, f1_token
from tabtextqa.open_domain import BM25Index
from tabtextqa.reranker import Prediction, simplex_grid, tune_weights
from tabtextqa.row_retriever import RowTrainConfig, build_row_instances, mil_loss, naive_loss, train_row_retriever
from tabtextqa.supervision import find_answer_rows

probs = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)


@given(st.lists(probs, min_size=1, max_size=8), st.data())
def test_mil_bounded_by_naive_and_permutation_invariant(ps, data):
    rows = dict(enumerate(ps))
    positives = set(data.draw(st.lists(st.sampled_from(sorted(rows)), min_size=1, unique=True)))
    assert mil_loss(rows, positives) <= naive_loss(rows, positives) + 1e-12
    perm = list(rows)
    random.Random(data.draw(st.integers(0, 99))).shuffle(perm)
    relabel = {r: perm[i] for i, r in enumerate(rows)}
    shuffled = {relabel[r]: p for r, p in rows.items()}
    assert mil_loss(shuffled, {relabel[r] for r in positives}) == pytest.approx(mil_loss(rows, positives))


@given(st.text(max_size=20), st.text(max_size=20))
def test_f1_symmetric(a, b):
    assert f1_token(a, b) == f1_token(b, a)


def test_buckets_recombine():
    gold = [Question(f"q{i}", "", "x" if i % 3 else "y", "T") for i in range(7)]
    preds = [Prediction(q.id, "T", "x", 0, 0, 0, "cell" if i % 2 else "passage", "0", 0, 0, 0) for i, q in enumerate(gold)]
    rep = evaluate(preds, gold)
    n_t, n_p = rep.table["n"], rep.passage["n"]
    assert rep.total["em"] == pytest.approx((rep.table["em"] * n_t + rep.passage["em"] * n_p) / (n_t + n_p))


@given(st.lists(st.lists(st.sampled_from("abcde"), min_size=1, max_size=6), min_size=1, max_size=5), st.data())
def test_bm25_absent_terms_score_zero(docs, data):
    index = BM25Index.build((str(i), d) for i, d in enumerate(docs))
    d = data.draw(st.integers(0, len(docs) - 1))
    absent = [t for t in "abcdefg" if t not in docs[d]]
    assert index.scores(absent).get(d, 0.0) == 0.0


class _RankedSource(StubSource):
    """Candidates ordered by row rank; K keeps the first K rows."""

    def candidates(self, q, t, k, k_spans):
        return [c for c in self.cands[q.id] if c.row < k]


def test_larger_k_never_hurts_oracle_em():
    # the oracle selector answers correctly whenever any candidate is correct
    rng = random.Random(3)
    cands, dev = {}, []
    for i in range(12):
        qid = f"q{i}"
        cs = [candidate(r, rng.random(), rng.gauss(0, 1), rng.gauss(0, 1), f"a{rng.randint(0, 3)}") for r in range(5)]
        cands[qid] = cs
        dev.append((Question(qid, "q", "a1", "T"), TABLE, "a1"))
    src = _RankedSource(cands)
    ems = []
    for k in range(1, 6):
        ems.append(sum(any(c.span.surface == gold for c in src.candidates(q, t, k, 1)) for q, t, gold in dev))
    assert ems == sorted(ems)
    assert tune_weights(dev, src, k=5).w in [tuple(w) for w in simplex_grid(0.1)]


def test_feedback_sizes_and_final_training_set(small_bench):
    b = small_bench
    bags = {q.id: find_answer_rows(b.corpus.table(q.table_id), b.corpus, q.answer_text, q.id) for q in b.questions}
    scorer = TfidfScorer(b.corpus.passages.values())
    train = b.split("train")
    rr = train_row_retriever(build_row_instances(train, bags, b.corpus, scorer), RowTrainConfig(epochs=2))
    with_rf = build_extraction_instances(train, bags, b.corpus, rr, True, scorer)
    without = build_extraction_instances(train, bags, b.corpus, None, False, scorer)
    assert len({(d.question_id, d.table_id) for d in with_rf}) == len(with_rf)
    assert len(without) >= len(with_rf)
    res = multi_span_training(with_rf, ExtractorTrainConfig(epochs=2))
    single = sum(len(d.gold_spans) == 1 for d in with_rf)
    assert res.model.meta["train_size"] == single + (len(with_rf) - single) == res.train_size
