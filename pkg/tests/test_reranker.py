import pytest
from hypothesis import given
from hypothesis import strategies as st

from rerank_fold import TABLE, TARGET, StubSource, candidate, unique_best_fold
from tabtextqa.corpus import Question
from tabtextqa.reranker import (
    RerankWeights,
    answer_question,
    best_candidate,
    combine_score,
    grid_search,
    simplex_grid,
    tune_weights,
)


def test_combine_score_examples():
    assert combine_score((1, 0, 0), 0.7, 5, 9) == 0.7
    assert combine_score((0.5, 0.3, 0.2), 1, 2, 3) == pytest.approx(1.7)


@given(
    st.lists(st.tuples(*[st.floats(-10, 10, allow_nan=False)] * 3), min_size=1, max_size=6),
    st.floats(0.01, 100),
    st.sampled_from(simplex_grid(0.1)),
)
def test_scaling_keeps_argmax(vectors, c, w):
    cands = [candidate(i, *v, str(i)) for i, v in enumerate(vectors)]
    scaled = [candidate(i, *(c * x for x in v), str(i)) for i, v in enumerate(vectors)]
    a, b = best_candidate(cands, w), best_candidate(scaled, w)
    sa = combine_score(w, *a.vector())
    # the scaled argmax is optimal (up to rounding) for the unscaled scores too
    assert combine_score(w, *cands[b.row].vector()) == pytest.approx(sa, rel=1e-9, abs=1e-9)


def test_grid_size_and_order():
    grid = simplex_grid(0.1)
    assert len(grid) == 66
    assert grid == sorted(grid)
    assert all(abs(sum(w) - 1) < 1e-12 for w in grid)
    with pytest.raises(ValueError):
        simplex_grid(0.3)


def test_single_vector_grid():
    dev, src = unique_best_fold()
    w = tune_weights(dev, src, grid=[(0.2, 0.2, 0.6)])
    assert w.w == (0.2, 0.2, 0.6)


def test_row_weight_above_half():
    # the correct answer wins only when the row-score weight exceeds 0.5
    cands, dev = {}, []
    for i in range(4):
        qid = f"q{i}"
        cands[qid] = [candidate(0, 0.0, 1.0, 1.0, "wrong"), candidate(1, 1.0 + i, -i * 0.0, 0.0, "right")]
        dev.append((Question(qid, "q", "right", "T"), TABLE, "right"))
    w = tune_weights(dev, StubSource(cands))
    assert w.w[0] > 0.5
    for g in simplex_grid(0.1):
        em = sum(best_candidate(c, g).span.surface == "right" for c in cands.values())
        assert (em == 4) == (g[0] > 0.5)


def test_unique_best_vector():
    dev, src = unique_best_fold()
    w = tune_weights(dev, src)
    assert w.w == pytest.approx(TARGET)
    assert w.dev_em == 1.0


def test_tie_break_lexicographic():
    cands = {"a": [candidate(0, 1, 1, 1, "x")]}
    dev = [(Question("a", "q", "x", "T"), TABLE, "x")]
    w = tune_weights(dev, StubSource(cands))
    assert w.w == (0.0, 0.0, 1.0)


def test_row_tie_flipped_by_span_scores():
    # two rows tie on row score; only the span scores separate them
    cands = {"q": [candidate(0, 0.8, 0.5, 0.4, "Philadelphia"), candidate(1, 0.8, 2.5, 2.0, "Eagles")]}
    q = Question("q", "which team", "Eagles", "T")
    src = StubSource(cands)
    plain = answer_question(q, _one_row(), src, RerankWeights((1.0, 0.0, 0.0), 1, 1))
    assert plain.answer == "Philadelphia"
    w = tune_weights([(q, _one_row(), "Eagles")], src)
    assert answer_question(q, _one_row(), src, w).answer == "Eagles"


def _one_row():
    from tabtextqa.corpus import Cell, Table

    return Table("T", "", ("h",), ((Cell("x", ()),),))


def test_weights_round_trip(tmp_path):
    w = RerankWeights((0.6, 0.3, 0.1), 5, 5, 0.5, 0.6, {"grid_size": 66})
    w.save(tmp_path / "w.json")
    assert RerankWeights.load(tmp_path / "w.json") == w
    with pytest.raises(ValueError):
        RerankWeights((0.5, 0.6, 0.0))
    with pytest.raises(ValueError):
        RerankWeights((1.0, 0.0, 0.0), k=0)


def test_empty_dev_rejected():
    with pytest.raises(ValueError):
        tune_weights([], StubSource({}))
    with pytest.raises(ValueError):
        grid_search([], [], [])
