from hypothesis import given
from hypothesis import strategies as st

from tabtextqa.context import Segment
from tabtextqa.corpus import Cell, Corpus, Passage, Table
from tabtextqa.supervision import (
    SupervisionBag,
    ambiguity_stats,
    enumerate_spans,
    find_answer_rows,
    normalize_answer,
)


def test_normalize_examples():
    assert normalize_answer("The Eagles!") == "eagles"
    assert normalize_answer("2018") == "2018"
    assert normalize_answer("  Boston   College ") == "boston college"


@given(st.text(max_size=40))
def test_normalize_idempotent(s):
    assert normalize_answer(normalize_answer(s)) == normalize_answer(s)


def test_enumerate_spans_examples():
    assert enumerate_spans(["2018", "x", "y", "2018"], "2018") == [(0, 0), (3, 3)]
    assert enumerate_spans(["new", "york", "jets"], "new york") == [(0, 1)]
    assert enumerate_spans(["york", "new"], "new york") == []


def _bag_corpus():
    ps = [Passage("P1", "", "In 2018 they won, and 2018 again."), Passage("P2", "", "nothing")]
    rows = (
        (Cell("a", ("P1",)), Cell("b", ())),
        (Cell("c", ("P2",)), Cell("d", ())),
        (Cell("e", ()), Cell("f", ())),
        (Cell("2018", ()), Cell("g", ())),
    )
    t = Table("T", "", ("h1", "h2"), rows)
    return Corpus({"T": t}, {p.id: p for p in ps}), t


def test_find_answer_rows_example():
    corpus, t = _bag_corpus()
    bag = find_answer_rows(t, corpus, "2018", "q")
    assert bag.positive_rows == {0, 3}
    assert len(bag.spans_per_row[0]) == 2
    assert len(bag.spans_per_row[3]) == 1
    assert bag.spans_per_row[3][0].source == Segment("cell", 0)
    assert all(s.surface == "2018" for s in bag.spans_per_row[0])


def test_find_answer_rows_absent():
    corpus, t = _bag_corpus()
    assert find_answer_rows(t, corpus, "1999").is_empty


def test_bag_round_trip():
    corpus, t = _bag_corpus()
    bag = find_answer_rows(t, corpus, "2018", "q")
    assert SupervisionBag.from_dict(bag.to_dict()) == bag


def test_ambiguity_histogram():
    bags = []
    for i, rows in enumerate([[0], [1], [0, 2]]):
        b = SupervisionBag(f"q{i}", "T")
        corpus, t = _bag_corpus()
        for r in rows:
            b.spans_per_row[r] = find_answer_rows(t, corpus, "2018").spans_per_row[0][:1]
        bags.append(b)
    hist = ambiguity_stats(bags)
    assert round(hist.percentages[1], 1) == 66.7
    assert round(hist.percentages[2], 1) == 33.3
    assert hist.multi_row_fraction == 1 / 3
