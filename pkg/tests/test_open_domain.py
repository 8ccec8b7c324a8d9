import math
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tabtextqa.corpus import Cell, Corpus, Passage, Table
from tabtextqa.metrics import hits_at_k
from tabtextqa.open_domain import (
    BM25Index,
    build_passage_index,
    build_table_index,
    hard_negative_mining,
    link_row_passages,
    link_table,
    retrieve_tables,
    row_links,
)


def _bm25_oracle(query, docs, k1=1.2, b=0.75):
    # direct evaluation of the Okapi formula with Lucene idf
    n = len(docs)
    avg = sum(len(d) for d in docs) / n
    out = []
    for d in docs:
        tf = Counter(d)
        s = 0.0
        for term in query:
            df = sum(term in x for x in docs)
            if not tf[term]:
                continue
            idf = math.log(1 + (n - df + 0.5) / (df + 0.5))
            s += idf * tf[term] * (k1 + 1) / (tf[term] + k1 * (1 - b + b * len(d) / avg))
        out.append(s)
    return out


words = st.sampled_from("alpha beta gamma delta eps zeta".split())


@settings(max_examples=60)
@given(st.lists(st.lists(words, min_size=1, max_size=8), min_size=1, max_size=6), st.lists(words, min_size=1, max_size=4))
def test_bm25_matches_oracle(docs, query):
    index = BM25Index.build((str(i), d) for i, d in enumerate(docs))
    got = index.scores(query)
    want = _bm25_oracle(query, docs)
    for i, w in enumerate(want):
        assert got.get(i, 0.0) == pytest.approx(w, abs=1e-12)
        assert w >= 0


def _tables():
    return [
        Table("T1", "nfl draft 2012", ("pick", "college"), ((Cell("1", ()), Cell("stanford", ())),)),
        Table("T2", "olympic medals", ("country", "gold"), ((Cell("norway", ()), Cell("16", ())),)),
    ]


def test_table_index_basics(tmp_path):
    assert build_table_index(Corpus({}, {})).n_docs == 0
    corpus = Corpus({t.id: t for t in _tables()}, {})
    index = build_table_index(corpus)
    assert index.n_docs == 2
    assert build_table_index(corpus).to_dict() == index.to_dict()
    index.save(tmp_path / "i.json")
    assert BM25Index.load(tmp_path / "i.json").to_dict() == index.to_dict()


def test_retrieve_tables():
    index = build_table_index(Corpus({t.id: t for t in _tables()}, {}))
    assert retrieve_tables("which college in the nfl draft", index, 1)[0][0] == "T1"
    assert [t for t, _ in retrieve_tables("zzz", index, 10)] == ["T1", "T2"]


def test_hits_monotone_on_synthbench(small_bench):
    index = build_table_index(small_bench.corpus)
    qs = small_bench.questions
    ranked = [[t for t, _ in retrieve_tables(q.text, index, 10)] for q in qs]
    gold = [q.table_id for q in qs]
    h = [hits_at_k(ranked, gold, k) for k in (1, 5, 10)]
    assert h[0] <= h[1] <= h[2]


def _passages():
    return [
        Passage("P1", "Boston College", "Boston College is a university."),
        Passage("P2", "Boston", "Boston is a city."),
        Passage("P3", "College football", "College football is played by college teams."),
        Passage("P4", "Norway", "A country."),
    ]


def test_link_by_title():
    pindex = build_passage_index(_passages())
    t = Table("T", "", ("c", "d"), ((Cell("Boston College", ()), Cell("Boston", ())),))
    per_cell = link_row_passages(t, 0, pindex, n=10)
    assert per_cell[0][0] == "P1"
    assert all(len(x) <= 4 for x in per_cell)
    union = row_links(per_cell)
    assert len(union) == len(set(union))
    assert union[: len(per_cell[0])] == per_cell[0]
    linked = link_table(t, pindex, n=2)
    assert [c.links for c in linked.rows[0]] == [tuple(x[:2]) for x in link_row_passages(t, 0, pindex, 2)]


def test_hard_negative_mining():
    ts = _tables()
    index = build_table_index(Corpus({t.id: t for t in ts}, {}))
    assert hard_negative_mining("nfl draft", "T1", index) == "T2"
    assert hard_negative_mining("nfl draft", "TX", index, top_m=2, rng=7) == hard_negative_mining(
        "nfl draft", "TX", index, top_m=2, rng=7
    )
    solo = build_table_index(Corpus({"T1": ts[0]}, {}))
    with pytest.raises(ValueError):
        hard_negative_mining("nfl", "T1", solo)
