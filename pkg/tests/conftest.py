import pytest

from tabtextqa.corpus import Cell, Corpus, Passage, Question, Table
from tabtextqa.synthbench import SynthConfig, generate


def make_corpus(tables, passages):
    return Corpus({t.id: t for t in tables}, {p.id: p for p in passages})


@pytest.fixture
def draft_corpus():
    """Two-column draft table; row 1 links a college passage."""
    passages = [
        Passage("P1", "Boston College", "Boston College is a private research university in Chestnut Hill."),
        Passage("P2", "Philadelphia Eagles", "The Eagles won the 2018 title and again in 2018 playoffs."),
        Passage("P3", "Stanford", "Stanford University is in California."),
    ]
    t = Table(
        "T1",
        "2012 NFL Draft",
        ("Pick", "College"),
        (
            (Cell("1", ()), Cell("Stanford", ("P3",))),
            (Cell("2", ()), Cell("Boston College", ("P1", "P2"))),
            (Cell("3", ()), Cell("Boston", ())),
        ),
    )
    return make_corpus([t], passages)


@pytest.fixture
def draft_question():
    return Question("q1", "which pick went to boston college", "Boston College", "T1")


@pytest.fixture(scope="session")
def tiny_bench():
    return generate(SynthConfig(seed=3, n_tables=60))


@pytest.fixture(scope="session")
def small_bench():
    return generate(SynthConfig(seed=0, n_tables=200))


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
