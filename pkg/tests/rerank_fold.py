"""Constructed dev folds with stub candidate sources for reranker tests."""

from tabtextqa.answer_extractor import ScoredSpan
from tabtextqa.context import Segment
from tabtextqa.corpus import Question, Table
from tabtextqa.reranker import Candidate

TABLE = Table("T", "", ("h",), ())


def candidate(row, s, s_st, s_en, surface):
    return Candidate(row, s, ScoredSpan(row, 0, 0, surface, Segment("cell", 0), s_st, s_en))


class StubSource:
    """Serves a fixed candidate list per question id."""

    def __init__(self, cands):
        self.cands = cands
        self.calls = []

    def candidates(self, q, t, k, k_spans):
        self.calls.append((k, k_spans))
        return list(self.cands[q.id])


# Each constraint is a direction d such that the right candidate beats the
# wrong one (listed first, so it wins ties) iff w . d > 0.
CONSTRAINTS = {
    "w0>0.55": (0.45, -0.55, -0.55),
    "w0<0.65": (-0.35, 0.65, 0.65),
    "w1>0.25": (-0.25, 0.75, -0.25),
    "w1<0.35": (0.35, -0.65, 0.35),
}
TARGET = (0.6, 0.3, 0.1)


def unique_best_fold():
    """20 questions; only (0.6, 0.3, 0.1) answers every one correctly on the 0.1 grid."""
    dev, cands = [], {}
    base = (0.4, 0.5, 0.6)
    for name, d in CONSTRAINTS.items():
        for i in range(5):
            qid = f"{name}-{i}"
            c = 0.5 + i  # positive scaling keeps the decision boundary
            right = tuple(b + c * x for b, x in zip(base, d))
            gold = f"right {qid}"
            cands[qid] = [candidate(0, *base, f"wrong {qid}"), candidate(1, *right, gold)]
            dev.append((Question(qid, "q", gold, "T"), TABLE, gold))
    return dev, StubSource(cands)
