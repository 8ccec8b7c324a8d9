"""Answer metrics (EM, token F1), provenance breakdown, row accuracy, HITS@K."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .corpus import Question
from .supervision import normalize_answer


def exact_match(pred: str, gold: str) -> int:
    return int(normalize_answer(pred) == normalize_answer(gold))


def f1_token(pred: str, gold: str) -> float:
    p = normalize_answer(pred).split()
    g = normalize_answer(gold).split()
    if not p and not g:
        return 1.0
    if not p or not g:
        return 0.0
    common = sum((Counter(p) & Counter(g)).values())
    if common == 0:
        return 0.0
    precision = common / len(p)
    recall = common / len(g)
    return 2 * precision * recall / (precision + recall)


def hits_at_k(ranked: Sequence[Sequence[str]], gold: Sequence[str], k: int) -> float:
    """Fraction of queries whose gold id appears in the first ``k`` results."""
    if not gold:
        return 0.0
    return sum(g in list(r)[:k] for r, g in zip(ranked, gold)) / len(gold)


@dataclass
class Bucket:
    n: int = 0
    em: float = 0.0
    f1: float = 0.0

    def add(self, em: float, f1: float) -> None:
        self.n += 1
        self.em += em
        self.f1 += f1

    def summary(self) -> dict | None:
        if not self.n:
            return None
        return {"n": self.n, "em": round(100 * self.em / self.n, 4), "f1": round(100 * self.f1 / self.n, 4)}


@dataclass
class Report:
    total: dict
    table: dict | None
    passage: dict | None
    row_accuracy: float | None = None
    hits: dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "table": self.table,
            "passage": self.passage,
            "row_accuracy": self.row_accuracy,
            "hits": {str(k): v for k, v in sorted(self.hits.items())},
        }

    def render(self) -> str:
        def cell(b, key):
            return f"{b[key]:6.1f}" if b else f"{'-':>6}"

        lines = [
            f"{'':8}{'Table':^14}{'Passage':^14}{'Total':^14}",
            f"{'':8}" + f"{'EM':>6} {'F1':>6} " * 3,
            f"{'':8}"
            + " ".join(f"{cell(b, 'em')} {cell(b, 'f1')}" for b in (self.table, self.passage, self.total)),
        ]
        if self.row_accuracy is not None:
            lines.append(f"row accuracy: {100 * self.row_accuracy:.1f}%")
        for k, v in sorted(self.hits.items()):
            lines.append(f"HITS@{k}: {100 * v:.1f}%")
        return "\n".join(lines)


def evaluate(
    predictions: Iterable,
    gold: Sequence[Question],
    positive_rows: Mapping[str, set[int]] | None = None,
    hits: Mapping[int, float] | None = None,
) -> Report:
    """Score predictions against gold answers.

    ``predictions`` are objects with ``question_id``, ``answer``, ``provenance``
    and ``row`` attributes. Questions without a prediction score zero and
    count toward the total only.
    """
    by_id = {}
    for p in predictions:
        if p.question_id in by_id:
            raise ValueError(f"duplicate prediction for question {p.question_id}")
        by_id[p.question_id] = p
    total, table, passage = Bucket(), Bucket(), Bucket()
    rows_hit = rows_n = 0
    for q in gold:
        p = by_id.get(q.id)
        answer = q.answer_text or ""
        if p is None:
            total.add(0.0, 0.0)
            continue
        em, f1 = exact_match(p.answer, answer), f1_token(p.answer, answer)
        total.add(em, f1)
        if p.provenance == "cell":
            table.add(em, f1)
        elif p.provenance == "passage":
            passage.add(em, f1)
        if positive_rows is not None and q.id in positive_rows:
            rows_n += 1
            rows_hit += p.row in positive_rows[q.id]
    return Report(
        total.summary() or {"n": 0, "em": 0.0, "f1": 0.0},
        table.summary(),
        passage.summary(),
        rows_hit / rows_n if rows_n else None,
        dict(hits or {}),
    )
