"""Joint row+span reranking by a grid-searched linear combination of scores."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from .answer_extractor import (
    DEFAULT_MAX_ANSWER_LEN,
    ScoredSpan,
    SpanScorerModel,
    extraction_context,
    score_spans,
)
from .context import DEFAULT_BUDGET, SimilarityScorer
from .corpus import Corpus, Question, Table
from .metrics import exact_match, f1_token
from .row_retriever import RowScorerModel, retrieve_rows

Weights = tuple[float, float, float]


def combine_score(w: Sequence[float], s: float, s_st: float, s_en: float) -> float:
    return w[0] * s + w[1] * s_st + w[2] * s_en


def simplex_grid(step: float = 0.1) -> list[Weights]:
    """All 3-weight vectors on the simplex with the given step, lexicographic order."""
    n = Fraction(1) / Fraction(step).limit_denominator(10_000)
    if n.denominator != 1:
        raise ValueError("grid step must divide 1")
    n = int(n)
    return [
        (i / n, j / n, (n - i - j) / n)
        for i in range(n + 1)
        for j in range(n + 1 - i)
    ]


@dataclass(frozen=True)
class Candidate:
    row: int
    row_score: float
    span: ScoredSpan

    def vector(self) -> tuple[float, float, float]:
        return (self.row_score, self.span.s_st, self.span.s_en)


@dataclass(frozen=True)
class Prediction:
    question_id: str
    table_id: str
    answer: str
    row: int
    start: int
    end: int
    provenance: str  # "cell" or "passage"
    source: str  # column index or passage id, as text
    row_score: float
    s_st: float
    s_en: float

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "table_id": self.table_id,
            "answer": self.answer,
            "row": self.row,
            "start": self.start,
            "end": self.end,
            "provenance": self.provenance,
            "source": self.source,
            "row_score": self.row_score,
            "s_st": self.s_st,
            "s_en": self.s_en,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Prediction":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})


class CandidateSource(Protocol):
    def candidates(self, q: Question, t: Table, k: int, k_spans: int) -> list[Candidate]: ...


@dataclass
class Reader:
    """Row retriever + answer extractor over one corpus, with shared context settings."""

    corpus: Corpus
    rr_model: RowScorerModel
    ae_model: SpanScorerModel
    scorer: SimilarityScorer | None = None
    budget: int = DEFAULT_BUDGET
    max_answer_len: int = DEFAULT_MAX_ANSWER_LEN

    def retrieve(self, q: Question, t: Table, k: int) -> list[tuple[int, float]]:
        return retrieve_rows(q, t, self.rr_model, k, self.corpus, self.scorer, self.budget)

    def spans(self, q: Question, t: Table, r: int, k_spans: int) -> list[ScoredSpan]:
        ctx = extraction_context(q, t, r, self.corpus, self.scorer, self.budget)
        return score_spans(q.text, ctx, self.ae_model, k_spans, row=r, max_len=self.max_answer_len)

    def candidates(self, q: Question, t: Table, k: int, k_spans: int) -> list[Candidate]:
        out = []
        for r, s in self.retrieve(q, t, k):
            out.extend(Candidate(r, s, span) for span in self.spans(q, t, r, k_spans))
        return out


def best_candidate(cands: Sequence[Candidate], w: Sequence[float]) -> Candidate | None:
    """Argmax of the combined score; earlier candidates win ties."""
    best, best_score = None, None
    for c in cands:
        sc = combine_score(w, *c.vector())
        if best_score is None or sc > best_score:
            best, best_score = c, sc
    return best


def _prediction(q: Question, t: Table, c: Candidate | None) -> Prediction:
    if c is None:
        return Prediction(q.id, t.id, "", -1, -1, -1, "none", "", 0.0, 0.0, 0.0)
    sp = c.span
    return Prediction(
        q.id,
        t.id,
        sp.surface,
        c.row,
        sp.start,
        sp.end,
        sp.provenance.kind,
        str(sp.provenance.key),
        c.row_score,
        sp.s_st,
        sp.s_en,
    )


@dataclass
class RerankWeights:
    w: Weights = (1.0, 0.0, 0.0)
    k: int = 5
    k_spans: int = 5
    dev_em: float | None = None
    dev_f1: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.k < 1 or self.k_spans < 1:
            raise ValueError("K and K' must be at least 1")
        if any(x < 0 for x in self.w) or abs(sum(self.w) - 1.0) > 1e-9:
            raise ValueError("weights must be non-negative and sum to 1")

    def to_dict(self) -> dict:
        return {
            "format": "tabtextqa.rerank-weights",
            "version": 1,
            "w": list(self.w),
            "k": self.k,
            "k_spans": self.k_spans,
            "dev_em": self.dev_em,
            "dev_f1": self.dev_f1,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RerankWeights":
        return cls(tuple(d["w"]), d["k"], d["k_spans"], d.get("dev_em"), d.get("dev_f1"), d.get("meta", {}))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "RerankWeights":
        return cls.from_dict(json.loads(Path(path).read_text()))


def grid_search(
    candidate_sets: Sequence[Sequence[Candidate]],
    answers: Sequence[str],
    grid: Iterable[Sequence[float]],
) -> tuple[Weights, float, float]:
    """Pick the weight vector maximizing dev EM, then F1, then lexicographically smallest."""
    best_key, best = None, None
    for w in grid:
        w = tuple(w)
        em = f1 = 0.0
        for cands, gold in zip(candidate_sets, answers):
            c = best_candidate(cands, w)
            pred = c.span.surface if c else ""
            em += exact_match(pred, gold)
            f1 += f1_token(pred, gold)
        n = max(len(answers), 1)
        key = (em / n, f1 / n, tuple(-x for x in w))
        if best_key is None or key > best_key:
            best_key, best = key, w
    if best is None:
        raise ValueError("empty weight grid")
    return best, best_key[0], best_key[1]


def tune_weights(
    dev: Sequence[tuple[Question, Table, str]],
    reader: CandidateSource,
    grid: Iterable[Sequence[float]] | None = None,
    k: int = 5,
    k_spans: int = 5,
) -> RerankWeights:
    if not dev:
        raise ValueError("empty development fold")
    grid = list(grid) if grid is not None else simplex_grid(0.1)
    candidate_sets = [reader.candidates(q, t, k, k_spans) for q, t, _ in dev]
    w, em, f1 = grid_search(candidate_sets, [a for _, _, a in dev], grid)
    return RerankWeights(w, k, k_spans, em, f1, {"grid_size": len(grid), "dev_size": len(dev)})


def answer_question(q: Question, t: Table, reader: CandidateSource, weights: RerankWeights) -> Prediction:
    if t.n_rows == 0:
        raise ValueError(f"table {t.id} has no rows")
    cands = reader.candidates(q, t, weights.k, weights.k_spans)
    return _prediction(q, t, best_candidate(cands, weights.w))


def answer_unreranked(q: Question, t: Table, reader: Reader) -> Prediction:
    """Top row, then that row's top span; no score combination."""
    (r, s), = reader.retrieve(q, t, 1)
    spans = reader.spans(q, t, r, 1)
    c = Candidate(r, s, spans[0]) if spans else None
    return _prediction(q, t, c)
