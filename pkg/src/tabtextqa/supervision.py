"""Distant supervision: locate answer-bearing rows and spans by exact matching."""

from __future__ import annotations

import re
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .context import Segment, tokenize, tokenize_with_offsets
from .corpus import Corpus, Table, split_table

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = set(string.punctuation)


def normalize_answer(s: str) -> str:
    """Lowercase, drop punctuation and articles, collapse whitespace."""
    s = s.lower()
    s = "".join(ch for ch in s if ch not in _PUNCT)
    s = _ARTICLES.sub(" ", s)
    return " ".join(s.split())


def answer_tokens(answer: str) -> list[str]:
    """Answer as a list of normalized tokens, in the tokenizer's segmentation."""
    return [n for n in (normalize_answer(t) for t in tokenize(answer)) if n]


@dataclass(frozen=True)
class SpanRef:
    """An answer occurrence inside a cell (source key = column) or passage."""

    source: Segment
    start_token: int
    end_token: int
    surface: str


@dataclass
class SupervisionBag:
    question_id: str
    table_id: str
    spans_per_row: dict[int, list[SpanRef]] = field(default_factory=dict)

    @property
    def positive_rows(self) -> set[int]:
        return {r for r, spans in self.spans_per_row.items() if spans}

    @property
    def is_empty(self) -> bool:
        return not self.positive_rows

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "table_id": self.table_id,
            "spans_per_row": {
                str(r): [
                    [s.source.kind, s.source.key, s.start_token, s.end_token, s.surface]
                    for s in spans
                ]
                for r, spans in sorted(self.spans_per_row.items())
            },
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SupervisionBag":
        spans = {
            int(r): [SpanRef(Segment(kind, key), a, b, surf) for kind, key, a, b, surf in lst]
            for r, lst in d["spans_per_row"].items()
        }
        return cls(d["question_id"], d["table_id"], spans)


def enumerate_spans(tokens: Sequence[str], answer: str) -> list[tuple[int, int]]:
    """Non-overlapping left-to-right occurrences of ``answer`` in ``tokens``.

    Comparison is on normalized tokens; tokens that normalize to nothing
    (articles) are skipped, so "the new york jets" matches "new york jets".
    """
    target = answer_tokens(answer)
    if not target:
        return []
    kept = [(i, n) for i, n in ((i, normalize_answer(t)) for i, t in enumerate(tokens)) if n]
    words = [n for _, n in kept]
    m = len(target)
    out = []
    i = 0
    while i + m <= len(words):
        if words[i : i + m] == target:
            out.append((kept[i][0], kept[i + m - 1][0]))
            i += m
        else:
            i += 1
    return out


def _source_spans(text: str, source: Segment, answer: str) -> list[SpanRef]:
    offs = tokenize_with_offsets(text)
    return [
        SpanRef(source, a, b, text[offs[a][1] : offs[b][2]])
        for a, b in enumerate_spans([tok for tok, _, _ in offs], answer)
    ]


def find_answer_rows(
    t: Table, corpus: Corpus, answer: str, question_id: str = ""
) -> SupervisionBag:
    bag = SupervisionBag(question_id, t.id)
    if not answer_tokens(answer):
        return bag
    for unit in split_table(t):
        spans: list[SpanRef] = []
        for c, cell in enumerate(unit.cells):
            spans.extend(_source_spans(cell.text, Segment("cell", c), answer))
        for pid in unit.linked_passages:
            spans.extend(_source_spans(corpus.passage(pid).text, Segment("passage", pid), answer))
        if spans:
            bag.spans_per_row[unit.row_index] = spans
    return bag


@dataclass
class Histogram:
    counts: dict[int, int]
    total: int
    multi_span_rate: float | None = None

    @property
    def percentages(self) -> dict[int, float]:
        if not self.total:
            return {}
        return {k: 100.0 * v / self.total for k, v in self.counts.items()}

    @property
    def multi_row_fraction(self) -> float:
        if not self.total:
            return 0.0
        return sum(v for k, v in self.counts.items() if k >= 2) / self.total

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "counts": {str(k): v for k, v in sorted(self.counts.items())},
            "percentages": {str(k): round(v, 4) for k, v in sorted(self.percentages.items())},
            "multi_row_fraction": round(self.multi_row_fraction, 6),
            "multi_span_rate": None if self.multi_span_rate is None else round(self.multi_span_rate, 6),
        }

    def render(self) -> str:
        lines = [f"{'rows':>6}  {'count':>8}  {'percent':>8}"]
        for k, v in sorted(self.counts.items()):
            lines.append(f"{k:>6}  {v:>8}  {self.percentages[k]:>7.1f}%")
        lines.append(f"{'total':>6}  {self.total:>8}")
        lines.append(f"multi-row fraction: {100 * self.multi_row_fraction:.1f}%")
        if self.multi_span_rate is not None:
            lines.append(f"multi-span rate: {100 * self.multi_span_rate:.1f}%")
        return "\n".join(lines)


def ambiguity_stats(
    bags: Iterable[SupervisionBag], selected_rows: Mapping[str, int] | None = None
) -> Histogram:
    """Histogram of bag sizes |B| and the multi-span rate.

    The multi-span rate is measured on the selected row of each bag (from
    ``selected_rows``, keyed by question id, typically the row retriever's
    top row). Bags without a selection fall back to their lowest positive
    row; bags whose selected row holds no answer are left out of the rate.
    """
    counts: Counter[int] = Counter()
    multi = answerable = 0
    for bag in bags:
        pos = bag.positive_rows
        counts[len(pos)] += 1
        if not pos:
            continue
        row = selected_rows.get(bag.question_id) if selected_rows else None
        if row is None:
            row = min(pos)
        if row not in pos:
            continue
        answerable += 1
        multi += len(bag.spans_per_row[row]) > 1
    total = sum(counts.values())
    rate = multi / answerable if answerable else None
    return Histogram(dict(counts), total, rate)
