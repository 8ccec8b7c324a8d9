"""Tokenization, query-informed passage ordering, and row linearizations.

Two linearizations are produced from a row:

* the retrieval input, ``[CLS] q [SEP] (hdr is cell [DOT])* [SEP] meta [DOT] (passage [DOT])*``
* the extraction context, ``(hdr is cell .)* passage*``

Every token carries a :class:`Segment` tag so that a span can be traced back
to the cell or passage it came from.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Protocol, Sequence

from .corpus import Corpus, Passage, Question, RetrievalUnit, Table

CLS, SEP, DOT = "[CLS]", "[SEP]", "[DOT]"
SENTINELS = frozenset({CLS, SEP, DOT})
DEFAULT_BUDGET = 512

_WORD = re.compile(r"[^\W_]+")


def tokenize(s: str) -> list[str]:
    return [m.group().lower() for m in _WORD.finditer(s)]


def tokenize_with_offsets(s: str) -> list[tuple[str, int, int]]:
    return [(m.group().lower(), m.start(), m.end()) for m in _WORD.finditer(s)]


class Segment(NamedTuple):
    """Origin of a token.

    kind is one of: question, header, cell, meta, passage, separator.
    key is the column index (header/cell), the passage id, or None.
    """

    kind: str
    key: int | str | None = None


SEPARATOR = Segment("separator")
QUESTION = Segment("question")
META = Segment("meta")
ANSWERABLE_KINDS = ("cell", "passage")


@dataclass
class TokenSequence:
    tokens: list[str] = field(default_factory=list)
    origin: list[Segment] = field(default_factory=list)
    offsets: list[tuple[int, int]] = field(default_factory=list)
    sources: dict[Segment, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.tokens)

    def add(self, token: str, seg: Segment = SEPARATOR) -> None:
        self.tokens.append(token)
        self.origin.append(seg)
        self.offsets.append((0, 0))

    def add_text(self, text: str, seg: Segment, limit: int | None = None) -> int:
        """Append tokenized ``text`` under ``seg``; returns tokens appended."""
        toks = tokenize_with_offsets(text)
        if limit is not None:
            toks = toks[: max(limit, 0)]
        if toks:
            self.sources[seg] = text
        for tok, a, b in toks:
            self.tokens.append(tok)
            self.origin.append(seg)
            self.offsets.append((a, b))
        return len(toks)

    def truncate(self, budget: int) -> None:
        del self.tokens[budget:], self.origin[budget:], self.offsets[budget:]

    def segment_start(self, seg: Segment) -> int | None:
        try:
            return self.origin.index(seg)
        except ValueError:
            return None

    def segment_length(self, seg: Segment) -> int:
        start = self.segment_start(seg)
        if start is None:
            return 0
        end = start
        while end < len(self.origin) and self.origin[end] == seg:
            end += 1
        return end - start

    def provenance(self, start: int, end: int) -> Segment:
        """Origin of a span; raises if it straddles segments."""
        seg = self.origin[start]
        if any(o != seg for o in self.origin[start : end + 1]):
            raise ValueError(f"span ({start},{end}) crosses a segment boundary")
        return seg

    def surface(self, start: int, end: int) -> str:
        """Original text covered by tokens ``start..end`` (inclusive)."""
        seg = self.provenance(start, end)
        text = self.sources.get(seg)
        if text is None:
            return " ".join(self.tokens[start : end + 1])
        return text[self.offsets[start][0] : self.offsets[end][1]]


# --- passage scoring --------------------------------------------------------


class SimilarityScorer(Protocol):
    def score(self, question: str, passage: Passage) -> float: ...


class TfidfScorer:
    """Cosine similarity of idf-weighted term-frequency vectors.

    Document frequencies come from the passage corpus given at construction.
    """

    def __init__(self, passages: Iterable[Passage]):
        df: Counter[str] = Counter()
        n = 0
        for p in passages:
            n += 1
            df.update(set(tokenize(p.text)))
        self.n_docs = n
        self.idf = {t: math.log((1 + n) / (1 + c)) + 1.0 for t, c in df.items()}
        self._default_idf = math.log(1 + n) + 1.0
        self._cache: dict[str, tuple[dict[str, float], float]] = {}

    def _vector(self, text: str) -> tuple[dict[str, float], float]:
        tf = Counter(tokenize(text))
        vec = {t: c * self.idf.get(t, self._default_idf) for t, c in tf.items()}
        return vec, math.sqrt(sum(v * v for v in vec.values()))

    def score(self, question: str, passage: Passage) -> float:
        qv, qn = self._vector(question)
        cached = self._cache.get(passage.id)
        if cached is None:
            cached = self._cache[passage.id] = self._vector(passage.text)
        pv, pn = cached
        if qn == 0 or pn == 0:
            return 0.0
        return sum(w * pv.get(t, 0.0) for t, w in qv.items()) / (qn * pn)


# --- budgets ----------------------------------------------------------------


def _row_tokens(t: Table, r: int) -> int:
    return sum(len(tokenize(h)) + len(tokenize(c.text)) + 2 for h, c in zip(t.headers, t.rows[r]))


def retrieval_fixed_cost(q: Question, t: Table, r: int) -> int:
    """Tokens of the retrieval input before any passage is appended."""
    return 3 + len(tokenize(q.text)) + _row_tokens(t, r) + len(tokenize(t.meta)) + 1


def extraction_fixed_cost(t: Table, r: int) -> int:
    return _row_tokens(t, r)


def filter_passages(
    q: Question,
    u: RetrievalUnit,
    corpus: Corpus,
    scorer: SimilarityScorer | None,
    budget: int = DEFAULT_BUDGET,
    fixed_cost: int = 0,
    overhead: int = 1,
) -> list[str]:
    """Order ``u``'s passages by relevance to ``q`` and keep the prefix that fits.

    With ``scorer=None`` the linked order is kept (no filtering). Each passage
    costs its token count plus ``overhead`` separator tokens. If no complete
    passage fits but there is room left after ``fixed_cost``, the first
    passage is kept so the linearizer can fill the remainder.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    ids = list(u.linked_passages)
    if scorer is not None:
        scores = [scorer.score(q.text, corpus.passage(pid)) for pid in ids]
        order = sorted(range(len(ids)), key=lambda i: -scores[i])  # stable
        ids = [ids[i] for i in order]
    room = budget - fixed_cost
    kept = []
    used = 0
    for pid in ids:
        cost = len(tokenize(corpus.passage(pid).text)) + overhead
        if used + cost > room:
            break
        kept.append(pid)
        used += cost
    if not kept and ids and room > 0:
        kept.append(ids[0])
    return kept


# --- linearization ----------------------------------------------------------


def linearize_for_retrieval(
    q: Question,
    t: Table,
    r: int,
    filtered: Sequence[str],
    corpus: Corpus,
    budget: int | None = DEFAULT_BUDGET,
) -> TokenSequence:
    seq = TokenSequence()
    seq.add(CLS)
    seq.add_text(q.text, QUESTION)
    seq.add(SEP)
    for c, (hdr, cell) in enumerate(zip(t.headers, t.rows[r])):
        seq.add_text(hdr, Segment("header", c))
        seq.add("is")
        seq.add_text(cell.text, Segment("cell", c))
        seq.add(DOT)
    seq.add(SEP)
    seq.add_text(t.meta, META)
    seq.add(DOT)
    for pid in filtered:
        if budget is not None and len(seq) >= budget:
            break
        seq.add_text(corpus.passage(pid).text, Segment("passage", pid))
        seq.add(DOT)
    if budget is not None:
        seq.truncate(budget)
    return seq


def linearize_for_extraction(
    t: Table,
    r: int,
    filtered: Sequence[str],
    corpus: Corpus,
    budget: int | None = None,
) -> TokenSequence:
    seq = TokenSequence()
    for c, (hdr, cell) in enumerate(zip(t.headers, t.rows[r])):
        seq.add_text(hdr, Segment("header", c))
        seq.add("is")
        seq.add_text(cell.text, Segment("cell", c))
        seq.add(".")
    for pid in filtered:
        if budget is not None and len(seq) >= budget:
            break
        seq.add_text(corpus.passage(pid).text, Segment("passage", pid))
    if budget is not None:
        seq.truncate(budget)
    return seq
