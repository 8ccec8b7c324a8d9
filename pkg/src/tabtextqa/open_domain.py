"""Lexical table retrieval and row-to-passage linking for open-domain questions."""

from __future__ import annotations

import json
import math
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .context import tokenize
from .corpus import Cell, Corpus, Passage, Table

INDEX_FORMAT = "tabtextqa.bm25"
INDEX_VERSION = 1
K1, B = 1.2, 0.75

TAB_META, ROW, HDR, CEL = "[TAB-META]", "[ROW]", "[HDR]", "[CEL]"

# cell text -> extra query strings (e.g. generated row context)
QueryAugmenter = Callable[[Table, int, int], Sequence[str]]


@dataclass
class BM25Index:
    """Inverted index with BM25 scoring (Lucene-style non-negative idf)."""

    k1: float = K1
    b: float = B
    doc_ids: list[str] = field(default_factory=list)
    doc_len: list[int] = field(default_factory=list)
    postings: dict[str, list[tuple[int, int]]] = field(default_factory=dict)

    @classmethod
    def build(cls, docs: Iterable[tuple[str, Sequence[str]]], k1: float = K1, b: float = B) -> "BM25Index":
        index = cls(k1, b)
        postings: dict[str, list[tuple[int, int]]] = defaultdict(list)
        for doc_id, tokens in docs:
            n = len(index.doc_ids)
            index.doc_ids.append(doc_id)
            index.doc_len.append(len(tokens))
            for term, tf in sorted(Counter(tokens).items()):
                postings[term].append((n, tf))
        index.postings = dict(sorted(postings.items()))
        return index

    @property
    def n_docs(self) -> int:
        return len(self.doc_ids)

    @property
    def avg_len(self) -> float:
        return sum(self.doc_len) / self.n_docs if self.n_docs else 0.0

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        return math.log(1 + (self.n_docs - df + 0.5) / (df + 0.5))

    def scores(self, query_tokens: Sequence[str]) -> dict[int, float]:
        out: dict[int, float] = defaultdict(float)
        avg = self.avg_len or 1.0
        for term, qtf in Counter(query_tokens).items():
            plist = self.postings.get(term)
            if not plist:
                continue
            idf = self.idf(term)
            for doc, tf in plist:
                norm = tf + self.k1 * (1 - self.b + self.b * self.doc_len[doc] / avg)
                out[doc] += qtf * idf * tf * (self.k1 + 1) / norm
        return out

    def search(self, query: str, k: int, include_zero: bool = False) -> list[tuple[str, float]]:
        """Top-``k`` documents, ties by id. Zero-score documents only if asked."""
        if k < 1:
            raise ValueError("k must be at least 1")
        scores = self.scores(tokenize(query))
        if include_zero:
            hits = [(doc_id, scores.get(d, 0.0)) for d, doc_id in enumerate(self.doc_ids)]
        else:
            hits = [(self.doc_ids[d], s) for d, s in scores.items() if s > 0]
        hits.sort(key=lambda h: (-h[1], h[0]))
        return hits[:k]

    def to_dict(self) -> dict:
        return {
            "format": INDEX_FORMAT,
            "version": INDEX_VERSION,
            "k1": self.k1,
            "b": self.b,
            "doc_ids": self.doc_ids,
            "doc_len": self.doc_len,
            "postings": {t: [list(p) for p in plist] for t, plist in self.postings.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BM25Index":
        if d.get("format") != INDEX_FORMAT or d.get("version") != INDEX_VERSION:
            raise ValueError("not a BM25 index file (or unsupported version)")
        return cls(
            d["k1"],
            d["b"],
            list(d["doc_ids"]),
            list(d["doc_len"]),
            {t: [tuple(p) for p in plist] for t, plist in d["postings"].items()},
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "BM25Index":
        return cls.from_dict(json.loads(Path(path).read_text()))


def linearize_table(t: Table) -> list[str]:
    """Index tokens for a table; delimiters are kept as literal tokens.

    ``meta`` already starts with the table title, so it doubles as the prefix.
    """
    toks = tokenize(t.meta) + [TAB_META]
    for row in t.rows:
        toks.append(ROW)
        for hdr, cell in zip(t.headers, row):
            toks += [HDR, *tokenize(hdr), CEL, *tokenize(cell.text)]
    return toks


def build_table_index(corpus: Corpus, k1: float = K1, b: float = B) -> BM25Index:
    return BM25Index.build(((t.id, linearize_table(t)) for t in corpus.tables.values()), k1, b)


def build_passage_index(passages: Iterable[Passage], k1: float = K1, b: float = B) -> BM25Index:
    return BM25Index.build(((p.id, tokenize(f"{p.title} {p.text}")) for p in passages), k1, b)


def retrieve_tables(question: str, index: BM25Index, k: int) -> list[tuple[str, float]]:
    return index.search(question, k, include_zero=True)


def link_row_passages(
    t: Table,
    r: int,
    passage_index: BM25Index,
    n: int = 10,
    augmenter: QueryAugmenter | None = None,
) -> list[list[str]]:
    """Top-``n`` passages per cell of row ``r`` by BM25 on the cell text."""
    if n < 1:
        raise ValueError("n must be at least 1")
    out = []
    for c, cell in enumerate(t.rows[r]):
        links: dict[str, None] = {}
        queries = [cell.text] if tokenize(cell.text) else []
        if augmenter is not None and queries:
            queries += list(augmenter(t, r, c))
        for query in queries:
            for pid, _ in passage_index.search(query, n):
                links.setdefault(pid, None)
        out.append(list(links))
    return out


def row_links(per_cell: Sequence[Sequence[str]]) -> list[str]:
    seen: dict[str, None] = {}
    for links in per_cell:
        for pid in links:
            seen.setdefault(pid, None)
    return list(seen)


def link_table(t: Table, passage_index: BM25Index, n: int = 10, augmenter: QueryAugmenter | None = None) -> Table:
    """Copy of ``t`` with every cell's links replaced by retrieved passages."""
    rows = []
    for r, row in enumerate(t.rows):
        per_cell = link_row_passages(t, r, passage_index, n, augmenter)
        rows.append(tuple(Cell(cell.text, tuple(links)) for cell, links in zip(row, per_cell)))
    return Table(t.id, t.meta, t.headers, tuple(rows))


def hard_negative_mining(
    question: str,
    gold_table_id: str,
    index: BM25Index,
    pool_size: int = 20,
    top_m: int = 5,
    rng: random.Random | int = 0,
) -> str:
    """A non-gold table sampled uniformly from the top-``top_m`` BM25 survivors."""
    if pool_size < 1 or top_m < 1:
        raise ValueError("pool size and top-m must be at least 1")
    if not isinstance(rng, random.Random):
        rng = random.Random(rng)
    survivors = [tid for tid, _ in retrieve_tables(question, index, pool_size) if tid != gold_table_id]
    if not survivors:
        raise ValueError("no hard negative available")
    return rng.choice(survivors[:top_m])
