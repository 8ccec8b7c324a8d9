"""Hybrid table+text corpus: data model, JSON Lines ingestion, row splitting."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator


class CorpusError(ValueError):
    """Malformed or inconsistent corpus input."""


@dataclass(frozen=True)
class Passage:
    id: str
    title: str
    text: str


@dataclass(frozen=True)
class Cell:
    text: str
    links: tuple[str, ...] = ()


@dataclass(frozen=True)
class Table:
    id: str
    meta: str
    headers: tuple[str, ...]
    rows: tuple[tuple[Cell, ...], ...]

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def n_cols(self) -> int:
        return len(self.headers)


@dataclass(frozen=True)
class Question:
    id: str
    text: str
    answer_text: str | None = None
    table_id: str | None = None


@dataclass(frozen=True)
class RetrievalUnit:
    """One table row plus the deduplicated passages linked from its cells."""

    table_id: str
    row_index: int
    cells: tuple[Cell, ...]
    linked_passages: tuple[str, ...]


@dataclass
class Corpus:
    tables: dict[str, Table] = field(default_factory=dict)
    passages: dict[str, Passage] = field(default_factory=dict)

    def table(self, table_id: str) -> Table:
        try:
            return self.tables[table_id]
        except KeyError:
            raise CorpusError(f"unknown table {table_id!r}") from None

    def passage(self, passage_id: str) -> Passage:
        return self.passages[passage_id]


def split_table(t: Table) -> list[RetrievalUnit]:
    units = []
    for i, row in enumerate(t.rows):
        links: dict[str, None] = {}
        for cell in row:
            for pid in cell.links:
                links.setdefault(pid, None)
        units.append(RetrievalUnit(t.id, i, row, tuple(links)))
    return units


# --- JSON Lines -------------------------------------------------------------


def _iter_jsonl(path: Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"line {lineno}: invalid JSON ({e.msg})") from None
            if not isinstance(obj, dict):
                raise CorpusError(f"line {lineno}: expected a JSON object")
            yield lineno, obj


def _require(obj: dict, key: str, lineno: int, kind: type | tuple = str):
    if key not in obj:
        raise CorpusError(f"line {lineno}: missing field {key}")
    value = obj[key]
    if not isinstance(value, kind):
        raise CorpusError(f"line {lineno}: field {key} has wrong type")
    return value


def parse_passage(obj: dict, lineno: int = 1) -> Passage:
    p = Passage(
        id=_require(obj, "id", lineno),
        title=obj.get("title", "") or "",
        text=_require(obj, "text", lineno),
    )
    if not p.text.strip():
        raise CorpusError(f"line {lineno}: passage {p.id} has empty text")
    return p


def parse_table(obj: dict, lineno: int = 1) -> Table:
    table_id = _require(obj, "id", lineno)
    meta = obj.get("meta", "")
    if not isinstance(meta, str):
        raise CorpusError(f"line {lineno}: field meta has wrong type")
    headers = _require(obj, "headers", lineno, list)
    raw_rows = _require(obj, "rows", lineno, list)
    if not headers:
        raise CorpusError(f"line {lineno}: table {table_id} has no columns")
    if not raw_rows:
        raise CorpusError(f"line {lineno}: table {table_id} has no rows")
    rows = []
    for r, raw in enumerate(raw_rows, start=1):
        if not isinstance(raw, list) or len(raw) != len(headers):
            raise CorpusError(
                f"line {lineno}: table {table_id} row {r} has "
                f"{len(raw) if isinstance(raw, list) else 'no'} cells, expected {len(headers)}"
            )
        cells = []
        for c, cell in enumerate(raw, start=1):
            if isinstance(cell, str):
                cells.append(Cell(cell))
                continue
            if not isinstance(cell, dict) or not isinstance(cell.get("text", ""), str):
                raise CorpusError(f"line {lineno}: table {table_id} cell ({r},{c}) is malformed")
            cells.append(Cell(cell.get("text", ""), tuple(cell.get("links", []))))
        rows.append(tuple(cells))
    return Table(table_id, meta, tuple(str(h) for h in headers), tuple(rows))


def parse_question(obj: dict, lineno: int = 1) -> Question:
    return Question(
        id=str(_require(obj, "id", lineno, (str, int))),
        text=_require(obj, "text", lineno),
        answer_text=obj.get("answer_text"),
        table_id=obj.get("table_id"),
    )


def check_links(corpus: Corpus) -> None:
    for t in corpus.tables.values():
        for r, row in enumerate(t.rows, start=1):
            for c, cell in enumerate(row, start=1):
                for pid in cell.links:
                    if pid not in corpus.passages:
                        raise CorpusError(
                            f"table {t.id} cell ({r},{c}): dangling passage link {pid!r}"
                        )


def load_passages(path: str | Path) -> dict[str, Passage]:
    passages: dict[str, Passage] = {}
    for lineno, obj in _iter_jsonl(Path(path)):
        p = parse_passage(obj, lineno)
        if p.id in passages:
            raise CorpusError(f"line {lineno}: duplicate passage id {p.id}")
        passages[p.id] = p
    return passages


def load_tables(path: str | Path) -> dict[str, Table]:
    tables: dict[str, Table] = {}
    for lineno, obj in _iter_jsonl(Path(path)):
        t = parse_table(obj, lineno)
        if t.id in tables:
            raise CorpusError(f"line {lineno}: duplicate table id {t.id}")
        tables[t.id] = t
    return tables


def load_corpus(tables_path: str | Path, passages_path: str | Path) -> Corpus:
    corpus = Corpus(load_tables(tables_path), load_passages(passages_path))
    check_links(corpus)
    return corpus


def load_questions(path: str | Path) -> list[Question]:
    questions = []
    seen = set()
    for lineno, obj in _iter_jsonl(Path(path)):
        q = parse_question(obj, lineno)
        if q.id in seen:
            raise CorpusError(f"line {lineno}: duplicate question id {q.id}")
        seen.add(q.id)
        questions.append(q)
    return questions


# --- serialization ----------------------------------------------------------


def table_to_dict(t: Table) -> dict:
    return {
        "id": t.id,
        "meta": t.meta,
        "headers": list(t.headers),
        "rows": [[{"text": c.text, "links": list(c.links)} for c in row] for row in t.rows],
    }


def passage_to_dict(p: Passage) -> dict:
    return {"id": p.id, "title": p.title, "text": p.text}


def question_to_dict(q: Question) -> dict:
    out = {"id": q.id, "text": q.text}
    if q.answer_text is not None:
        out["answer_text"] = q.answer_text
    if q.table_id is not None:
        out["table_id"] = q.table_id
    return out


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, ensure_ascii=False, sort_keys=True))
            f.write("\n")


def save_corpus(corpus: Corpus, tables_path: str | Path, passages_path: str | Path) -> None:
    write_jsonl(tables_path, (table_to_dict(t) for t in corpus.tables.values()))
    write_jsonl(passages_path, (passage_to_dict(p) for p in corpus.passages.values()))


def save_questions(questions: Iterable[Question], path: str | Path) -> None:
    write_jsonl(path, (question_to_dict(q) for q in questions))
