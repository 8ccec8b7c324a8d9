"""Convert the public HybridQA release into the corpus and question formats.

Expected layout under ``root`` (the release plus its table/passage bundle)::

    released_data/{train,dev,test}.json          (test may lack answers)
    WikiTables-WithLinks/tables_tok/<table_id>.json
    WikiTables-WithLinks/request_tok/<table_id>.json
"""

from __future__ import annotations

import json
from pathlib import Path

from .corpus import Cell, Corpus, Passage, Question, Table

RELEASE_SPLITS = {"train": "train.json", "dev": "dev.json", "test": "test.json"}


def _links(raw) -> tuple[str, ...]:
    return tuple(dict.fromkeys(raw or ()))


def _title(link: str) -> str:
    return link.rsplit("/", 1)[-1].replace("_", " ")


def convert_table(table_id: str, raw: dict, requests: dict) -> tuple[Table, dict[str, Passage]]:
    """One table file plus its passage file. Links without text are dropped."""
    meta = " ".join(x for x in (raw.get("title"), raw.get("section_title"), raw.get("section_text")) if x)
    headers = tuple(h[0] if isinstance(h, list) else h for h in raw["header"])
    passages: dict[str, Passage] = {}
    rows = []
    for row in raw["data"]:
        cells = []
        for cell in row:
            text, links = (cell[0], cell[1]) if isinstance(cell, list) else (cell, [])
            kept = tuple(l for l in _links(links) if l in requests)
            for l in kept:
                passages.setdefault(l, Passage(l, _title(l), requests[l]))
            cells.append(Cell(text, kept))
        rows.append(tuple(cells))
    return Table(table_id, meta, headers, tuple(rows)), passages


def load_release(root: str | Path, splits=("train", "dev")) -> tuple[Corpus, dict[str, list[Question]]]:
    root = Path(root)
    bundle = root / "WikiTables-WithLinks"
    questions: dict[str, list[Question]] = {}
    needed: dict[str, None] = {}
    for split in splits:
        with open(root / "released_data" / RELEASE_SPLITS[split], encoding="utf-8") as f:
            items = json.load(f)
        questions[split] = [
            Question(it["question_id"], it["question"], it.get("answer-text"), it["table_id"]) for it in items
        ]
        for q in questions[split]:
            needed.setdefault(q.table_id, None)
    tables: dict[str, Table] = {}
    passages: dict[str, Passage] = {}
    for tid in needed:
        with open(bundle / "tables_tok" / f"{tid}.json", encoding="utf-8") as f:
            raw = json.load(f)
        req_path = bundle / "request_tok" / f"{tid}.json"
        requests = json.loads(req_path.read_text(encoding="utf-8")) if req_path.exists() else {}
        table, ps = convert_table(tid, raw, requests)
        tables[tid] = table
        for pid, p in ps.items():
            passages.setdefault(pid, p)
    return Corpus(tables, passages), questions
