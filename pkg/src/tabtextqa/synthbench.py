"""Synthetic table+text corpora with planted evidence rows and spans.

Each question's answer string is planted next to the question's context
terms in one passage (or cell) of its gold row. Ambiguity is layered on
top: decoy rows that contain the answer string without the context
(``p_multirow``) and extra context-free occurrences inside the gold row
(``p_multispan``). Decoy rows are preferentially the text-heavy ones, as
with real tables where long rows match more strings by chance.
"""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .context import Segment
from .corpus import (
    Cell,
    Corpus,
    Passage,
    Question,
    Table,
    passage_to_dict,
    question_to_dict,
    table_to_dict,
    write_jsonl,
)
from .metrics import exact_match

_ONSETS = "b c d f g h j k l m n p r s t v z br dr gr kr pl st tr".split()
_VOWELS = "a e i o u ai ea io".split()
_ANSWER_ONSETS = "x q zh".split()


@dataclass
class SynthConfig:
    seed: int = 0
    n_tables: int = 200
    rows_per_table: int = 8
    columns: int = 4
    vocab_size: int = 3000
    passages_per_row: tuple[int, int] = (1, 3)
    passage_len: tuple[int, int] = (18, 36)
    context_terms: int = 2
    p_multirow: float = 0.4
    p_multispan: float = 0.35
    p_cell_answer: float = 0.25
    # chance that a decoy occurrence, or a non-gold row, carries one question term
    decoy_context: float = 0.6
    # "random": gold occurrence anywhere among the row's matches;
    # "never_first": a decoy precedes it in the gold passage (passage answers only)
    gold_position: str = "random"
    # "random" or "last": where the gold passage sits in the row's link order
    gold_passage: str = "random"
    splits: tuple[float, float, float] = (0.6, 0.2, 0.2)

    def __post_init__(self):
        for name in ("p_multirow", "p_multispan", "p_cell_answer", "decoy_context"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.rows_per_table < 1 or self.columns < 2 or self.n_tables < 1:
            raise ValueError("need at least one table, one row and two columns")
        if self.gold_position not in ("random", "never_first"):
            raise ValueError("gold_position must be 'random' or 'never_first'")
        if self.gold_passage not in ("random", "last"):
            raise ValueError("gold_passage must be 'random' or 'last'")

    @classmethod
    def from_dict(cls, d: Mapping) -> "SynthConfig":
        d = dict(d)
        for key in ("passages_per_row", "passage_len", "splits"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class GoldEvidence:
    question_id: str
    table_id: str
    row: int
    source: Segment
    start: int
    end: int
    split: str
    decoy_rows: tuple[int, ...] = ()
    n_spans: int = 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["source"] = [self.source.kind, self.source.key]
        d["decoy_rows"] = list(self.decoy_rows)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "GoldEvidence":
        d = dict(d)
        d["source"] = Segment(*d["source"])
        d["decoy_rows"] = tuple(d.get("decoy_rows", ()))
        return cls(**d)


@dataclass
class SynthBench:
    corpus: Corpus
    questions: list[Question]
    gold: dict[str, GoldEvidence]
    config: SynthConfig

    def split(self, name: str) -> list[Question]:
        return [q for q in self.questions if self.gold[q.id].split == name]

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "tables": out / "tables.jsonl",
            "passages": out / "passages.jsonl",
            "gold": out / "gold.jsonl",
        }
        write_jsonl(paths["tables"], (table_to_dict(t) for t in self.corpus.tables.values()))
        write_jsonl(paths["passages"], (passage_to_dict(p) for p in self.corpus.passages.values()))
        for name in ("train", "dev", "test"):
            paths[name] = out / f"questions_{name}.jsonl"
            write_jsonl(paths[name], (question_to_dict(q) for q in self.split(name)))
        write_jsonl(paths["gold"], (self.gold[q.id].to_dict() for q in self.questions))
        (out / "synth_config.json").write_text(json.dumps(asdict(self.config), sort_keys=True) + "\n")
        return paths


def load_gold(path: str | Path) -> dict[str, GoldEvidence]:
    out = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                g = GoldEvidence.from_dict(json.loads(line))
                out[g.question_id] = g
    return out


class _Words:
    def __init__(self, rng: random.Random, size: int):
        self.rng = rng
        seen: set[str] = set()
        words = []
        while len(words) < size:
            w = "".join(rng.choice(_ONSETS) + rng.choice(_VOWELS) for _ in range(rng.randint(2, 3)))
            if w not in seen and w not in _RESERVED:
                seen.add(w)
                words.append(w)
        self.words = words
        self._answers: set[str] = set()

    def sample(self, k: int) -> list[str]:
        return self.rng.sample(self.words, k)

    def filler(self, n: int) -> list[str]:
        return [self.rng.choice(self.words) for _ in range(n)]

    def answer(self) -> str:
        """A fresh answer string that cannot collide with filler words."""
        while True:
            if self.rng.random() < 0.4:
                a = str(self.rng.randint(1000, 2999))
            else:
                parts = [
                    self.rng.choice(_ANSWER_ONSETS) + self.rng.choice(_VOWELS) + self.rng.choice(_ONSETS)
                    for _ in range(1 if self.rng.random() < 0.7 else 2)
                ]
                a = " ".join(parts)
            if a not in self._answers:
                self._answers.add(a)
                return a


_RESERVED = {"a", "an", "the", "is", "of", "what", "which"}
_MARK = "\x00"


def _insert(tokens: list[str], pos: int, words: Sequence[str]) -> list[str]:
    return tokens[:pos] + list(words) + tokens[pos:]


def generate(config: SynthConfig | None = None) -> SynthBench:
    config = config or SynthConfig()
    rng = random.Random(config.seed)
    words = _Words(rng, config.vocab_size)
    tables: dict[str, Table] = {}
    passages: dict[str, Passage] = {}
    questions: list[Question] = []
    gold: dict[str, GoldEvidence] = {}
    split_names = ("train", "dev", "test")

    for ti in range(config.n_tables):
        tid = f"T{ti:05d}"
        qid = f"Q{ti:05d}"
        headers = ["name"] + words.sample(config.columns - 1)
        topic = words.sample(2)
        meta = f"{topic[0]} {topic[1]} list"
        n_rows = config.rows_per_table
        answer = words.answer()
        a_toks = answer.split()
        context = words.sample(config.context_terms)
        attr_col = rng.randrange(1, config.columns)
        gold_row = rng.randrange(n_rows)
        cell_answer = rng.random() < config.p_cell_answer

        # row text: cells and passage token lists, linked from the name cell
        cells = [[" ".join(words.sample(2))] + [words.sample(1)[0] for _ in range(config.columns - 1)] for _ in range(n_rows)]
        row_passages: list[list[list[str]]] = []
        for r in range(n_rows):
            k = rng.randint(*config.passages_per_row)
            row_passages.append([words.filler(rng.randint(*config.passage_len)) for _ in range(k)])

        def maybe_context(toks: list[str]) -> list[str]:
            if rng.random() < config.decoy_context:
                return _insert(toks, rng.randrange(len(toks) + 1), [rng.choice(context)])
            return toks

        def decoy_phrase() -> list[str]:
            if rng.random() < config.decoy_context:
                c = rng.choice(context)
                return [c, *a_toks] if rng.random() < 0.5 else [*a_toks, c]
            return list(a_toks)

        # noise overlap in non-gold rows
        for r in range(n_rows):
            if r != gold_row and row_passages[r]:
                j = rng.randrange(len(row_passages[r]))
                row_passages[r][j] = maybe_context(row_passages[r][j])

        # gold evidence; the passage answer is a marker until materialized
        if config.gold_position == "never_first":
            cell_answer = False
        gold_passage_idx = None
        if cell_answer:
            cells[gold_row][attr_col] = answer
            j = rng.randrange(len(row_passages[gold_row]))
            p = row_passages[gold_row][j]
            row_passages[gold_row][j] = _insert(p, rng.randrange(len(p) + 1), context)
        else:
            n_p = len(row_passages[gold_row])
            gold_passage_idx = n_p - 1 if config.gold_passage == "last" else rng.randrange(n_p)
            p = row_passages[gold_row][gold_passage_idx]
            split_at = rng.randint(1, max(1, len(context) - 1))
            phrase = context[:split_at] + [_MARK] + context[split_at:]
            row_passages[gold_row][gold_passage_idx] = _insert(p, rng.randrange(len(p) + 1), phrase)

        # extra context-free occurrences in the gold row
        n_extra = rng.randint(1, 2) if rng.random() < config.p_multispan else 0
        for e in range(n_extra):
            if config.gold_position == "never_first" and e == 0:
                # ahead of the gold inside its own passage, so passage order cannot matter
                p = row_passages[gold_row][gold_passage_idx]
                limit = max(p.index(_MARK) - len(context), 0)
                row_passages[gold_row][gold_passage_idx] = _insert(p, rng.randrange(limit + 1), decoy_phrase())
                continue
            target = rng.randrange(len(row_passages[gold_row]))
            p = row_passages[gold_row][target]
            row_passages[gold_row][target] = _insert(p, rng.randrange(len(p) + 1), decoy_phrase())

        # decoy rows: answer string without the question context, in text-heavy rows
        decoy_rows: list[int] = []
        if n_rows > 1 and rng.random() < config.p_multirow:
            others = [r for r in range(n_rows) if r != gold_row]
            weights = [sum(len(p) for p in row_passages[r]) ** 2 for r in others]
            n_decoys = min(len(others), rng.choice((1, 1, 1, 2, 2, 3)))
            while len(decoy_rows) < n_decoys:
                r = rng.choices(others, weights)[0]
                if r not in decoy_rows:
                    decoy_rows.append(r)
            decoy_rows.sort()
            for r in decoy_rows:
                if rng.random() < 0.3:
                    cells[r][rng.randrange(1, config.columns)] = answer
                else:
                    extra = words.filler(rng.randint(*config.passage_len))
                    extra = _insert(extra, rng.randrange(len(extra) + 1), decoy_phrase())
                    row_passages[r].append(extra)

        # materialize table and passages
        start = 0
        if gold_passage_idx is not None:
            p = row_passages[gold_row][gold_passage_idx]
            start = p.index(_MARK)
            row_passages[gold_row][gold_passage_idx] = p[:start] + list(a_toks) + p[start + 1 :]
        rows = []
        gold_pid = None
        for r in range(n_rows):
            pids = []
            for j, toks in enumerate(row_passages[r]):
                pid = f"{tid}-R{r}-P{j}"
                passages[pid] = Passage(pid, f"{cells[r][0]} {j}", " ".join(toks))
                pids.append(pid)
                if r == gold_row and j == gold_passage_idx:
                    gold_pid = pid
            row_cells = [Cell(cells[r][0], tuple(pids))] + [Cell(c) for c in cells[r][1:]]
            rows.append(tuple(row_cells))
        tables[tid] = Table(tid, meta, tuple(headers), tuple(rows))

        source = Segment("cell", attr_col) if cell_answer else Segment("passage", gold_pid)
        end = start + len(a_toks) - 1

        q_words = ["what", "is", "the", headers[attr_col], "of", *rng.sample(context, len(context))]
        questions.append(Question(qid, " ".join(q_words), answer, tid))
        u = rng.random()
        split = split_names[0] if u < config.splits[0] else split_names[1] if u < config.splits[0] + config.splits[1] else split_names[2]
        n_spans = _count_occurrences(cells[gold_row], row_passages[gold_row], a_toks)
        gold[qid] = GoldEvidence(qid, tid, gold_row, source, start, end, split, tuple(decoy_rows), n_spans)

    return SynthBench(Corpus(tables, passages), questions, gold, config)


def _count_occurrences(cells: Sequence[str], passages: Iterable[Sequence[str]], answer: Sequence[str]) -> int:
    n = sum(" ".join(c.split()) == " ".join(answer) for c in cells)
    for toks in passages:
        i = 0
        m = len(answer)
        while i + m <= len(toks):
            if list(toks[i : i + m]) == list(answer):
                n += 1
                i += m
            else:
                i += 1
    return n


# --- oracle evaluation ------------------------------------------------------


@dataclass
class OracleReport:
    row_accuracy: float | None = None
    denoise_accuracy: float | None = None
    answer_em: float | None = None
    counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def gold_context_span(gold: GoldEvidence, context) -> tuple[int, int] | None:
    """Position of the true span inside an extraction context, if present."""
    base = context.segment_start(gold.source)
    if base is None or gold.end >= context.segment_length(gold.source):
        return None
    return base + gold.start, base + gold.end


def oracle_evaluate(
    gold: Mapping[str, GoldEvidence],
    selected_rows: Mapping[str, int] | None = None,
    denoised: Iterable | None = None,
    predictions: Iterable | None = None,
    answers: Mapping[str, str] | None = None,
) -> OracleReport:
    """Compare pipeline outputs with planted evidence.

    ``denoised`` holds extraction instances (``question_id``, ``row``,
    ``context``, ``gold_spans``) whose single gold span was chosen by a
    denoiser; ``predictions`` hold objects with ``question_id`` and ``answer``.
    """
    report = OracleReport()
    if selected_rows is not None:
        hits = [selected_rows[q] == gold[q].row for q in selected_rows if q in gold]
        report.row_accuracy = sum(hits) / len(hits) if hits else None
        report.counts["rows"] = len(hits)
    if denoised is not None:
        hits = []
        for inst in denoised:
            g = gold[inst.question_id]
            if inst.row != g.row:
                hits.append(False)
                continue
            hits.append(gold_context_span(g, inst.context) == tuple(inst.gold_spans[0]))
        report.denoise_accuracy = sum(hits) / len(hits) if hits else None
        report.counts["denoised"] = len(hits)
    if predictions is not None:
        answers = answers or {}
        scores = [exact_match(p.answer, answers[p.question_id]) for p in predictions if p.question_id in answers]
        report.answer_em = sum(scores) / len(scores) if scores else None
        report.counts["answers"] = len(scores)
    return report
