"""Stage orchestration: ingest -> [index/link] -> supervise -> train -> tune -> predict -> eval.

Every stage reads and writes files under ``out_dir`` and records the config
hash it ran under in ``manifest.json``. Downstream stages refuse artifacts
produced under a different hash unless forced.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import logging
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

from . import open_domain
from .answer_extractor import (
    ExtractorTrainConfig,
    SpanScorerModel,
    build_extraction_instances,
    extraction_context,
    multi_span_training,
)
from .context import TfidfScorer, tokenize
from .corpus import (
    Corpus,
    CorpusError,
    Question,
    load_corpus,
    load_questions,
    save_corpus,
    save_questions,
    write_jsonl,
)
from .metrics import evaluate, hits_at_k
from .reranker import (
    Prediction,
    Reader,
    RerankWeights,
    answer_question,
    combine_score,
    simplex_grid,
    tune_weights,
)
from .row_retriever import RowScorerModel, RowTrainConfig, build_row_instances, train_row_retriever
from .supervision import SupervisionBag, ambiguity_stats, find_answer_rows

log = logging.getLogger(__name__)

STAGES = ("ingest", "index-tables", "link", "supervise", "train-rr", "train-ae", "tune-reranker", "predict", "eval")
TOGGLES = ("mil", "rf", "mst", "rsr", "pf")
SPLITS = ("train", "dev", "test")


class DependencyError(RuntimeError):
    """An upstream artifact is missing or was produced under another config."""


@dataclass
class PipelineConfig:
    tables: str = ""
    passages: str = ""
    train_questions: str = ""
    dev_questions: str = ""
    test_questions: str = ""
    out_dir: str = "run"
    seed: int = 0
    budget: int = 512
    k: int = 5
    k_spans: int = 5
    grid_step: float = 0.1
    max_answer_len: int = 30
    rr_epochs: int = 5
    rr_learning_rate: float = 0.1
    rr_curriculum: str = "1,1"
    ae_epochs: int = 5
    ae_learning_rate: float = 0.05
    bm25_k1: float = 1.2
    bm25_b: float = 0.75
    link_n: int = 10
    link: bool = False
    open_domain: bool = False
    tables_k: int = 1
    hits_k: str = "1,5,10"
    mil: bool = True
    rf: bool = True
    mst: bool = True
    rsr: bool = True
    pf: bool = True
    jobs: int = 1

    # keys that do not change any artifact
    _UNHASHED = ("out_dir", "jobs")

    def hash(self) -> str:
        d = {k: v for k, v in asdict(self).items() if k not in self._UNHASHED}
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @property
    def out(self) -> Path:
        return Path(self.out_dir)

    def curriculum(self) -> tuple[int | None, ...]:
        if not self.mil:
            return ()
        out = []
        for part in self.rr_curriculum.split(","):
            part = part.strip()
            if part:
                out.append(None if part in ("all", "*") else int(part))
        return tuple(out)

    def with_overrides(self, overrides: dict[str, str]) -> "PipelineConfig":
        return replace(self, **_coerce(overrides))


def _coerce(raw: dict[str, str]) -> dict:
    types = {f.name: f.type for f in fields(PipelineConfig)}
    out = {}
    for key, value in raw.items():
        key = key.replace("-", "_")
        if key not in types:
            raise ValueError(f"unknown config key {key!r}")
        kind = types[key]
        if not isinstance(value, str):
            out[key] = value
        elif kind == "bool":
            low = value.strip().lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(f"config key {key} expects a boolean, got {value!r}")
            out[key] = low in ("1", "true", "yes", "on")
        elif kind == "int":
            out[key] = int(value)
        elif kind == "float":
            out[key] = float(value)
        else:
            out[key] = value
    return out


def load_config(path: str | Path | None, overrides: dict[str, str] | None = None) -> PipelineConfig:
    """Read a flat ``key = value`` file (an optional ``[pipeline]`` header is allowed)."""
    raw: dict[str, str] = {}
    if path is not None:
        text = Path(path).read_text()
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        if not text.lstrip().startswith("["):
            text = "[pipeline]\n" + text
        parser.read_string(text)
        raw.update(parser["pipeline"] if parser.has_section("pipeline") else {})
        base = Path(path).parent
        for key in ("tables", "passages", "train_questions", "dev_questions", "test_questions", "out_dir"):
            if key in raw and raw[key] and not Path(raw[key]).is_absolute():
                raw[key] = str(base / raw[key])
    raw.update(overrides or {})
    return PipelineConfig(**_coerce(raw))


def write_config(cfg: PipelineConfig, path: str | Path) -> None:
    lines = [f"{k} = {str(v).lower() if isinstance(v, bool) else v}" for k, v in asdict(cfg).items()]
    Path(path).write_text("\n".join(lines) + "\n")


# --- artifacts --------------------------------------------------------------


class Workspace:
    """Artifact directory with a manifest of stage -> (config hash, files)."""

    def __init__(self, cfg: PipelineConfig, force: bool = False):
        self.cfg = cfg
        self.root = cfg.out
        self.force = force
        self.root.mkdir(parents=True, exist_ok=True)
        self.manifest_path = self.root / "manifest.json"

    def path(self, name: str) -> Path:
        return self.root / name

    def manifest(self) -> dict:
        if self.manifest_path.exists():
            return json.loads(self.manifest_path.read_text())
        return {}

    def record(self, stage: str, files: Iterable[str]) -> None:
        m = self.manifest()
        m[stage] = {"config_hash": self.cfg.hash(), "files": sorted(files)}
        self.manifest_path.write_text(json.dumps(m, indent=1, sort_keys=True) + "\n")

    def require(self, stage: str, consumer: str) -> None:
        entry = self.manifest().get(stage)
        if entry is None or not all(self.path(f).exists() for f in entry["files"]):
            raise DependencyError(f"{consumer}: missing artifacts from stage '{stage}'; run it first")
        if entry["config_hash"] != self.cfg.hash() and not self.force:
            raise DependencyError(
                f"{consumer}: artifacts of stage '{stage}' come from config {entry['config_hash']}, "
                f"current is {self.cfg.hash()} (rerun '{stage}' or pass --force)"
            )

    def has(self, stage: str) -> bool:
        return stage in self.manifest()


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


@dataclass
class Context:
    """Loaded inputs shared by stages within one process."""

    corpus: Corpus
    questions: dict[str, list[Question]]
    scorer: TfidfScorer | None = None


def _load_ingested(ws: Workspace, consumer: str) -> Context:
    ws.require("ingest", consumer)
    stage = "link" if ws.has("link") and ws.cfg.link else "ingest"
    if stage == "link":
        ws.require("link", consumer)
    tables = ws.path("tables.linked.jsonl" if stage == "link" else "tables.jsonl")
    corpus = load_corpus(tables, ws.path("passages.jsonl"))
    questions = {s: load_questions(ws.path(f"questions_{s}.jsonl")) for s in SPLITS}
    scorer = TfidfScorer(corpus.passages.values()) if ws.cfg.pf else None
    return Context(corpus, questions, scorer)


def _load_bags(ws: Workspace, consumer: str) -> dict[str, SupervisionBag]:
    ws.require("supervise", consumer)
    bags = {}
    for s in ("train", "dev"):
        with open(ws.path(f"bags_{s}.jsonl"), encoding="utf-8") as f:
            for line in f:
                b = SupervisionBag.from_dict(json.loads(line))
                bags[b.question_id] = b
    return bags


# --- stages -----------------------------------------------------------------


def stage_ingest(ws: Workspace) -> None:
    cfg = ws.cfg
    for key in ("tables", "passages", "train_questions", "test_questions"):
        if not getattr(cfg, key):
            raise ValueError(f"config key {key} is required")
    corpus = load_corpus(cfg.tables, cfg.passages)
    save_corpus(corpus, ws.path("tables.jsonl"), ws.path("passages.jsonl"))
    files = ["tables.jsonl", "passages.jsonl"]
    for s in SPLITS:
        src = getattr(cfg, f"{s}_questions")
        qs = load_questions(src) if src else []
        for q in qs:
            if q.table_id is not None and q.table_id not in corpus.tables:
                raise CorpusError(f"question {q.id} refers to unknown table {q.table_id}")
        save_questions(qs, ws.path(f"questions_{s}.jsonl"))
        files.append(f"questions_{s}.jsonl")
    log.info("ingested %d tables, %d passages", len(corpus.tables), len(corpus.passages))
    ws.record("ingest", files)


def stage_index_tables(ws: Workspace) -> None:
    ctx = _load_ingested(ws, "index-tables")
    index = open_domain.build_table_index(ctx.corpus, ws.cfg.bm25_k1, ws.cfg.bm25_b)
    index.save(ws.path("table_index.json"))
    ws.record("index-tables", ["table_index.json"])


def stage_link(ws: Workspace) -> None:
    ws.require("ingest", "link")
    corpus = load_corpus(ws.path("tables.jsonl"), ws.path("passages.jsonl"))
    pindex = open_domain.build_passage_index(corpus.passages.values(), ws.cfg.bm25_k1, ws.cfg.bm25_b)
    linked = Corpus(
        {tid: open_domain.link_table(t, pindex, ws.cfg.link_n) for tid, t in corpus.tables.items()},
        corpus.passages,
    )
    save_corpus(linked, ws.path("tables.linked.jsonl"), ws.path("passages.linked.jsonl"))
    ws.path("passages.linked.jsonl").unlink()
    ws.record("link", ["tables.linked.jsonl"])


def stage_supervise(ws: Workspace) -> None:
    ctx = _load_ingested(ws, "supervise")
    files = []
    for s in ("train", "dev"):
        bags = []
        for q in ctx.questions[s]:
            if q.table_id is None or not q.answer_text:
                continue
            bags.append(find_answer_rows(ctx.corpus.table(q.table_id), ctx.corpus, q.answer_text, q.id))
        write_jsonl(ws.path(f"bags_{s}.jsonl"), (b.to_dict() for b in bags))
        files.append(f"bags_{s}.jsonl")
        if s == "train":
            hist = ambiguity_stats(bags)
            _dump(ws.path("stats.json"), hist.to_dict())
            ws.path("stats.txt").write_text(hist.render() + "\n")
            files += ["stats.json", "stats.txt"]
    ws.record("supervise", files)


def stage_train_rr(ws: Workspace) -> None:
    cfg = ws.cfg
    ctx = _load_ingested(ws, "train-rr")
    bags = _load_bags(ws, "train-rr")
    instances = build_row_instances(ctx.questions["train"], bags, ctx.corpus, ctx.scorer, cfg.budget)
    model = _train_rr(instances, cfg)
    model.meta["config_hash"] = cfg.hash()
    model.save(ws.path("rr_model.json"))
    ws.record("train-rr", ["rr_model.json"])


def _train_rr(instances, cfg: PipelineConfig) -> RowScorerModel:
    rcfg = RowTrainConfig(
        epochs=cfg.rr_epochs,
        learning_rate=cfg.rr_learning_rate,
        seed=cfg.seed,
        loss="mil" if cfg.mil else "naive",
        curriculum=cfg.curriculum(),
    )
    return train_row_retriever(instances, rcfg)


def stage_train_ae(ws: Workspace) -> None:
    cfg = ws.cfg
    ctx = _load_ingested(ws, "train-ae")
    bags = _load_bags(ws, "train-ae")
    rr = None
    if cfg.rf:
        ws.require("train-rr", "train-ae")
        rr = RowScorerModel.load(ws.path("rr_model.json"))
    instances = build_extraction_instances(
        ctx.questions["train"], bags, ctx.corpus, rr, cfg.rf, ctx.scorer, cfg.budget
    )
    ecfg = ExtractorTrainConfig(
        epochs=cfg.ae_epochs, learning_rate=cfg.ae_learning_rate, seed=cfg.seed, max_answer_len=cfg.max_answer_len
    )
    result = multi_span_training(instances, ecfg, "mst" if cfg.mst else "first")
    result.model.meta["config_hash"] = cfg.hash()
    result.model.save(ws.path("ae_model.json"))
    write_jsonl(
        ws.path("denoised.jsonl"),
        ({"question_id": d.question_id, "row": d.row, "span": list(d.gold_spans[0])} for d in result.denoised),
    )
    ws.record("train-ae", ["ae_model.json", "denoised.jsonl"])


def _reader(ws: Workspace, ctx: Context, consumer: str) -> Reader:
    ws.require("train-rr", consumer)
    ws.require("train-ae", consumer)
    return Reader(
        ctx.corpus,
        RowScorerModel.load(ws.path("rr_model.json")),
        SpanScorerModel.load(ws.path("ae_model.json")),
        ctx.scorer,
        ws.cfg.budget,
        ws.cfg.max_answer_len,
    )


def stage_tune_reranker(ws: Workspace) -> None:
    cfg = ws.cfg
    ctx = _load_ingested(ws, "tune-reranker")
    reader = _reader(ws, ctx, "tune-reranker")
    if not cfg.rsr:
        weights = RerankWeights((1.0, 0.0, 0.0), 1, 1, meta={"rsr": False})
    else:
        dev = [(q, ctx.corpus.table(q.table_id), q.answer_text) for q in ctx.questions["dev"] if q.table_id and q.answer_text]
        if not dev:
            raise ValueError("tune-reranker needs a non-empty dev split with table ids and answers")
        weights = tune_weights(dev, reader, simplex_grid(cfg.grid_step), cfg.k, cfg.k_spans)
    weights.meta["config_hash"] = cfg.hash()
    weights.save(ws.path("weights.json"))
    ws.record("tune-reranker", ["weights.json"])


def _resolve_table(q: Question, corpus: Corpus, index, k: int) -> list[str]:
    if q.table_id is not None:
        return [q.table_id]
    if index is None:
        raise DependencyError("open-domain question without table id; enable open_domain and run index-tables")
    return [tid for tid, _ in open_domain.retrieve_tables(q.text, index, k)]


def _predict_one(args) -> Prediction:
    q, table_ids, reader, weights = args
    preds = [answer_question(q, reader.corpus.table(tid), reader, weights) for tid in table_ids]
    best = preds[0]
    for p in preds[1:]:
        if combine_score(weights.w, p.row_score, p.s_st, p.s_en) > combine_score(
            weights.w, best.row_score, best.s_st, best.s_en
        ):
            best = p
    return best


def stage_predict(ws: Workspace) -> None:
    cfg = ws.cfg
    ctx = _load_ingested(ws, "predict")
    reader = _reader(ws, ctx, "predict")
    ws.require("tune-reranker", "predict")
    weights = RerankWeights.load(ws.path("weights.json"))
    index = None
    if cfg.open_domain:
        ws.require("index-tables", "predict")
        index = open_domain.BM25Index.load(ws.path("table_index.json"))
    jobs = [
        (q, _resolve_table(q, ctx.corpus, index, cfg.tables_k), reader, weights) for q in ctx.questions["test"]
    ]
    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            preds = list(pool.map(_predict_one, jobs, chunksize=max(1, len(jobs) // (4 * cfg.jobs))))
    else:
        preds = [_predict_one(j) for j in jobs]
    write_jsonl(ws.path("predictions.jsonl"), (p.to_dict() for p in preds))
    ws.record("predict", ["predictions.jsonl"])


def load_predictions(path: str | Path) -> list[Prediction]:
    with open(path, encoding="utf-8") as f:
        return [Prediction.from_dict(json.loads(line)) for line in f if line.strip()]


def stage_eval(ws: Workspace) -> dict:
    cfg = ws.cfg
    ws.require("predict", "eval")
    for upstream in ("ingest", "train-rr", "train-ae", "tune-reranker"):
        ws.require(upstream, "eval")
    corpus = load_corpus(
        ws.path("tables.linked.jsonl" if cfg.link and ws.has("link") else "tables.jsonl"), ws.path("passages.jsonl")
    )
    test = load_questions(ws.path("questions_test.jsonl"))
    preds = load_predictions(ws.path("predictions.jsonl"))
    positives = {}
    for q in test:
        if q.table_id and q.answer_text:
            bag = find_answer_rows(corpus.table(q.table_id), corpus, q.answer_text, q.id)
            if not bag.is_empty:
                positives[q.id] = bag.positive_rows
    hits = {}
    if cfg.open_domain and ws.has("index-tables"):
        index = open_domain.BM25Index.load(ws.path("table_index.json"))
        labelled = [q for q in test if q.table_id]
        ks = [int(k) for k in cfg.hits_k.split(",") if k.strip()]
        ranked = [[t for t, _ in open_domain.retrieve_tables(q.text, index, max(ks))] for q in labelled]
        hits = {k: hits_at_k(ranked, [q.table_id for q in labelled], k) for k in ks}
    report = evaluate(preds, test, positives, hits)
    out = report.to_dict()
    out["config_hash"] = cfg.hash()
    _dump(ws.path("report.json"), out)
    ws.path("report.txt").write_text(report.render() + "\n")
    ws.record("eval", ["report.json", "report.txt"])
    return out


STAGE_FUNCS = {
    "ingest": stage_ingest,
    "index-tables": stage_index_tables,
    "link": stage_link,
    "supervise": stage_supervise,
    "train-rr": stage_train_rr,
    "train-ae": stage_train_ae,
    "tune-reranker": stage_tune_reranker,
    "predict": stage_predict,
    "eval": stage_eval,
}


def default_stages(cfg: PipelineConfig) -> list[str]:
    out = ["ingest"]
    if cfg.open_domain:
        out.append("index-tables")
    if cfg.link:
        out.append("link")
    out += ["supervise", "train-rr", "train-ae", "tune-reranker", "predict", "eval"]
    return out


def run_pipeline(cfg: PipelineConfig, stages: Sequence[str] | None = None, force: bool = False) -> Workspace:
    stages = list(stages) if stages else default_stages(cfg)
    unknown = [s for s in stages if s not in STAGE_FUNCS]
    if unknown:
        raise ValueError(f"unknown stage(s): {', '.join(unknown)}")
    stages.sort(key=STAGES.index)
    ws = Workspace(cfg, force)
    for stage in stages:
        log.info("stage %s", stage)
        STAGE_FUNCS[stage](ws)
    return ws


# --- ablations --------------------------------------------------------------


def parse_toggle_set(spec: str) -> frozenset[str]:
    spec = spec.strip().lower()
    if spec in ("", "none", "-", "{}"):
        return frozenset()
    if spec == "all":
        return frozenset(TOGGLES)
    parts = frozenset(p.strip() for p in spec.replace("+", ",").split(",") if p.strip())
    bad = parts - set(TOGGLES)
    if bad:
        raise ValueError(f"unknown toggle(s): {', '.join(sorted(bad))}")
    return parts


def toggle_name(toggles: frozenset[str]) -> str:
    return "+".join(t for t in TOGGLES if t in toggles) or "none"


def ablation_matrix(cfg: PipelineConfig, toggle_sets: Sequence[Iterable[str]]) -> list[dict]:
    """Run the pipeline once per toggle set; rows follow the requested order."""
    seen: list[frozenset[str]] = []
    for ts in toggle_sets:
        ts = frozenset(ts)
        if ts in seen:
            log.warning("duplicate toggle set %s ignored", toggle_name(ts))
            continue
        seen.append(ts)
    base = cfg.out / "ablate"
    rows = []
    for ts in seen:
        sub = replace(cfg, out_dir=str(base / toggle_name(ts)), **{t: t in ts for t in TOGGLES})
        if sub.out.exists():
            shutil.rmtree(sub.out)
        ws = run_pipeline(sub)
        rep = json.loads(ws.path("report.json").read_text())
        rows.append({**{t: t in ts for t in TOGGLES}, "em": rep["total"]["em"], "f1": rep["total"]["f1"]})
    return rows


def render_ablation(rows: Sequence[dict]) -> str:
    head = " ".join(f"{t.upper():>4}" for t in TOGGLES) + f" {'EM':>7} {'F1':>7}"
    lines = [head]
    for r in rows:
        marks = " ".join(f"{'x' if r[t] else '':>4}" for t in TOGGLES)
        lines.append(f"{marks} {r['em']:7.2f} {r['f1']:7.2f}")
    return "\n".join(lines)


# --- statistics -------------------------------------------------------------


def context_lengths(
    questions: Sequence[Question], bags: dict[str, SupervisionBag], corpus: Corpus, budget: int = 512
) -> dict:
    """Untruncated extractor input lengths (question + row context) on the first positive row."""
    lengths = []
    for q in questions:
        bag = bags.get(q.id)
        if bag is None or bag.is_empty:
            continue
        r = min(bag.positive_rows)
        ctx = extraction_context(q, corpus.table(q.table_id), r, corpus, None, None)
        # [CLS] q [SEP] context [SEP]
        lengths.append(len(tokenize(q.text)) + len(ctx) + 3)
    n = len(lengths)
    return {
        "instances": n,
        "mean_tokens": sum(lengths) / n if n else 0.0,
        "over_budget": sum(x > budget for x in lengths) / n if n else 0.0,
        "budget": budget,
    }


def corpus_stats(ws: Workspace) -> dict:
    ctx = _load_ingested(ws, "stats")
    train = ctx.questions["train"]
    bags = {
        q.id: find_answer_rows(ctx.corpus.table(q.table_id), ctx.corpus, q.answer_text, q.id)
        for q in train
        if q.table_id and q.answer_text
    }
    hist = ambiguity_stats(list(bags.values()))
    out = {
        "tables": len(ctx.corpus.tables),
        "passages": len(ctx.corpus.passages),
        "questions": {s: len(ctx.questions[s]) for s in SPLITS},
        "ambiguity": hist.to_dict(),
        "context": context_lengths(train, bags, ctx.corpus, ws.cfg.budget),
    }
    _dump(ws.path("corpus_stats.json"), out)
    return out


def render_stats(stats: dict) -> str:
    c = stats["context"]
    lines = [
        f"tables: {stats['tables']}  passages: {stats['passages']}",
        "questions: " + "  ".join(f"{k}={v}" for k, v in stats["questions"].items()),
        f"multi-row fraction: {100 * stats['ambiguity']['multi_row_fraction']:.1f}%",
        f"extractor input: mean {c['mean_tokens']:.1f} tokens, {100 * c['over_budget']:.1f}% over {c['budget']}",
    ]
    return "\n".join(lines)
