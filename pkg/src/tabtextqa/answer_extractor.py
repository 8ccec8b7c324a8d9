"""Span extraction over a linearized row, with multi-span denoising.

Spans are scored as ``s_st[start] + s_en[end]`` where both token scores are
linear in per-token features. Training uses the usual start/end
cross-entropy; what is distinctive is how the gold span is chosen when the
answer string occurs several times in the evidence row: an initial model
trained on unambiguous instances picks the best-scoring occurrence, and a
final model is trained on the denoised set.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .context import (
    ANSWERABLE_KINDS,
    DEFAULT_BUDGET,
    Segment,
    SimilarityScorer,
    TokenSequence,
    extraction_fixed_cost,
    filter_passages,
    linearize_for_extraction,
    tokenize,
)
from .corpus import Corpus, Question, Table, split_table
from .row_retriever import STOPWORDS, RowScorerModel, linearize_rows, score_rows
from .supervision import SpanRef, SupervisionBag

CHECKPOINT_FORMAT = "tabtextqa.answer-extractor"
CHECKPOINT_VERSION = 1
DEFAULT_MAX_ANSWER_LEN = 30

TOKEN_FEATURES = (
    "bias_cell",
    "bias_passage",
    "in_question",
    "stopword",
    "numeric",
    "left3",
    "right3",
    "window8",
    "seg_first",
    "seg_last",
    "header_cell",
    "header_distance",
    "passage_rank",
)


def token_features(question: str, context: TokenSequence) -> np.ndarray:
    """Per-token feature matrix of shape (len(context), len(TOKEN_FEATURES))."""
    q = {t for t in tokenize(question) if t not in STOPWORDS}
    nq = max(len(q), 1)
    n = len(context)
    toks, origin = context.tokens, context.origin
    in_q = np.array([t in q for t in toks], dtype=float)
    # window counts restricted to the token's own segment
    seg_id = np.zeros(n, dtype=int)
    for i in range(1, n):
        seg_id[i] = seg_id[i - 1] + (origin[i] != origin[i - 1])
    F = np.zeros((n, len(TOKEN_FEATURES)))
    col = {name: k for k, name in enumerate(TOKEN_FEATURES)}

    def window(i, lo, hi):
        a, b = max(i + lo, 0), min(i + hi, n - 1)
        return sum(in_q[j] for j in range(a, b + 1) if j != i and seg_id[j] == seg_id[i])

    header_hit = {}
    for i, o in enumerate(origin):
        if o.kind == "header" and toks[i] in q:
            header_hit[o.key] = True
    match_pos = [i for i, o in enumerate(origin) if o.kind == "cell" and header_hit.get(o.key)]
    passage_order: dict = {}
    for i, (tok, o) in enumerate(zip(toks, origin)):
        if o.kind not in ANSWERABLE_KINDS:
            continue
        F[i, col["bias_cell" if o.kind == "cell" else "bias_passage"]] = 1.0
        F[i, col["in_question"]] = in_q[i]
        F[i, col["stopword"]] = tok in STOPWORDS
        F[i, col["numeric"]] = tok.isdigit()
        F[i, col["left3"]] = window(i, -3, -1) / nq
        F[i, col["right3"]] = window(i, 1, 3) / nq
        F[i, col["window8"]] = window(i, -8, 8) / nq
        F[i, col["seg_first"]] = i == 0 or seg_id[i - 1] != seg_id[i]
        F[i, col["seg_last"]] = i == n - 1 or seg_id[i + 1] != seg_id[i]
        if o.kind == "cell" and header_hit.get(o.key):
            F[i, col["header_cell"]] = 1.0
        if match_pos:
            d = min(abs(i - j) for j in match_pos)
            F[i, col["header_distance"]] = 1.0 / (1.0 + d / 10.0)
        if o.kind == "passage":
            rank = passage_order.setdefault(o.key, len(passage_order))
            F[i, col["passage_rank"]] = 1.0 / (1.0 + rank)
    return F


def answerable_mask(context: TokenSequence) -> np.ndarray:
    return np.array([o.kind in ANSWERABLE_KINDS for o in context.origin], dtype=bool)


@dataclass
class SpanScorerModel:
    start_weights: np.ndarray = field(default_factory=lambda: np.zeros(len(TOKEN_FEATURES)))
    end_weights: np.ndarray = field(default_factory=lambda: np.zeros(len(TOKEN_FEATURES)))
    start_bias: float = 0.0
    end_bias: float = 0.0
    meta: dict = field(default_factory=dict)

    def token_scores(self, F: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return F @ self.start_weights + self.start_bias, F @ self.end_weights + self.end_bias

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "features": list(TOKEN_FEATURES),
            "start_weights": [float(v) for v in self.start_weights],
            "end_weights": [float(v) for v in self.end_weights],
            "start_bias": self.start_bias,
            "end_bias": self.end_bias,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SpanScorerModel":
        if d.get("format") != CHECKPOINT_FORMAT or d.get("version") != CHECKPOINT_VERSION:
            raise ValueError("not an answer extractor checkpoint (or unsupported version)")
        if list(d["features"]) != list(TOKEN_FEATURES):
            raise ValueError("checkpoint feature layout does not match this build")
        return cls(
            np.array(d["start_weights"], dtype=float),
            np.array(d["end_weights"], dtype=float),
            float(d["start_bias"]),
            float(d["end_bias"]),
            dict(d.get("meta", {})),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SpanScorerModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class ScoredSpan:
    row: int
    start: int
    end: int
    surface: str
    provenance: Segment
    s_st: float
    s_en: float

    @property
    def score(self) -> float:
        return self.s_st + self.s_en


# --- candidates and scoring --------------------------------------------------


def candidate_spans(context: TokenSequence, max_len: int = DEFAULT_MAX_ANSWER_LEN) -> np.ndarray:
    """All (start, end) pairs inside one answerable segment, end - start < max_len."""
    origin = context.origin
    n = len(origin)
    out = []
    i = 0
    while i < n:
        j = i
        while j + 1 < n and origin[j + 1] == origin[i]:
            j += 1
        if origin[i].kind in ANSWERABLE_KINDS:
            for a in range(i, j + 1):
                for b in range(a, min(a + max_len, j + 1)):
                    out.append((a, b))
        i = j + 1
    return np.array(out, dtype=int).reshape(-1, 2)


def rank_spans(
    s_st: np.ndarray, s_en: np.ndarray, cands: np.ndarray, k: int
) -> list[tuple[int, int]]:
    if not len(cands):
        return []
    total = s_st[cands[:, 0]] + s_en[cands[:, 1]]
    order = np.lexsort((cands[:, 1] - cands[:, 0], cands[:, 0], -total))
    return [tuple(int(v) for v in cands[i]) for i in order[:k]]


def score_spans(
    question: str,
    context: TokenSequence,
    model: SpanScorerModel,
    k: int = 5,
    row: int = -1,
    max_len: int = DEFAULT_MAX_ANSWER_LEN,
) -> list[ScoredSpan]:
    if k < 1:
        raise ValueError("K' must be at least 1")
    s_st, s_en = model.token_scores(token_features(question, context))
    out = []
    for a, b in rank_spans(s_st, s_en, candidate_spans(context, max_len), k):
        out.append(
            ScoredSpan(row, a, b, context.surface(a, b), context.origin[a], float(s_st[a]), float(s_en[b]))
        )
    return out


# --- training data ----------------------------------------------------------


@dataclass
class ExtractionInstance:
    question_id: str
    table_id: str
    row: int
    question: str
    context: TokenSequence
    gold_spans: list[tuple[int, int]]
    features: np.ndarray | None = None

    def matrix(self) -> np.ndarray:
        if self.features is None:
            self.features = token_features(self.question, self.context)
        return self.features

    def with_gold(self, spans: list[tuple[int, int]]) -> "ExtractionInstance":
        return ExtractionInstance(
            self.question_id, self.table_id, self.row, self.question, self.context, spans, self.features
        )


def map_spans(context: TokenSequence, spans: Sequence[SpanRef]) -> list[tuple[int, int]]:
    """Place supervision spans in context coordinates, dropping truncated ones."""
    out = []
    for s in spans:
        base = context.segment_start(s.source)
        if base is None:
            continue
        if s.end_token < context.segment_length(s.source):
            out.append((base + s.start_token, base + s.end_token))
    return sorted(out)


def extraction_context(
    q: Question,
    t: Table,
    r: int,
    corpus: Corpus,
    scorer: SimilarityScorer | None = None,
    budget: int | None = DEFAULT_BUDGET,
) -> TokenSequence:
    unit = split_table(t)[r]
    if budget is None:
        kept = list(unit.linked_passages)
    else:
        kept = filter_passages(
            q, unit, corpus, scorer, budget, fixed_cost=extraction_fixed_cost(t, r), overhead=0
        )
    return linearize_for_extraction(t, r, kept, corpus, budget)


def select_feedback_row(
    bag: SupervisionBag,
    rr_model: RowScorerModel,
    q: Question,
    t: Table,
    corpus: Corpus,
    scorer: SimilarityScorer | None = None,
    budget: int = DEFAULT_BUDGET,
) -> int:
    """The answer-bearing row the row retriever finds most probable."""
    positives = bag.positive_rows
    if not positives:
        raise ValueError("empty positive bag")
    if len(positives) == 1:
        return next(iter(positives))
    scores = score_rows(linearize_rows(q, t, corpus, scorer, budget), rr_model)
    return min(positives, key=lambda r: (-scores[r], r))


def build_extraction_instances(
    questions: Sequence[Question],
    bags: Mapping[str, SupervisionBag],
    corpus: Corpus,
    rr_model: RowScorerModel | None = None,
    feedback: bool = True,
    scorer: SimilarityScorer | None = None,
    budget: int = DEFAULT_BUDGET,
) -> list[ExtractionInstance]:
    """One instance per question (retriever feedback) or per answer-bearing row."""
    out = []
    for q in questions:
        bag = bags.get(q.id)
        if bag is None or bag.is_empty:
            continue
        t = corpus.table(bag.table_id)
        if feedback:
            if rr_model is None:
                raise ValueError("retriever feedback needs a row retriever model")
            rows = [select_feedback_row(bag, rr_model, q, t, corpus, scorer, budget)]
        else:
            rows = sorted(bag.positive_rows)
        for r in rows:
            ctx = extraction_context(q, t, r, corpus, scorer, budget)
            gold = map_spans(ctx, bag.spans_per_row[r])
            if gold:
                out.append(ExtractionInstance(q.id, t.id, r, q.text, ctx, gold))
    return out


# --- training ---------------------------------------------------------------


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max()
    return z - m - math.log(np.exp(z - m).sum())


def span_loss_and_grad(
    F: np.ndarray,
    mask: np.ndarray,
    model: SpanScorerModel,
    gold: tuple[int, int],
) -> tuple[float, tuple[np.ndarray, np.ndarray, float, float]]:
    """Start + end cross-entropy over answerable positions, and its gradient."""
    Fm = F[mask]
    pos = np.flatnonzero(mask)
    gs, ge = int(np.searchsorted(pos, gold[0])), int(np.searchsorted(pos, gold[1]))
    s_st, s_en = model.token_scores(Fm)
    lp_st, lp_en = _log_softmax(s_st), _log_softmax(s_en)
    loss = -lp_st[gs] - lp_en[ge]
    d_st = np.exp(lp_st)
    d_st[gs] -= 1.0
    d_en = np.exp(lp_en)
    d_en[ge] -= 1.0
    return float(loss), (Fm.T @ d_st, Fm.T @ d_en, float(d_st.sum()), float(d_en.sum()))


@dataclass
class ExtractorTrainConfig:
    epochs: int = 5
    learning_rate: float = 0.05
    l2: float = 1e-4
    seed: int = 0
    max_answer_len: int = DEFAULT_MAX_ANSWER_LEN


def train_answer_extractor(
    instances: Sequence[ExtractionInstance], config: ExtractorTrainConfig | None = None
) -> SpanScorerModel:
    """Fit start/end scorers; the first gold span of each instance is the target."""
    config = config or ExtractorTrainConfig()
    if not instances:
        raise ValueError("no extraction instances to train on")
    rng = random.Random(config.seed)
    model = SpanScorerModel()
    masks = [answerable_mask(d.context) for d in instances]
    history = []
    for _ in range(config.epochs):
        order = list(range(len(instances)))
        rng.shuffle(order)
        total = 0.0
        for i in order:
            inst = instances[i]
            loss, (g_st, g_en, gb_st, gb_en) = span_loss_and_grad(
                inst.matrix(), masks[i], model, inst.gold_spans[0]
            )
            total += loss
            lr = config.learning_rate
            model.start_weights -= lr * (g_st + config.l2 * model.start_weights)
            model.end_weights -= lr * (g_en + config.l2 * model.end_weights)
            model.start_bias -= lr * gb_st
            model.end_bias -= lr * gb_en
        history.append(round(total / len(instances), 6))
    model.meta = {
        "seed": config.seed,
        "epochs": config.epochs,
        "learning_rate": config.learning_rate,
        "max_answer_len": config.max_answer_len,
        "train_size": len(instances),
        "epoch_loss": history,
    }
    return model


def best_gold_span(inst: ExtractionInstance, model: SpanScorerModel) -> tuple[int, int]:
    """Highest-scoring span among the instance's gold occurrences (earliest on ties)."""
    s_st, s_en = model.token_scores(inst.matrix())
    return max(inst.gold_spans, key=lambda s: (s_st[s[0]] + s_en[s[1]], -s[0], s[0] - s[1]))


@dataclass
class MultiSpanResult:
    model: SpanScorerModel
    initial_model: SpanScorerModel | None
    single: list[ExtractionInstance]
    denoised: list[ExtractionInstance]

    @property
    def train_size(self) -> int:
        return len(self.single) + len(self.denoised)


def multi_span_training(
    instances: Sequence[ExtractionInstance],
    config: ExtractorTrainConfig | None = None,
    mode: str = "mst",
) -> MultiSpanResult:
    """Two-stage training. ``mode="first"`` is the leftmost-span control."""
    config = config or ExtractorTrainConfig()
    single = [d for d in instances if len(d.gold_spans) == 1]
    multi = [d for d in instances if len(d.gold_spans) > 1]
    if mode == "first":
        denoised = [d.with_gold([d.gold_spans[0]]) for d in multi]
        final = train_answer_extractor(single + denoised, config)
        final.meta["mode"] = "first"
        return MultiSpanResult(final, None, single, denoised)
    if mode != "mst":
        raise ValueError(f"unknown span training mode {mode!r}")
    if not single:
        raise ValueError("no single-span instances for initial model")
    initial = train_answer_extractor(single, config)
    denoised = [d.with_gold([best_gold_span(d, initial)]) for d in multi]
    final = train_answer_extractor(single + denoised, config)
    final.meta["mode"] = "mst"
    final.meta["denoised"] = len(denoised)
    return MultiSpanResult(final, initial, single, denoised)


def train_answer_extractor_mst(
    instances: Sequence[ExtractionInstance], config: ExtractorTrainConfig | None = None
) -> SpanScorerModel:
    return multi_span_training(instances, config, "mst").model
