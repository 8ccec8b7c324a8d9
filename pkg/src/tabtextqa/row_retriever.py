"""Row scoring with a multi-instance loss over answer-bearing rows.

The reference scorer is a logistic model over lexical question/row overlap
features. Training handles noisy row labels: a question's positive bag B
holds every row containing the answer string, and the loss only asks that
*one* of them score high, while every other row must score low.
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
    DEFAULT_BUDGET,
    SENTINELS,
    SimilarityScorer,
    TokenSequence,
    tokenize,
    filter_passages,
    linearize_for_retrieval,
    retrieval_fixed_cost,
)
from .corpus import Corpus, Question, Table, split_table
from .supervision import SupervisionBag

EPS = 1e-7
CHECKPOINT_FORMAT = "tabtextqa.row-retriever"
CHECKPOINT_VERSION = 1

STOPWORDS = frozenset(
    """a an the of in on at to for from by with and or is are was were be been
    what which who whom whose when where why how that this these those it its
    as did does do has have had his her their they he she""".split()
)

FEATURES = (
    "coverage",
    "overlap_count",
    "bigram_overlap",
    "seg_header",
    "seg_cell",
    "seg_meta",
    "seg_passage",
    "header_match",
    "passage_density",
    "n_passages",
    "passage_len",
)


def content_tokens(tokens: Sequence[str]) -> list[str]:
    return [t for t in tokens if t not in STOPWORDS]


def featurize(x: TokenSequence, q: Question | None = None) -> dict[str, float]:
    """Sparse lexical features of a linearized (question, row) pair.

    The question is read from ``x``'s question segment; ``q`` is accepted
    for interface symmetry and unused when ``x`` carries it.
    """
    q_toks = [t for t, o in zip(x.tokens, x.origin) if o.kind == "question"]
    if not q_toks and q is not None:
        q_toks = tokenize(q.text)
    q_content = set(content_tokens(q_toks))
    by_kind: dict[str, set[str]] = {"header": set(), "cell": set(), "meta": set(), "passage": set()}
    row_tokens: list[str] = []
    passages = set()
    passage_len = 0
    for tok, o in zip(x.tokens, x.origin):
        if o.kind in by_kind:
            by_kind[o.kind].add(tok)
            row_tokens.append(tok)
        if o.kind == "passage":
            passages.add(o.key)
            passage_len += 1
    row_set = set(row_tokens)
    feats: dict[str, float] = {}
    if q_content:
        n = len(q_content)
        hit = q_content & row_set
        if hit:
            feats["coverage"] = len(hit) / n
            feats["overlap_count"] = math.log1p(len(hit))
        for kind, toks in by_kind.items():
            k = len(q_content & toks)
            if k:
                feats[f"seg_{kind}"] = k / n
        header_hits = len(q_content & by_kind["header"])
        if header_hits:
            feats["header_match"] = float(header_hits)
        p_hits = sum(1 for t, o in zip(x.tokens, x.origin) if o.kind == "passage" and t in q_content)
        if p_hits:
            feats["passage_density"] = 10.0 * p_hits / max(passage_len, 1)
    q_bigrams = {b for b in zip(q_toks, q_toks[1:]) if not (set(b) <= STOPWORDS)}
    if q_bigrams:
        row_bigrams = set()
        prev = None
        for tok, o in zip(x.tokens, x.origin):
            if o.kind in by_kind and prev is not None and prev[1] == o:
                row_bigrams.add((prev[0], tok))
            prev = (tok, o) if tok not in SENTINELS else None
        k = len(q_bigrams & row_bigrams)
        if k:
            feats["bigram_overlap"] = math.log1p(k)
    if passages:
        feats["n_passages"] = math.log1p(len(passages))
        feats["passage_len"] = math.log1p(passage_len) / math.log(DEFAULT_BUDGET)
    return feats


def _dense(feats: Mapping[str, float]) -> np.ndarray:
    return np.array([feats.get(name, 0.0) for name in FEATURES])


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


@dataclass
class RowScorerModel:
    weights: dict[str, float] = field(default_factory=lambda: {f: 0.0 for f in FEATURES})
    bias: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def vector(self) -> np.ndarray:
        return _dense(self.weights)

    def logits(self, X: np.ndarray) -> np.ndarray:
        return X @ self.vector + self.bias

    def score(self, x: TokenSequence) -> float:
        return float(_sigmoid(self.logits(_dense(featurize(x))[None, :]))[0])

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "weights": {k: self.weights[k] for k in FEATURES},
            "bias": self.bias,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RowScorerModel":
        if d.get("format") != CHECKPOINT_FORMAT or d.get("version") != CHECKPOINT_VERSION:
            raise ValueError("not a row retriever checkpoint (or unsupported version)")
        return cls(dict(d["weights"]), float(d["bias"]), dict(d.get("meta", {})))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "RowScorerModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


# --- loss -------------------------------------------------------------------


def _bce_pos(p: float) -> float:
    return -math.log(min(max(p, EPS), 1 - EPS))


def _bce_neg(p: float) -> float:
    return -math.log(1 - min(max(p, EPS), 1 - EPS))


def mil_loss(bag_scores: Mapping[int, float], positives: set[int] | Sequence[int]) -> float:
    """min over positive rows of -ln f, plus -ln(1 - f) summed over the rest."""
    positives = set(positives)
    if not positives:
        raise ValueError("empty positive bag")
    pos = min(_bce_pos(bag_scores[r]) for r in positives)
    return pos + sum(_bce_neg(p) for r, p in bag_scores.items() if r not in positives)


def naive_loss(bag_scores: Mapping[int, float], positives: set[int] | Sequence[int]) -> float:
    """Plain cross-entropy that labels every answer-bearing row positive."""
    positives = set(positives)
    return sum(_bce_pos(p) if r in positives else _bce_neg(p) for r, p in bag_scores.items())


def bag_loss_and_grad(
    X: np.ndarray,
    w: np.ndarray,
    b: float,
    positive: np.ndarray,
    mode: str = "mil",
    use_positive: bool = True,
) -> tuple[float, np.ndarray, float]:
    """Loss and gradient (w.r.t. weights and bias) for one question's rows.

    ``positive`` is a boolean mask over rows. In ``mil`` mode the gradient of
    the positive term flows through the best-scoring positive only; with
    ``use_positive=False`` only the negative rows contribute.
    """
    p = _sigmoid(X @ w + b)
    pc = np.clip(p, EPS, 1 - EPS)
    dz = np.where(positive, 0.0, p)
    loss = float(-np.log(1 - pc[~positive]).sum())
    if use_positive and positive.any():
        if mode == "mil":
            idx = np.flatnonzero(positive)
            best = idx[np.argmax(p[idx])]
            loss += float(-np.log(pc[best]))
            dz[best] = p[best] - 1.0
        elif mode == "naive":
            loss += float(-np.log(pc[positive]).sum())
            dz[positive] = p[positive] - 1.0
        else:
            raise ValueError(f"unknown loss mode {mode!r}")
    return loss, X.T @ dz, float(dz.sum())


# --- training ---------------------------------------------------------------


@dataclass
class RowTrainInstance:
    question_id: str
    table_id: str
    bag: SupervisionBag
    linearizations: dict[int, TokenSequence]
    features: np.ndarray | None = None

    def matrix(self) -> np.ndarray:
        if self.features is None:
            rows = sorted(self.linearizations)
            self.features = np.stack([_dense(featurize(self.linearizations[r])) for r in rows])
        return self.features

    def positive_mask(self) -> np.ndarray:
        pos = self.bag.positive_rows
        return np.array([r in pos for r in sorted(self.linearizations)])


@dataclass
class RowTrainConfig:
    epochs: int = 5
    learning_rate: float = 0.1
    l2: float = 1e-4
    seed: int = 0
    loss: str = "mil"
    # max |B| admitted per epoch (None = all); epochs beyond the list admit all
    curriculum: tuple[int | None, ...] = (1, 1)


def linearize_rows(
    q: Question,
    t: Table,
    corpus: Corpus,
    scorer: SimilarityScorer | None = None,
    budget: int = DEFAULT_BUDGET,
) -> dict[int, TokenSequence]:
    out = {}
    for unit in split_table(t):
        r = unit.row_index
        kept = filter_passages(
            q, unit, corpus, scorer, budget, fixed_cost=retrieval_fixed_cost(q, t, r)
        )
        out[r] = linearize_for_retrieval(q, t, r, kept, corpus, budget)
    return out


def build_row_instances(
    questions: Sequence[Question],
    bags: Mapping[str, SupervisionBag],
    corpus: Corpus,
    scorer: SimilarityScorer | None = None,
    budget: int = DEFAULT_BUDGET,
) -> list[RowTrainInstance]:
    out = []
    for q in questions:
        bag = bags.get(q.id)
        if bag is None or bag.is_empty:
            continue
        t = corpus.table(bag.table_id)
        out.append(RowTrainInstance(q.id, t.id, bag, linearize_rows(q, t, corpus, scorer, budget)))
    return out


def train_row_retriever(
    instances: Sequence[RowTrainInstance], config: RowTrainConfig | None = None
) -> RowScorerModel:
    config = config or RowTrainConfig()
    usable = [d for d in instances if not d.bag.is_empty]
    if not usable:
        raise ValueError("no training instance has a non-empty positive bag")
    rng = random.Random(config.seed)
    w = np.zeros(len(FEATURES))
    b = 0.0
    history = []
    for epoch in range(config.epochs):
        limit = config.curriculum[epoch] if epoch < len(config.curriculum) else None
        order = list(range(len(usable)))
        rng.shuffle(order)
        total = 0.0
        for i in order:
            inst = usable[i]
            mask = inst.positive_mask()
            admitted = config.loss != "mil" or limit is None or mask.sum() <= limit
            loss, gw, gb = bag_loss_and_grad(inst.matrix(), w, b, mask, config.loss, admitted)
            total += loss
            w -= config.learning_rate * (gw + config.l2 * w)
            b -= config.learning_rate * gb
        history.append(round(total / len(usable), 6))
    return RowScorerModel(
        {name: float(v) for name, v in zip(FEATURES, w)},
        float(b),
        {
            "seed": config.seed,
            "epochs": config.epochs,
            "loss": config.loss,
            "curriculum": list(config.curriculum),
            "learning_rate": config.learning_rate,
            "epoch_loss": history,
        },
    )


# --- inference --------------------------------------------------------------


def score_rows(linearizations: Mapping[int, TokenSequence], model: RowScorerModel) -> dict[int, float]:
    rows = sorted(linearizations)
    X = np.stack([_dense(featurize(linearizations[r])) for r in rows])
    return {r: float(s) for r, s in zip(rows, _sigmoid(model.logits(X)))}


def top_k(scores: Mapping[int, float], k: int) -> list[tuple[int, float]]:
    if k < 1:
        raise ValueError("K must be at least 1")
    return sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:k]


def retrieve_rows(
    q: Question,
    t: Table,
    model: RowScorerModel,
    k: int,
    corpus: Corpus,
    scorer: SimilarityScorer | None = None,
    budget: int = DEFAULT_BUDGET,
) -> list[tuple[int, float]]:
    return top_k(score_rows(linearize_rows(q, t, corpus, scorer, budget), model), k)
