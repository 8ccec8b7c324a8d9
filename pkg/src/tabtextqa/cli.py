"""Command-line entry point: ``tabtextqa <subcommand> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 missing upstream artifact.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import open_domain, pipeline
from .corpus import CorpusError, load_questions, write_jsonl
from .metrics import hits_at_k
from .synthbench import SynthConfig, generate

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DEPENDENCY = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _key_value(s: str) -> tuple[str, str]:
    if "=" not in s:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {s!r}")
    k, v = s.split("=", 1)
    return k.strip(), v.strip()


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("-c", "--config", help="flat key = value config file")
    p.add_argument("--set", dest="overrides", action="append", type=_key_value, default=[], metavar="KEY=VALUE")
    p.add_argument("-o", "--out", help="artifact directory (config key out_dir)")
    p.add_argument("--seed", type=int)
    p.add_argument("--budget", type=int, help="token budget for row contexts")
    p.add_argument("--jobs", type=int, help="worker processes for prediction")
    p.add_argument("--force", action="store_true", help="accept artifacts from a different config")
    for t in pipeline.TOGGLES:
        p.add_argument(f"--{t}", dest=t, action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _config(args) -> pipeline.PipelineConfig:
    overrides = dict(args.overrides)
    for key in ("seed", "budget", "jobs", *pipeline.TOGGLES):
        if getattr(args, key, None) is not None:
            overrides[key] = getattr(args, key)
    if args.out:
        overrides["out_dir"] = args.out
    try:
        return pipeline.load_config(args.config, overrides)
    except (ValueError, TypeError) as e:
        raise UsageError(str(e)) from e


def _cmd_stage(args) -> int:
    cfg = _config(args)
    pipeline.run_pipeline(cfg, [args.command], force=args.force)
    if args.command == "eval":
        print(Path(cfg.out, "report.txt").read_text(), end="")
    elif args.command == "supervise":
        print(Path(cfg.out, "stats.txt").read_text(), end="")
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = _config(args)
    stages = args.stages.split(",") if args.stages else None
    ws = pipeline.run_pipeline(cfg, stages, force=args.force)
    if ws.path("report.txt").exists() and (stages is None or "eval" in stages):
        print(ws.path("report.txt").read_text(), end="")
    return EXIT_OK


def _cmd_stats(args) -> int:
    cfg = _config(args)
    ws = pipeline.Workspace(cfg, args.force)
    stats = pipeline.corpus_stats(ws)
    print(json.dumps(stats, indent=1, sort_keys=True) if args.json else pipeline.render_stats(stats))
    return EXIT_OK


def _cmd_retrieve(args) -> int:
    cfg = _config(args)
    ws = pipeline.Workspace(cfg, args.force)
    ws.require("index-tables", "retrieve")
    index = open_domain.BM25Index.load(ws.path("table_index.json"))
    questions = load_questions(args.questions or ws.path("questions_test.jsonl"))
    ranked = [open_domain.retrieve_tables(q.text, index, args.k) for q in questions]
    write_jsonl(
        ws.path("retrieval.jsonl"),
        ({"question_id": q.id, "tables": [[t, s] for t, s in r]} for q, r in zip(questions, ranked)),
    )
    labelled = [(q.table_id, [t for t, _ in r]) for q, r in zip(questions, ranked) if q.table_id]
    for k in sorted({1, min(5, args.k), args.k}):
        h = hits_at_k([r for _, r in labelled], [g for g, _ in labelled], k)
        print(f"HITS@{k}: {100 * h:.1f}%")
    return EXIT_OK


def _cmd_synth(args) -> int:
    params = dict(args.params)
    for key in ("passages_per_row", "passage_len", "splits"):
        if key in params:
            params[key] = [float(x) if key == "splits" else int(x) for x in params[key].split(",")]
    for f, kind in SynthConfig.__annotations__.items():
        if f in params and isinstance(params[f], str):
            params[f] = {"int": int, "float": float}.get(kind, str)(params[f])
    if args.seed is not None:
        params["seed"] = args.seed
    if args.n_tables is not None:
        params["n_tables"] = args.n_tables
    try:
        config = SynthConfig.from_dict(params)
    except TypeError as e:
        raise UsageError(str(e)) from e
    bench = generate(config)
    out = Path(args.out)
    paths = bench.write(out)
    cfg = pipeline.PipelineConfig(
        tables="tables.jsonl",
        passages="passages.jsonl",
        train_questions="questions_train.jsonl",
        dev_questions="questions_dev.jsonl",
        test_questions="questions_test.jsonl",
        out_dir="run",
        seed=config.seed,
    )
    pipeline.write_config(cfg, out / "pipeline.ini")
    print(f"wrote {len(bench.corpus.tables)} tables, {len(bench.questions)} questions to {out}")
    print(f"config: {out / 'pipeline.ini'}")
    return EXIT_OK if paths else EXIT_DATA


def _cmd_ablate(args) -> int:
    cfg = _config(args)
    try:
        sets = [pipeline.parse_toggle_set(s) for s in (args.toggles or ["none", "mil", "mil+rf", "all"])]
    except ValueError as e:
        raise UsageError(str(e)) from e
    rows = pipeline.ablation_matrix(cfg, sets)
    text = pipeline.render_ablation(rows)
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / "ablation.json").write_text(json.dumps(rows, indent=1, sort_keys=True) + "\n")
    (cfg.out / "ablation.txt").write_text(text + "\n")
    print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="tabtextqa", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "ingest": "validate and copy corpus and question files",
        "index-tables": "build the BM25 table index",
        "link": "relink table cells to passages by BM25",
        "supervise": "match answers to rows and spans",
        "train-rr": "train the row retriever",
        "train-ae": "train the answer extractor",
        "tune-reranker": "grid-search reranking weights on dev",
        "predict": "answer test questions",
        "eval": "score predictions",
    }
    for name in pipeline.STAGES:
        s = sub.add_parser(name, parents=[common], help=helps[name])
        s.set_defaults(func=_cmd_stage)
    s = sub.add_parser("run", parents=[common], help="run all stages in order")
    s.add_argument("--stages", help="comma-separated subset of stages")
    s.set_defaults(func=_cmd_run)
    s = sub.add_parser("stats", parents=[common], help="corpus and ambiguity statistics")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=_cmd_stats)
    s = sub.add_parser("retrieve", parents=[common], help="retrieve tables for questions")
    s.add_argument("--questions", help="question file (default: ingested test split)")
    s.add_argument("-k", type=int, default=10)
    s.set_defaults(func=_cmd_retrieve)
    s = sub.add_parser("ablate", parents=[common], help="run a toggle matrix")
    s.add_argument("--toggles", action="append", metavar="SET", help="e.g. none, mil, mil+rf, all")
    s.set_defaults(func=_cmd_ablate)
    s = sub.add_parser("synth", help="generate a synthetic benchmark")
    s.add_argument("-o", "--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--n-tables", type=int)
    s.add_argument("--param", dest="params", action="append", type=_key_value, default=[], metavar="KEY=VALUE")
    s.add_argument("-v", "--verbose", action="store_true")
    s.set_defaults(func=_cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return args.func(args)
    except UsageError as e:
        print(f"tabtextqa: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except pipeline.DependencyError as e:
        print(f"tabtextqa: {e}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except (CorpusError, ValueError, KeyError, OSError, json.JSONDecodeError) as e:
        print(f"tabtextqa: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
