"""``reasongr`` command line: ingest, build, train, eval, compare, query, prompt-preview."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import baseline, prompts, training
from .corpus import CorpusError, Document, build_registry, flatten_table, ingest_corpus
from .decode import TokenTrie
from .loss import PenaltyWeights
from .metrics import QueryRecord, aggregate, reports_to_csv
from .model import CheckpointError, load_checkpoint
from .model.checkpoint import atomic_write_bytes

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_CORPUS = 4
EXIT_CHECKPOINT = 5
EXIT_CONFIG = 6
EXIT_TRAINING = 7
EXIT_DATA = 8

EXIT_CODES_HELP = """exit codes:
  0  success
  1  internal error
  2  bad or missing flag (usage)
  3  input file not found
  4  corpus parse or schema error
  5  unreadable or incompatible checkpoint
  6  invalid config or penalty weights
  7  training aborted (non-finite loss)
  8  data mismatch (empty split, corpus/checkpoint disagreement)

errors are printed to stderr as one line: reasongr: error <code> <kind>: <message>"""

MODES = [m.value for m in prompts.Mode]


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code, self.kind = code, kind


def _fail(code: int, kind: str, message: str) -> CliError:
    return CliError(code, kind, message)


def _require(args, *names: str) -> None:
    for name in names:
        if getattr(args, name.replace("-", "_")) is None:
            raise _fail(EXIT_USAGE, "usage", f"--{name} is required for '{args.command}'")


def _existing(path: str | None, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise _fail(EXIT_MISSING_FILE, "missing-file", f"{what} not found: {path}")
    return p


def _load_corpus(path: str) -> list[Document]:
    p = _existing(path, "corpus")
    try:
        return ingest_corpus(p)
    except CorpusError as exc:
        raise _fail(EXIT_CORPUS, "corpus", str(exc)) from exc


def _load_ckpt(path: str):
    p = _existing(path, "checkpoint")
    try:
        return load_checkpoint(p)
    except (CheckpointError, KeyError) as exc:
        raise _fail(EXIT_CHECKPOINT, "checkpoint", str(exc)) from exc


def _config(args) -> training.TrainConfig:
    try:
        cfg = training.load_config(_existing(args.config, "config")) if args.config else training.TrainConfig()
        changes = {}
        if args.seed is not None:
            changes["seed"] = args.seed
        if args.mode is not None:
            changes["mode"] = args.mode
        if args.penalty_weights is not None:
            w = PenaltyWeights.parse(args.penalty_weights)
            changes.update(w_em=w.w_em, w_pm=w.w_pm, w_sm=w.w_sm, w_s=w.w_s)
        return cfg.replace(**changes) if changes else cfg
    except (training.ConfigError, ValueError) as exc:
        raise _fail(EXIT_CONFIG, "config", str(exc)) from exc


def _emit(text: str, out: str | None) -> None:
    if out:
        atomic_write_bytes(out, text.encode("utf-8"))
    else:
        sys.stdout.write(text)


def _ckpt_setup(ckpt, args) -> training.Setup:
    setup = training.setup_from_checkpoint(ckpt)
    if args.mode is not None and args.mode != setup.config.mode:
        setup.config = setup.config.replace(mode=args.mode)
    return setup


def _split_queries(setup: training.Setup, split: str):
    queries = setup.splits.get(split, [])
    if not queries:
        raise _fail(EXIT_DATA, "data", f"split '{split}' is empty")
    return queries


# ---------------------------------------------------------------- commands

def cmd_ingest(args) -> int:
    _require(args, "corpus")
    docs = _load_corpus(args.corpus)
    cells = sum(len(flatten_table(d)) for d in docs)
    questions = sum(d.question is not None for d in docs)
    unknown = sum(d.company == "unk" for d in docs)
    stats = {"docs": len(docs), "table_cells": cells, "questions": questions, "unparsed_ids": unknown}
    _emit(json.dumps(stats) + "\n", args.out)
    return EXIT_OK


def cmd_build(args) -> int:
    _require(args, "corpus", "out")
    cfg = _config(args)
    docs = _load_corpus(args.corpus)
    setup = training.prepare(cfg, docs)
    out = Path(args.out)
    atomic_write_bytes(out / "registry.json", json.dumps(setup.registry.to_json(), indent=1).encode())
    atomic_write_bytes(out / "vocab.json", json.dumps(setup.vocab.to_json()).encode())
    print(json.dumps({"docids": len(setup.registry), "vocab": len(setup.vocab), "out": str(out)}))
    return EXIT_OK


def cmd_train(args) -> int:
    _require(args, "corpus", "checkpoint")
    cfg = _config(args)
    docs = _load_corpus(args.corpus)
    log_path = args.out or f"{args.checkpoint}.log.jsonl"
    try:
        result = training.train(cfg, docs, args.checkpoint, log_path)
    except training.TrainingError as exc:
        raise _fail(EXIT_TRAINING, "training", str(exc)) from exc
    print(json.dumps({"best_epoch": result.best_epoch, "best_val_pm": result.best_pm,
                      "epochs": len(result.log), "checkpoint": args.checkpoint, "log": log_path}))
    return EXIT_OK


def cmd_eval(args) -> int:
    _require(args, "checkpoint")
    ckpt = _load_ckpt(args.checkpoint)
    setup = _ckpt_setup(ckpt, args)
    queries = _split_queries(setup, args.split)
    result = training.evaluate_queries(ckpt.model, ckpt.adapters, setup, queries,
                                       constrained=not args.unconstrained, beam=args.beam)
    if args.out and args.out.endswith(".json"):
        payload = result.report.to_dict() | {"split": args.split, "valid_rate": result.valid_rate}
        _emit(json.dumps(payload, indent=1) + "\n", args.out)
    else:
        _emit(reports_to_csv([("reasongr", args.split, result.report)]), args.out)
    return EXIT_OK


def cmd_compare(args) -> int:
    _require(args, "corpus", "checkpoint")
    docs = _load_corpus(args.corpus)
    ckpt = _load_ckpt(args.checkpoint)
    setup = _ckpt_setup(ckpt, args)
    if [d.raw_id for d in docs] != ckpt.meta.get("corpus_ids"):
        raise _fail(EXIT_DATA, "data", "corpus does not match the checkpoint's training corpus")
    queries = _split_queries(setup, args.split)
    index = baseline.build_index(docs)
    bm25_records = []
    for q in queries:
        gold = setup.registry.docid(q.raw_id).surface
        pred = setup.registry.docid(baseline.retrieve_top1(index, q.text)).surface
        bm25_records.append(QueryRecord.from_surfaces(q.qid, pred, gold))
    model_report = training.evaluate_queries(ckpt.model, ckpt.adapters, setup, queries,
                                             constrained=not args.unconstrained, beam=args.beam).report
    _emit(reports_to_csv([("bm25", args.split, aggregate(bm25_records)),
                          ("reasongr", args.split, model_report)]), args.out)
    return EXIT_OK


def cmd_query(args) -> int:
    _require(args, "checkpoint", "query")
    ckpt = _load_ckpt(args.checkpoint)
    setup = _ckpt_setup(ckpt, args)
    mode = setup.config.prompt_mode
    shots: list[tuple[str, str]] = []
    if mode.is_fewshot:
        rng = np.random.default_rng([setup.config.seed, 97, 0])
        shots = training.sample_shots(setup.shot_pool, "", setup.config.shots, rng)
    text = prompts.compose_input(args.query, mode, 0, 0 if mode.is_cot else None, shots)
    src = training.encode_source(text, setup.vocab, setup.config.max_src_len)
    trie = TokenTrie.from_registry(setup.registry, setup.vocab)
    trace, surface = training.decode_one(ckpt.model, ckpt.adapters, setup, src, trie,
                                         args.beam, not args.unconstrained)
    if trace:
        print(f"trace: {trace}")
    print(surface)
    return EXIT_OK


def cmd_prompt_preview(args) -> int:
    mode = prompts.Mode(args.mode or "plain")
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    query = args.query or "what was the revenue of adi in 2009 ?"
    shots: list[tuple[str, str]] = []
    if mode.is_fewshot:
        if args.corpus is None:
            raise _fail(EXIT_USAGE, "usage", "--corpus is required to preview few-shot prompts")
        docs = _load_corpus(args.corpus)
        registry = build_registry(docs)
        pool = [(d.question, registry.docid(d.raw_id).surface) for d in docs if d.question]
        if len(pool) < prompts.DEFAULT_SHOTS:
            raise _fail(EXIT_DATA, "data", "corpus has too few questions for few-shot examples")
        shots = [pool[i] for i in sorted(rng.choice(len(pool), prompts.DEFAULT_SHOTS, replace=False))]
    blocks = []
    for _ in range(args.n):
        sample = prompts.compose_prompt(rng, query, mode, shots)
        blocks.append(f"# template {sample.template_id} cot {sample.cot_id}\n{sample.input_text}\n")
    _emit("\n".join(blocks), args.out)
    return EXIT_OK


COMMANDS = {
    "ingest": (cmd_ingest, "validate a corpus and print statistics"),
    "build": (cmd_build, "write the docid registry and vocabulary"),
    "train": (cmd_train, "train adapters; writes the best checkpoint and a JSON-lines log"),
    "eval": (cmd_eval, "score a split; CSV (or JSON when --out ends in .json)"),
    "compare": (cmd_compare, "BM25 and the trained model on one split, as CSV"),
    "query": (cmd_query, "decode one query string"),
    "prompt-preview": (cmd_prompt_preview, "print composed prompts for a seed"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--corpus", help="corpus JSON array")
    common.add_argument("--config", help="key = value or JSON training config")
    common.add_argument("--checkpoint", help="checkpoint path (.npz)")
    common.add_argument("--split", choices=training.SPLITS, default="test")
    common.add_argument("--mode", choices=MODES)
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output path (default: stdout)")
    common.add_argument("--beam", type=int, default=1, help="beam width (1 = greedy)")
    common.add_argument("--penalty-weights", metavar="W_EM,W_PM,W_SM,W_S")
    common.add_argument("--unconstrained", action="store_true", help="free decoding (ablation)")
    common.add_argument("--query", help="query text (query, prompt-preview)")
    common.add_argument("--n", type=int, default=5, help="prompts to preview")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="reasongr", description=__doc__, epilog=EXIT_CODES_HELP,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text, description=help_text,
                       epilog=EXIT_CODES_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.beam < 1:
            raise _fail(EXIT_USAGE, "usage", "--beam must be >= 1")
        if args.n < 1:
            raise _fail(EXIT_USAGE, "usage", "--n must be >= 1")
        return COMMANDS[args.command][0](args)
    except CliError as exc:
        print(f"reasongr: error {exc.code} {exc.kind}: {exc}", file=sys.stderr)
        return exc.code
    except Exception as exc:  # noqa: BLE001
        print(f"reasongr: error {EXIT_INTERNAL} internal: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def main(argv: list[str] | None = None) -> None:
    sys.exit(run(argv))
