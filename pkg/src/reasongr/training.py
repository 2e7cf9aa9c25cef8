"""Indexing and retrieval tasks, the training loop, and split evaluation."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import resource
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import prompts
from .corpus import DocId, DocIdRegistry, Document, build_registry, flatten_table, tokenize
from .decode import (
    ModelScorer,
    TokenTrie,
    batch_constrained_greedy,
    constrained_beam,
    constrained_greedy,
    free_greedy,
    unconstrained_docid,
)
from .loss import PenaltyWeights, sequence_penalty
from .metrics import MetricsReport, QueryRecord, aggregate
from .model import (
    Checkpoint,
    ModelDims,
    OptimizerState,
    SeqModel,
    adam_step,
    clip_grad_norm,
    forward_backward,
    init_adapters,
    init_model,
    load_checkpoint,
    make_batch,
    save_checkpoint,
)
from .model.checkpoint import atomic_write_bytes
from .prompts import Mode
from .tokenizer import BOS, SEP, Vocab, build_vocab, encode

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
_TIMING_KEYS = ("seconds", "samples_per_sec", "peak_rss_mb")


class ConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    mode: str = "plain"
    w_em: float = 0.5
    w_pm: float = 0.5
    w_sm: float = 0.5
    w_s: float = 0.5
    n_pseudo: int = 10
    lr_a: float = 2e-3
    lora_ratio: float = 16.0
    train_frac: float = 0.75
    val_frac: float = 0.10
    test_frac: float = 0.15
    k_keywords: int = 3
    rank: int = 4
    d_model: int = 64
    d_ff: int = 128
    block_size: int = 64
    shots: int = prompts.DEFAULT_SHOTS
    chunk_tokens: int = 32
    max_src_len: int = 128
    max_tgt_len: int = 48
    max_docid_len: int = 16
    cot_budget: int = 24
    clip_norm: float = 1.0
    train_norms: bool = False

    def __post_init__(self):
        try:
            Mode(self.mode)
        except ValueError as exc:
            raise ConfigError(f"unknown mode {self.mode!r}") from exc
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.n_pseudo < 0 or self.max_epochs < 0 or self.patience < 0:
            raise ConfigError("n_pseudo, max_epochs and patience must be >= 0")
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if min(fracs) < 0 or not math.isclose(sum(fracs), 1.0, abs_tol=1e-9):
            raise ConfigError("split fractions must be nonnegative and sum to 1")
        PenaltyWeights(self.w_em, self.w_pm, self.w_sm, self.w_s)

    @property
    def penalty(self) -> PenaltyWeights:
        return PenaltyWeights(self.w_em, self.w_pm, self.w_sm, self.w_s)

    @property
    def prompt_mode(self) -> Mode:
        return Mode(self.mode)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        coerced = {}
        for key, value in values.items():
            default = known[key].default
            try:
                if isinstance(default, bool):
                    coerced[key] = value if isinstance(value, bool) else str(value).lower() in ("1", "true", "yes")
                elif isinstance(default, (int, float)) and not isinstance(default, bool):
                    coerced[key] = type(default)(value)
                else:
                    coerced[key] = str(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key}: {value!r}") from exc
        return cls(**coerced)


def load_config(path: str | Path) -> TrainConfig:
    """Read ``key = value`` lines (``#`` comments allowed) or a flat JSON object."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        return TrainConfig.from_dict(json.loads(text))
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        values[key.strip()] = value.strip().strip('"').strip("'")
    return TrainConfig.from_dict(values)


# ---------------------------------------------------------------- examples

@dataclass(frozen=True)
class TrainingExample:
    input_text: str
    target_text: str
    kind: str          # "indexing" or "retrieval"
    raw_id: str
    example_id: str = ""


@dataclass(frozen=True)
class Query:
    qid: str
    text: str
    raw_id: str
    kind: str          # "gold" or "pseudo"


def text_chunks(sentence: str, size: int) -> list[str]:
    toks = tokenize(sentence)
    return [" ".join(toks[i:i + size]) for i in range(0, len(toks), size)]


def make_indexing_examples(docs: Sequence[Document], registry: DocIdRegistry,
                           chunk_tokens: int = 32) -> list[TrainingExample]:
    """Bare document text (sentence chunks and table segments) mapped to its docid."""
    out = []
    for doc in docs:
        surface = registry.docid(doc.raw_id).surface
        pieces = [c for s in list(doc.pre_text) + list(doc.post_text) for c in text_chunks(s, chunk_tokens)]
        pieces += [seg.text for seg in flatten_table(doc)]
        for j, text in enumerate(pieces):
            out.append(TrainingExample(text, surface, "indexing", doc.raw_id, f"{doc.raw_id}#idx{j}"))
    return out


ROW_TEMPLATES = (
    "what was the {row} in {year} for {company} ?",
    "how much {row} did {company} report in {year} ?",
    "{company} {row} {year}",
    "what is the {row} of {company} for {year} ?",
)
KEYWORD_TEMPLATES = (
    "how did {company} describe {kw} in {year} ?",
    "what does the {year} report of {company} say about {kw} ?",
    "{kw} at {company} in {year}",
)
CELL_TEMPLATES = (
    "which {company} {year} item shows {value} ?",
)


def generate_pseudo_queries(doc: Document, n: int, rng: np.random.Generator,
                            keywords: Sequence[str] = ()) -> list[str]:
    """Template questions filled with the document's company, year, keywords and table cells."""
    if n < 1:
        raise ValueError("n must be >= 1")
    company, year = doc.company.lower(), doc.year
    rows, cells = [], []
    if len(doc.table) >= 2 and len(doc.table[0]) >= 2:
        for row in doc.table[1:]:
            if row[0].strip():
                rows.append(row[0].strip())
            cells.extend(c.strip() for c in row[1:] if c.strip())
    families = []
    if rows:
        families.append((ROW_TEMPLATES, "row", rows))
    if keywords:
        families.append((KEYWORD_TEMPLATES, "kw", list(keywords)))
    if cells:
        families.append((CELL_TEMPLATES, "value", cells))
    if not families:
        return [f"information about {company} {year} {i + 1}" for i in range(n)]
    out = []
    for _ in range(n):
        templates, slot, values = families[int(rng.integers(len(families)))]
        template = templates[int(rng.integers(len(templates)))]
        value = values[int(rng.integers(len(values)))]
        out.append(template.format(company=company, year=year, **{slot: value}))
    return out


def build_queries(docs: Sequence[Document], registry: DocIdRegistry, n_pseudo: int,
                  seed: int) -> list[Query]:
    """Gold question (if any) plus ``n_pseudo`` pseudo-queries per document, in corpus order."""
    rng = np.random.default_rng([seed, 11])
    out = []
    for doc in docs:
        if doc.question:
            out.append(Query(f"{doc.raw_id}#gold", doc.question, doc.raw_id, "gold"))
        if n_pseudo:
            kws = registry.docid(doc.raw_id).components[2:]
            kws = [k for k in kws if not k.isdigit()]
            for j, q in enumerate(generate_pseudo_queries(doc, n_pseudo, rng, kws)):
                out.append(Query(f"{doc.raw_id}#pq{j}", q, doc.raw_id, "pseudo"))
    return out


def split_queries(queries: Sequence[Query], fractions: tuple[float, float, float],
                  seed: int) -> dict[str, list[Query]]:
    """Query-level split; a pure function of the query list and seed."""
    n = len(queries)
    perm = np.random.default_rng([seed, 23]).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    parts = {"train": perm[:n_train], "val": perm[n_train:n_train + n_val], "test": perm[n_train + n_val:]}
    return {name: [queries[i] for i in sorted(idx)] for name, idx in parts.items()}


def sample_shots(pool: Sequence[tuple[str, str, str]], raw_id: str, shots: int,
                 rng: np.random.Generator) -> list[tuple[str, str]]:
    """``shots`` (query, surface) pairs drawn from other documents' training queries."""
    candidates = [i for i, (_, _, rid) in enumerate(pool) if rid != raw_id]
    if len(candidates) < shots:
        raise prompts.PromptError("not enough few-shot examples from other documents")
    picks = rng.choice(len(candidates), size=shots, replace=False)
    return [(pool[candidates[i]][0], pool[candidates[i]][1]) for i in sorted(picks)]


def retrieval_example(query: Query, docid: DocId, mode: Mode, rng: np.random.Generator,
                      shot_pool: Sequence[tuple[str, str, str]] = (), shots: int = 2,
                      template_id: int | None = None, cot_id: int | None = None) -> TrainingExample:
    trace = prompts.synthesize_trace(query.text, docid) if mode.is_cot else None
    target = prompts.format_target(docid, trace, mode)
    examples = sample_shots(shot_pool, query.raw_id, shots, rng) if mode.is_fewshot else ()
    sample = prompts.compose_prompt(rng, query.text, mode, examples, target,
                                    template_id=template_id, cot_id=cot_id)
    return TrainingExample(sample.input_text, sample.target_text, "retrieval", query.raw_id, query.qid)


def make_retrieval_examples(docs: Sequence[Document], registry: DocIdRegistry, config: TrainConfig,
                            rng: np.random.Generator | None = None,
                            queries: Sequence[Query] | None = None,
                            shot_pool: Sequence[tuple[str, str, str]] | None = None) -> list[TrainingExample]:
    """Prompted query -> target examples (default: every query of every document)."""
    rng = np.random.default_rng([config.seed, 31]) if rng is None else rng
    if queries is None:
        queries = build_queries(docs, registry, config.n_pseudo, config.seed)
    if shot_pool is None:
        shot_pool = [(q.text, registry.docid(q.raw_id).surface, q.raw_id) for q in queries]
    mode = config.prompt_mode
    return [retrieval_example(q, registry.docid(q.raw_id), mode, rng, shot_pool, config.shots)
            for q in queries]


def prompt_vocabulary() -> list[str]:
    texts = list(prompts.TASK_TEMPLATES) + list(prompts.COT_INSTRUCTIONS)
    texts += ["Query: Document ID:", "find the query company year"]
    texts += list(ROW_TEMPLATES + KEYWORD_TEMPLATES + CELL_TEMPLATES)
    texts.append("information about")
    return texts


# ---------------------------------------------------------------- state bundle

@dataclass
class Setup:
    """Everything derived deterministically from (corpus, config) before training."""
    config: TrainConfig
    docs: list[Document]
    registry: DocIdRegistry
    vocab: Vocab
    queries: list[Query]
    splits: dict[str, list[Query]]

    @property
    def shot_pool(self) -> list[tuple[str, str, str]]:
        return [(q.text, self.registry.docid(q.raw_id).surface, q.raw_id) for q in self.splits["train"]]


def prepare(config: TrainConfig, docs: Sequence[Document]) -> Setup:
    docs = list(docs)
    if not docs:
        raise ValueError("empty corpus")
    registry = build_registry(docs, config.k_keywords)
    queries = build_queries(docs, registry, config.n_pseudo, config.seed)
    splits = split_queries(queries, (config.train_frac, config.val_frac, config.test_frac), config.seed)
    vocab = build_vocab(docs, registry, prompt_vocabulary() + [q.text for q in queries])
    return Setup(config, docs, registry, vocab, queries, splits)


def encode_source(text: str, vocab: Vocab, max_len: int) -> list[int]:
    ids = encode(text, vocab)
    return ids[-max_len:] if len(ids) > max_len else ids


def _encode_tgt(text: str, vocab: Vocab, max_len: int) -> list[int]:
    return encode(text, vocab)[: max_len - 1]


def eval_prompt(setup: Setup, query: Query, index: int) -> TrainingExample:
    """Deterministic evaluation prompt: first template and CoT addition, seeded shots."""
    rng = np.random.default_rng([setup.config.seed, 97, index])
    return retrieval_example(query, setup.registry.docid(query.raw_id), setup.config.prompt_mode, rng,
                             setup.shot_pool, setup.config.shots, template_id=0, cot_id=0)


# ---------------------------------------------------------------- evaluation

@dataclass
class EvalResult:
    report: MetricsReport
    traces: list[str] = field(default_factory=list)
    valid_rate: float = 1.0


def decode_one(model: SeqModel, adapters, setup: Setup, src: Sequence[int], trie: TokenTrie,
               beam: int = 1, constrained: bool = True) -> tuple[str, str]:
    """(reasoning trace, predicted surface) for one encoded prompt."""
    cfg = setup.config
    scorer = ModelScorer(model, adapters, src)
    if not constrained:
        text = unconstrained_docid(scorer, setup.vocab, cfg.max_tgt_len - 1)
        trace, _, surface = text.rpartition("-=>-")
        return trace.replace("-", " "), surface
    trace, prefix = "", [BOS]
    docid_len = min(cfg.max_docid_len, cfg.max_tgt_len - 1)
    # BOS + trace + SEP + docid must fit in the decoder's positions.
    budget = min(cfg.cot_budget, cfg.max_tgt_len - 2 - docid_len)
    if cfg.prompt_mode.is_cot and budget > 0:
        ids = free_greedy(scorer, budget, stop=SEP)
        trace = " ".join(setup.vocab.itos[t] for t in ids)
        prefix = [BOS] + ids + [SEP]
    if beam > 1:
        docid = constrained_beam(scorer, trie, beam, docid_len, prefix)[0]
    else:
        docid = constrained_greedy(scorer, trie, docid_len, prefix)
    return trace, docid.surface


def evaluate_queries(model: SeqModel, adapters, setup: Setup, queries: Sequence[Query],
                     constrained: bool = True, beam: int = 1, chunk: int = 256) -> EvalResult:
    if not queries:
        raise ValueError("no queries to evaluate")
    cfg = setup.config
    trie = TokenTrie.from_registry(setup.registry, setup.vocab)
    prompts_ids = [encode_source(eval_prompt(setup, q, i).input_text, setup.vocab, cfg.max_src_len)
                   for i, q in enumerate(queries)]
    traces: list[str] = [""] * len(queries)
    preds: list[str] = []
    if constrained and beam == 1 and not cfg.prompt_mode.is_cot:
        for lo in range(0, len(queries), chunk):
            preds += [d.surface for d in batch_constrained_greedy(
                model, adapters, prompts_ids[lo:lo + chunk], trie, cfg.max_docid_len)]
    else:
        for i, src in enumerate(prompts_ids):
            traces[i], surface = decode_one(model, adapters, setup, src, trie, beam, constrained)
            preds.append(surface)
    records = [QueryRecord.from_surfaces(q.qid, p, setup.registry.docid(q.raw_id).surface)
               for q, p in zip(queries, preds)]
    valid = sum(p in setup.registry for p in preds) / len(preds)
    return EvalResult(aggregate(records), traces, valid)


# ---------------------------------------------------------------- training loop

@dataclass
class TrainResult:
    setup: Setup
    model: SeqModel
    adapters: dict
    log: list[dict]
    best_epoch: int
    best_pm: float
    checkpoint_path: Path | None = None

    def deterministic_log(self) -> list[dict]:
        return [{k: v for k, v in rec.items() if k not in _TIMING_KEYS} for rec in self.log]


def _peak_rss_mb() -> float | None:
    try:
        return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0
    except (ValueError, OSError):
        return None


def _snapshot(adapters) -> dict:
    return {k: a.copy() for k, a in adapters.items()}


def build_checkpoint(setup: Setup, model, adapters, opt=None, rng=None, extra: dict | None = None) -> Checkpoint:
    meta = {
        "config": setup.config.to_dict(),
        "vocab": setup.vocab.to_json(),
        "registry": setup.registry.to_json(),
        "queries": [dataclasses.asdict(q) for q in setup.queries],
        "splits": {name: [q.qid for q in qs] for name, qs in setup.splits.items()},
        "corpus_ids": [d.raw_id for d in setup.docs],
    }
    meta.update(extra or {})
    return Checkpoint(model, adapters, opt, rng.bit_generator.state if rng is not None else None, meta)


def setup_from_checkpoint(ckpt: Checkpoint, docs: Sequence[Document] = ()) -> Setup:
    meta = ckpt.meta
    config = TrainConfig.from_dict(meta["config"])
    queries = [Query(**q) for q in meta["queries"]]
    by_id = {q.qid: q for q in queries}
    splits = {name: [by_id[qid] for qid in ids] for name, ids in meta["splits"].items()}
    return Setup(config, list(docs), DocIdRegistry.from_json(meta["registry"]),
                 Vocab.from_json(meta["vocab"]), queries, splits)


def train(config: TrainConfig, docs: Sequence[Document], checkpoint_path: str | Path | None = None,
          log_path: str | Path | None = None, *, use_penalty: bool = True,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Train adapters on indexing + retrieval examples with early stopping on validation PM.

    ``use_penalty=False`` bypasses the penalty hook entirely (plain MLE).
    """
    setup = prepare(config, docs)
    cfg = config
    vocab = setup.vocab
    rng = np.random.default_rng(cfg.seed)
    dims = ModelDims(len(vocab), cfg.d_model, cfg.d_ff, cfg.max_src_len, cfg.max_tgt_len)
    model = init_model(dims, np.random.default_rng([cfg.seed, 1]), block_size=cfg.block_size)
    adapters = init_adapters(model, cfg.rank, np.random.default_rng([cfg.seed, 2]))
    opt = OptimizerState(lr_a=cfg.lr_a, ratio=cfg.lora_ratio)
    weights = cfg.penalty

    penalties: list[float] = []

    def penalty(logits, target):
        value = sequence_penalty(logits, target, weights)
        penalties.append(value)
        return value

    indexing = [( encode_source(e.input_text, vocab, cfg.max_src_len),
                  _encode_tgt(e.target_text, vocab, cfg.max_tgt_len), e.example_id)
                for e in make_indexing_examples(setup.docs, setup.registry, cfg.chunk_tokens)]
    train_queries = setup.splits["train"]
    shot_pool = setup.shot_pool
    val_queries = setup.splits["val"] or setup.splits["train"]

    log: list[dict] = []
    best_pm, best_epoch, bad = -1.0, 0, 0
    best_adapters = _snapshot(adapters)
    ckpt_path = Path(checkpoint_path) if checkpoint_path else None
    log_lines: list[str] = []

    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        retrieval = [(encode_source(e.input_text, vocab, cfg.max_src_len),
                      _encode_tgt(e.target_text, vocab, cfg.max_tgt_len), e.example_id)
                     for e in make_retrieval_examples(setup.docs, setup.registry, cfg, rng,
                                                      train_queries, shot_pool)]
        examples = indexing + retrieval
        order = rng.permutation(len(examples))
        loss_sum = ce_sum = 0.0
        penalties.clear()
        for b_idx, lo in enumerate(range(0, len(order), cfg.batch_size)):
            items = [examples[i] for i in order[lo:lo + cfg.batch_size]]
            batch = make_batch([s for s, _, _ in items], [t for _, t, _ in items])
            res = forward_backward(model, adapters, batch, penalty=penalty if use_penalty else None,
                                   train_norms=cfg.train_norms)
            if not np.isfinite(res.loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b_idx}, "
                                    f"examples {[eid for _, _, eid in items]}")
            n = batch.size
            ce_sum += float(res.ce.sum())
            loss_sum += res.loss * n
            grads = dict(res.grads)
            if res.norm_grads:
                grads.update({f"norm:{k}": v for k, v in res.norm_grads.items()})
            clip_grad_norm(grads, cfg.clip_norm)
            adam_step(opt, adapters, res.grads, model.norms if cfg.train_norms else None, res.norm_grads)
        n_ex = len(examples)
        ev = evaluate_queries(model, adapters, setup, val_queries).report
        elapsed = time.perf_counter() - t0
        rec = {
            "epoch": epoch,
            "loss": loss_sum / n_ex,
            "ce": ce_sum / n_ex,
            "p_mean": float(np.mean(penalties)) if penalties else 1.0,
            "val_em": ev.em, "val_pm": ev.pm, "val_sm": ev.sm, "val_s": ev.s_score,
            "n_examples": n_ex,
            "seconds": elapsed,
            "samples_per_sec": n_ex / elapsed if elapsed > 0 else None,
        }
        rss = _peak_rss_mb()
        if rss is not None:
            rec["peak_rss_mb"] = rss
        log.append(rec)
        log_lines.append(json.dumps(rec))
        if on_epoch:
            on_epoch(rec)
        logger.info("epoch %d loss %.4f val EM %.3f PM %.3f", epoch, rec["loss"], ev.em, ev.pm)

        if ev.pm > best_pm:
            best_pm, best_epoch, bad = ev.pm, epoch, 0
            best_adapters = _snapshot(adapters)
            if ckpt_path is not None:
                save_checkpoint(ckpt_path, build_checkpoint(setup, model, best_adapters, opt, rng,
                                                            {"epoch": epoch, "val_pm": ev.pm}))
        else:
            bad += 1
            if bad >= cfg.patience:
                break
        if log_path is not None:
            atomic_write_bytes(log_path, ("\n".join(log_lines) + "\n").encode())

    if log_path is not None:
        atomic_write_bytes(log_path, ("\n".join(log_lines) + "\n").encode() if log_lines else b"")
    return TrainResult(setup, model, best_adapters, log, best_epoch, best_pm, ckpt_path)


def evaluate(checkpoint: str | Path | Checkpoint, split: str, mode: str | None = None,
             constrained: bool = True, beam: int = 1) -> MetricsReport:
    """Decode every query of ``split`` with the checkpoint and score it."""
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}; expected one of {SPLITS}")
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    setup = setup_from_checkpoint(ckpt)
    if mode is not None and mode != setup.config.mode:
        setup.config = setup.config.replace(mode=mode)
    queries = setup.splits[split]
    if not queries:
        raise ValueError(f"split {split!r} is empty")
    return evaluate_queries(ckpt.model, ckpt.adapters, setup, queries, constrained, beam).report
