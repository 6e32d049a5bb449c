"""End-to-end orchestration: ingest, recall, fusion, ranking, correction, evaluation.

Every stage writes its artifacts into the output directory together with a
stamp holding a fingerprint of the configuration keys and upstream files it
read. A stage whose artifacts exist and whose stamp matches is skipped, so a
rerun recomputes only what changed or went missing.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from collections import Counter
from dataclasses import dataclass
from typing import Callable

from . import datamodel as dm
from .config import PipelineConfig
from .fusion import category_filter, fuse_recalls, hit_rate
from .metrics import EvalReport, mean_average_precision, precision_recall_f1
from .ranker import (apply_rank_correction, build_training_set, compute_fix, load_model, rank_fix,
                     save_model, score_recall, train_lr)
from .recall_copurchase import TimeWindow, copurchase_pairs, copurchase_recall
from .recall_title import title_pairs, title_recall
from .synth import load_truth

log = logging.getLogger(__name__)

ARTIFACTS = {
    "ingest": ["ingest.tsv"],
    "recall-copurchase": ["copurchase.pairs"],
    "recall-title": ["title.pairs"],
    "fuse": ["copurchase.recall", "title.recall", "fused.recall", "hit_rates.tsv"],
    "train": ["model.bin"],
    "rank-correct": ["corrected.recall", "corrections.tsv"],
    "eval": ["report.tsv", "eval.txt"],
}


class PipelineError(RuntimeError):
    """A stage failed; ``stage`` names it and ``counters`` holds what it counted so far."""

    def __init__(self, stage: str, cause: BaseException, counters: Counter):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.counters = counters


@dataclass
class StageDef:
    name: str
    run: Callable[["Context"], None]
    inputs: tuple[str, ...]        # paths.* keys of input files
    keys: tuple[str, ...]          # config keys (or prefixes ending in '.') that shape the output
    upstream: tuple[str, ...]      # stages whose artifacts are read


class Context:
    def __init__(self, config: PipelineConfig):
        self.config = config
        self.out = config["paths.output"]
        self.counters: Counter = Counter()
        self.engine = config.engine()
        self._items = None

    def path(self, name: str) -> str:
        return os.path.join(self.out, name)

    def require(self, key: str) -> str:
        path = self.config[key]
        if not path:
            raise FileNotFoundError(f"{key} is not set")
        if not os.path.exists(path):
            raise FileNotFoundError(f"{key}: {path} does not exist")
        return path

    def items(self) -> dict[int, dm.ItemInfo]:
        if self._items is None:
            features = self.config["paths.features"] or None
            if features:
                self.require("paths.features")
            self._items = dm.item_lookup(dm.parse_item_info(
                self.require("paths.items"), features,
                reject_threshold=self.config["ingest.reject_threshold"]))
        return self._items

    def purchases(self):
        return dm.parse_purchase_history(self.require("paths.purchases"),
                                         reject_threshold=self.config["ingest.reject_threshold"])

    def packages(self):
        return dm.parse_match_packages(self.require("paths.packages"),
                                       reject_threshold=self.config["ingest.reject_threshold"])

    def truth(self) -> list[tuple[int, int]] | None:
        return load_truth(self.config["paths.truth"]) if self.config["paths.truth"] else None


# -- stages -------------------------------------------------------------------

def _ingest(ctx: Context) -> None:
    threshold = ctx.config["ingest.reject_threshold"]
    rows = []
    sources = [
        ("purchases", dm.parse_purchase_history),
        ("items", dm.parse_item_info),
        ("packages", dm.parse_match_packages),
        ("behavior", dm.parse_behavior_log),
    ]
    for name, parser in sources:
        path = ctx.config[f"paths.{name}"]
        if not path:
            continue
        ctx.require(f"paths.{name}")
        stats = dm.ParseStats()
        for _ in parser(path, stats=stats, reject_threshold=threshold):
            pass
        ctx.counters[f"ingest.{name}.accepted"] = stats.accepted
        ctx.counters[f"ingest.{name}.rejected"] = stats.rejected
        rows.append(f"{name}\t{stats.accepted}\t{stats.rejected}\t"
                    f"{','.join(map(str, stats.rejected_lines[:20]))}")
    if ctx.config["paths.features"]:
        n = len(dm.load_features(ctx.require("paths.features")))
        ctx.counters["ingest.features.accepted"] = n
        rows.append(f"features\t{n}\t0\t")
    _write_text(ctx.path("ingest.tsv"), "file\taccepted\trejected\tfirst_rejected_lines\n" + "".join(
        r + "\n" for r in rows))


def _recall_copurchase(ctx: Context) -> None:
    pairs = copurchase_pairs(ctx.purchases(), TimeWindow(ctx.config["copurchase.tau_days"]),
                             ctx.engine, ctx.config["engine.partitions"])
    ctx.counters["copurchase.pairs"] = len(pairs)
    dm.persist_pairs(pairs, ctx.path("copurchase.pairs"))


def _recall_title(ctx: Context) -> None:
    pairs = title_pairs(ctx.items().values(), ctx.engine, ctx.config["engine.partitions"], ctx.counters)
    ctx.counters["title.pairs"] = len(pairs)
    dm.persist_pairs(pairs, ctx.path("title.pairs"))


def _fuse(ctx: Context) -> None:
    cfg = ctx.config
    policy = cfg.fusion_policy()
    items = ctx.items()
    truth = ctx.truth()
    sets = []
    rates = []
    for source, pairs_file, k, build in (
        (dm.Source.CO_PURCHASE, "copurchase.pairs", cfg["copurchase.top_k"], copurchase_recall),
        (dm.Source.TITLE_SIMILARITY, "title.pairs", cfg["title.top_k"], title_recall),
    ):
        pairs = category_filter(dm.load_pairs(ctx.path(pairs_file)), items, policy.category_rule,
                                policy.whitelist, ctx.counters)
        rs = build(pairs, k)
        fixed = cfg.fixed_hit_rate(source)
        if fixed is not None:
            rs.hit_rate = fixed
        elif truth is not None:
            rs.hit_rate = hit_rate(rs, truth)
        ctx.counters[f"fuse.{source.value}.entries"] = len(rs)
        rates.append(f"{source.value}\t{'' if rs.hit_rate is None else repr(rs.hit_rate)}\n")
        dm.persist_recall(rs, ctx.path(f"{'copurchase' if source is dm.Source.CO_PURCHASE else 'title'}.recall"))
        sets.append(rs)
    fused = fuse_recalls(sets, policy)
    ctx.counters["fuse.fused.entries"] = len(fused)
    dm.persist_recall(fused, ctx.path("fused.recall"))
    _write_text(ctx.path("hit_rates.tsv"), "source\thit_rate\n" + "".join(rates))


def _train(ctx: Context) -> None:
    examples = build_training_set(ctx.packages(), ctx.items(), ctx.config["ranker.negative_ratio"],
                                  ctx.config["seed"], ctx.counters)
    ctx.counters["train.examples"] = len(examples)
    ctx.counters["train.positives"] = sum(e.label for e in examples)
    model = train_lr(examples, ctx.config.hyperparams())
    ctx.counters["train.iterations"] = model.iterations
    save_model(model, ctx.path("model.bin"))


def _rank_correct(ctx: Context) -> None:
    fused = dm.load_recall(ctx.path("fused.recall"))
    model = load_model(ctx.path("model.bin"))
    probs = score_recall(model, fused, ctx.items(), ctx.counters)
    if not probs:
        corrected, fixes, corr = fused, {}, {}
    else:
        fixes = compute_fix(probs)
        corr = rank_fix(fixes)
        corrected = apply_rank_correction(fused, fixes, ctx.config["ranker.base"])
    dm.persist_recall(corrected, ctx.path("corrected.recall"))
    lines = ["item\tcandidate\tprobability\tfix\trank_fix\n"]
    lines += [f"{i}\t{c}\t{probs[(i, c)]!r}\t{fixes[(i, c)]!r}\t{corr[(i, c)]!r}\n" for i, c in fused.pairs()]
    _write_text(ctx.path("corrections.tsv"), "".join(lines))
    ctx.counters["rank.entries"] = len(probs)


def truth_queries(truth: list[tuple[int, int]]) -> dict[int, set[int]]:
    queries: dict[int, set[int]] = {}
    for a, b in truth:
        queries.setdefault(a, set()).add(b)
        queries.setdefault(b, set()).add(a)
    return queries


def evaluate(recall: dm.RecallSet, truth: list[tuple[int, int]], k: int, f1_top: int,
             counters: Counter | None = None) -> EvalReport:
    """MAP@k over truth items, and P/R/F1 of each truth item's top ``f1_top`` candidates."""
    queries = truth_queries(truth)
    rankings = {q: recall.candidates(q) for q in queries}
    predicted = {dm.canonical(q, c) for q in queries for c in rankings[q][:f1_top]}
    report = precision_recall_f1(predicted, set(truth))
    report.map_at_k = mean_average_precision(rankings, queries, k, counters)
    recovered = sum(1 for a, b in truth if b in rankings.get(a, ()) or a in rankings.get(b, ()))
    report.extra["planted_recovered"] = recovered / len(truth) if truth else 0.0
    return report


EVAL_ROWS = [
    ("co_purchase", "copurchase.recall"),
    ("title_similarity", "title.recall"),
    ("fused", "fused.recall"),
    ("corrected", "corrected.recall"),
]


def _eval(ctx: Context) -> None:
    truth = ctx.truth()
    if truth is None:
        raise FileNotFoundError("paths.truth is required for evaluation")
    k, top = ctx.config["eval.k"], ctx.config["eval.f1_top"]
    reports = {}
    for name, artifact in EVAL_ROWS:
        reports[name] = evaluate(dm.load_recall(ctx.path(artifact)), truth, k, top, ctx.counters)
    header = "method\tmap_at_k\tprecision\trecall\tf1\tplanted_recovered\n"
    rows = [f"{name}\t{r.map_at_k:.9f}\t{r.precision:.9f}\t{r.recall:.9f}\t{r.f1:.9f}\t"
            f"{r.extra['planted_recovered']:.9f}\n" for name, r in reports.items()]
    _write_text(ctx.path("report.tsv"), header + "".join(rows))
    final = reports["corrected"]
    lines = final.kv_lines("eval.")
    lines += [f"eval.{name}.map_at_k={r.map_at_k:.9f}" for name, r in reports.items()]
    lines.append(f"eval.k={k}")
    _write_text(ctx.path("eval.txt"), "".join(line + "\n" for line in lines))
    for name, r in reports.items():
        ctx.counters[f"eval.{name}.map_at_k"] = r.map_at_k
    if ctx.config["report.figures"]:
        from .plotting import render_report_figures
        render_report_figures(ctx.out, reports, ctx.path("corrections.tsv"),
                              dm.load_recall(ctx.path("fused.recall")),
                              dm.load_recall(ctx.path("corrected.recall")), truth, k)


STAGES = [
    StageDef("ingest", _ingest, ("paths.purchases", "paths.items", "paths.packages", "paths.behavior",
                                 "paths.features"), ("ingest.",), ()),
    StageDef("recall-copurchase", _recall_copurchase, ("paths.purchases",),
             ("copurchase.tau_days", "ingest."), ()),
    StageDef("recall-title", _recall_title, ("paths.items",), ("ingest.",), ()),
    StageDef("fuse", _fuse, ("paths.items", "paths.truth"),
             ("copurchase.top_k", "title.top_k", "fusion.", "ingest."), ("recall-copurchase", "recall-title")),
    StageDef("train", _train, ("paths.packages", "paths.items", "paths.features"),
             ("ranker.max_iterations", "ranker.convergence_error", "ranker.l1", "ranker.learning_rate",
              "ranker.negative_ratio", "seed", "ingest."), ()),
    StageDef("rank-correct", _rank_correct, ("paths.items", "paths.features"), ("ranker.base", "ingest."),
             ("fuse", "train")),
    StageDef("eval", _eval, ("paths.truth",), ("eval.", "report."), ("fuse", "rank-correct")),
]
STAGE_INDEX = {s.name: s for s in STAGES}


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def fingerprint(stage: StageDef, config: PipelineConfig) -> str:
    parts: dict[str, str] = {"stage": stage.name}
    for key in config:
        if any(key == k or (k.endswith(".") and key.startswith(k)) for k in stage.keys):
            parts[key] = repr(config[key])
    for key in stage.inputs:
        path = config[key]
        parts[key] = _file_digest(path) if path and os.path.exists(path) else ""
    out = config["paths.output"]
    for up in stage.upstream:
        for name in ARTIFACTS[up]:
            path = os.path.join(out, name)
            parts[f"{up}/{name}"] = _file_digest(path) if os.path.exists(path) else ""
    return hashlib.sha256(json.dumps(parts, sort_keys=True).encode()).hexdigest()


def _stamp_path(out: str, stage: str) -> str:
    return os.path.join(out, ".stamps", f"{stage}.stamp")


def is_current(stage: StageDef, config: PipelineConfig) -> bool:
    out = config["paths.output"]
    if not all(os.path.exists(os.path.join(out, a)) for a in ARTIFACTS[stage.name]):
        return False
    try:
        with open(_stamp_path(out, stage.name), encoding="utf-8") as fh:
            return fh.read().strip() == fingerprint(stage, config)
    except FileNotFoundError:
        return False


def dependencies(target: str) -> list[str]:
    """``target`` plus everything upstream of it, in pipeline order."""
    wanted = {target}
    for stage in reversed(STAGES):
        if stage.name in wanted:
            wanted.update(stage.upstream)
    if target != "ingest":
        wanted.add("ingest")
    return [s.name for s in STAGES if s.name in wanted]


def run(config: PipelineConfig, until: str | None = None, force: bool = False) -> Counter:
    """Run the pipeline (or the stages ``until`` depends on) and return counters.

    Counters include ``stage.<name> = 1`` for stages that ran and ``0`` for
    stages skipped as current.
    """
    names = dependencies(until) if until else [s.name for s in STAGES]
    ctx = Context(config)
    os.makedirs(os.path.join(ctx.out, ".stamps"), exist_ok=True)
    for name in names:
        stage = STAGE_INDEX[name]
        if not force and is_current(stage, config):
            ctx.counters[f"stage.{name}"] = 0
            log.info("stage %s is current, skipping", name)
            continue
        log.info("running stage %s", name)
        try:
            stage.run(ctx)
        except Exception as exc:
            raise PipelineError(name, exc, ctx.counters) from exc
        _write_text(_stamp_path(ctx.out, name), fingerprint(stage, config) + "\n")
        ctx.counters[f"stage.{name}"] = 1
    return ctx.counters
