"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line."""

import datetime as dt
import filecmp
import os
import time
from collections import defaultdict
from itertools import combinations

import numpy as np
import pytest

from recall_forge.config import load_config
from recall_forge.datamodel import ItemInfo, PurchaseRecord, RecallEntry, RecallSet, Source
from recall_forge.engine import EngineConfig
from recall_forge.fusion import FusionPolicy, fuse_recalls
from recall_forge.metrics import f1_score, precision_recall_f1
from recall_forge.pipeline import run
from recall_forge.ranker import (LRHyperParams, PairExample, apply_rank_correction, compute_fix,
                                 examples_to_arrays, gradient, objective, predict_proba, rank_fix, train_lr)
from recall_forge.recall_copurchase import TimeWindow, copurchase_pairs
from recall_forge.recall_title import title_pairs
from recall_forge.synth import SynthSpec, generate_synthetic

pytestmark = pytest.mark.acceptance

CP, TS = Source.CO_PURCHASE, Source.TITLE_SIMILARITY

# (precision, recall, printed F1) for every row of the four published result tables
PUBLISHED_ROWS = [
    (0.090503845, 0.054395265, 0.067950461),
    (0.088748303, 0.053772593, 0.066968796),
    (0.091227602, 0.054738021, 0.068421842),
    (0.089557052, 0.053938258, 0.067326959),
    (0.089729976, 0.054063935, 0.067473728),
    (0.091543545, 0.055075063, 0.068773897),
    (0.091087625, 0.05484656, 0.068467068),
    (0.091638095, 0.054966524, 0.06871581),
    (0.09212381, 0.055257866, 0.069080028),
    (0.09067619, 0.054389553, 0.067994515),
    (0.090685714, 0.054395265, 0.068001657),
    (0.092590476, 0.055537783, 0.069429963),
    (0.08552381, 0.051299043, 0.064130947),
    (0.090742857, 0.054429541, 0.068044506),
    (0.090780952, 0.054452391, 0.068073072),
    (0.090666667, 0.05438384, 0.067987374),
    (0.090619048, 0.054355277, 0.067951666),
    (0.090952381, 0.054555218, 0.06820162),
]


def test_1_table_consistency(criterion):
    # precision_recall_f1 derives F1 with f1_score; check that link, then the rows
    r = precision_recall_f1(range(8), range(4, 20))
    assert r.f1 == f1_score(r.precision, r.recall)
    worst = max(abs(f1_score(p, rc) - f1) for p, rc, f1 in PUBLISHED_ROWS)
    criterion(worst <= 1e-6, f"{len(PUBLISHED_ROWS)} rows, max |F1 - printed| = {worst:.2e} (tol 1e-6)")


# -- co-purchase oracle ----------------------------------------------------------------------

D0 = dt.date(2014, 11, 18)


def _random_purchases(rng):
    n_users, n_items = int(rng.integers(20, 201)), int(rng.integers(10, 101))
    out = []
    for u in range(1, n_users + 1):
        for _ in range(int(rng.integers(1, 9))):
            out.append(PurchaseRecord(u, int(rng.integers(1, n_items + 1)),
                                      D0 + dt.timedelta(days=int(rng.integers(0, 120)))))
    return out


def _brute_force_freq(purchases, tau):
    baskets = defaultdict(list)
    for p in purchases:
        baskets[p.user_id].append((p.item_id, p.create_at.toordinal()))
    users = defaultdict(set)
    for u, bought in baskets.items():
        for (a, da), (b, db) in combinations(bought, 2):
            if a != b and abs(da - db) <= tau:
                users[(max(a, b), min(a, b))].add(u)
    return {k: float(len(v)) for k, v in users.items()}


def test_2_copurchase_oracle(criterion, tmp_path):
    cfg = EngineConfig(workers=4, scratch_dir=str(tmp_path))
    start = time.perf_counter()
    bad, pairs = 0, 0
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        purchases = _random_purchases(rng)
        tau = int(rng.integers(1, 61))
        got = {(p.hi, p.lo): p.score for p in copurchase_pairs(purchases, TimeWindow(tau), cfg)}
        want = _brute_force_freq(purchases, tau)
        pairs += len(want)
        bad += got != want
    elapsed = time.perf_counter() - start
    criterion(bad == 0 and elapsed < 30,
              f"50 datasets, {pairs} pairs, {bad} mismatching datasets, {elapsed:.1f}s (limit 30s)")


# -- cosine oracle ---------------------------------------------------------------------------

def _random_corpus(rng, n_docs):
    vocab = int(rng.integers(50, 2000))
    zipf = 1.0 / np.arange(1, vocab + 1)
    zipf /= zipf.sum()
    items = []
    for i in range(1, n_docs + 1):
        terms = rng.choice(vocab, size=int(rng.integers(0, 9)), p=zipf) + 1
        items.append(ItemInfo(i, 1, tuple(int(t) for t in terms)))
    return items


def _dense_all_pairs(items):
    ids = [it.item_id for it in items]
    terms = sorted({t for it in items for t in it.terms})
    col = {t: j for j, t in enumerate(terms)}
    tf = np.zeros((len(ids), len(terms)))
    for r, it in enumerate(items):
        for t in it.terms:
            tf[r, col[t]] += 1
    present = (tf > 0).astype(float)
    w = tf * np.log(len(ids) / np.maximum(present.sum(axis=0), 1))
    norms = np.linalg.norm(w, axis=1)
    shared = present @ present.T
    gram = w @ w.T
    out = {}
    rows, cols = np.nonzero(np.triu(shared, 1))
    for i, j in zip(rows, cols):
        if norms[i] > 0 and norms[j] > 0:
            out[(ids[j], ids[i])] = gram[i, j] / (norms[i] * norms[j])
    return out


def test_3_cosine_oracle(criterion, tmp_path):
    cfg = EngineConfig(workers=4, scratch_dir=str(tmp_path))
    start = time.perf_counter()
    worst, set_mismatch, emitted = 0.0, 0, 0
    for seed in range(20):
        rng = np.random.default_rng(2000 + seed)
        items = _random_corpus(rng, 500 if seed == 19 else int(rng.integers(20, 501)))
        got = {(p.hi, p.lo): p.score for p in title_pairs(items, cfg)}
        want = _dense_all_pairs(items)
        emitted += len(got)
        if got.keys() != want.keys():
            set_mismatch += 1
            continue
        if want:
            worst = max(worst, max(abs(got[k] - v) for k, v in want.items()))
    elapsed = time.perf_counter() - start
    criterion(set_mismatch == 0 and worst <= 1e-9 and elapsed < 60,
              f"20 corpora, {emitted} pairs, {set_mismatch} pair-set mismatches, "
              f"max |err| = {worst:.1e} (tol 1e-9), {elapsed:.1f}s (limit 60s)")


# -- engine determinism ----------------------------------------------------------------------

def _all_files(root):
    return sorted(os.path.relpath(os.path.join(d, f), root) for d, _, fs in os.walk(root) for f in fs)


def test_4_engine_determinism(criterion, tmp_path):
    paths = generate_synthetic(tmp_path / "data", SynthSpec(seed=21))
    start = time.perf_counter()
    outs = []
    for workers in (1, 2, 8):
        out = tmp_path / f"out{workers}"
        cfg = load_config(paths["config"], {"engine.workers": workers, "paths.output": str(out),
                                            "engine.memory_budget": 1 << 16})
        run(cfg)
        outs.append(out)
    names = _all_files(outs[0])
    differing = set()
    for other in outs[1:]:
        assert _all_files(other) == names
        _, mismatch, errors = filecmp.cmpfiles(outs[0], other, names, shallow=False)
        differing.update(mismatch + errors)
    elapsed = time.perf_counter() - start
    criterion(not differing and elapsed < 120,
              f"workers 1/2/8, {len(names)} files, differing: {sorted(differing) or 'none'}, "
              f"{elapsed:.1f}s (limit 120s)")


# -- correction identities -------------------------------------------------------------------

def _random_recall(rng, source):
    entries = {}
    for item in range(1, int(rng.integers(2, 30))):
        cands = rng.permutation(np.arange(100, 400))[:int(rng.integers(1, 20))]
        if source is Source.FUSED:
            lst = [RecallEntry(int(c), float(rng.random()), CP if rng.random() < 0.5 else TS) for c in cands]
        else:
            scores = sorted(rng.random(len(cands)) * 10, reverse=True)
            lst = sorted((RecallEntry(int(c), float(s), source) for c, s in zip(cands, scores)),
                         key=lambda e: (-e.score, e.candidate))
        entries[item] = lst
    return RecallSet(source, entries)


def test_5_correction_identities(criterion):
    rng = np.random.default_rng(5)
    worst_fix = worst_rank = 0.0
    reordered = 0
    for n in range(100):
        rs = _random_recall(rng, Source.FUSED if n % 2 else CP)
        pairs = list(rs.pairs())
        probs = {p: float(rng.uniform(1e-6, 1.0)) for p in pairs}
        fixes = compute_fix(probs)
        worst_fix = max(worst_fix, abs(sum(fixes.values()) - len(pairs)))
        worst_rank = max(worst_rank, abs(sum(rank_fix(fixes).values())))
        uniform = compute_fix({p: 0.37 for p in pairs})
        corrected = apply_rank_correction(rs, uniform)
        reordered += any(corrected.candidates(i) != rs.candidates(i) for i in rs.entries)
    ok = worst_fix <= 1e-9 and worst_rank <= 1e-9 and reordered == 0
    criterion(ok, f"100 sets, max |sum fix - m| = {worst_fix:.1e}, max |sum rank_fix| = {worst_rank:.1e} "
                  f"(tol 1e-9), reordered under uniform p: {reordered}")


# -- fusion budget ---------------------------------------------------------------------------

QUOTAS = ((CP, 88_500), (TS, 16_500))


def _pool(n_items, per_item, offset, source, rng):
    entries = {}
    for item in range(1, n_items + 1):
        cands = offset + rng.permutation(per_item * 3)[:per_item]
        entries[item] = [RecallEntry(int(c), float(per_item - k), source) for k, c in enumerate(cands)]
    return RecallSet(source, entries)


def test_6_fusion_budget(criterion):
    rng = np.random.default_rng(6)
    # disjoint candidate ranges, both sets larger than their quotas
    a = _pool(1000, 100, 10_000, CP, rng)
    b = _pool(1000, 20, 50_000, TS, rng)
    disjoint = len(fuse_recalls([a, b], FusionPolicy(QUOTAS)))

    # overlapping: title candidates drawn from the same range as co-purchase ones
    a2 = _pool(1000, 100, 10_000, CP, rng)
    b2 = _pool(1000, 40, 10_000, TS, rng)
    fused = fuse_recalls([a2, b2], FusionPolicy(QUOTAS))
    n_cp = sum(1 for lst in fused.entries.values() for e in lst if e.source is CP)
    dup = priority = 0
    for item, lst in fused.entries.items():
        cands = [e.candidate for e in lst]
        dup += len(cands) != len(set(cands))
        srcs = [e.source for e in lst]
        priority += srcs != sorted(srcs, key=lambda s: s is TS)
        priority += [c for c, s in zip(cands, srcs) if s is CP] != a2.candidates(item)[:srcs.count(CP)]
    ok = disjoint == 105_000 and len(fused) <= 105_000 and n_cp == 88_500 and dup == 0 and priority == 0
    criterion(ok, f"disjoint size {disjoint} (want 105000), overlapping size {len(fused)} <= 105000, "
                  f"co_purchase draws {n_cp}, duplicate lists {dup}, priority violations {priority}")


# -- LR correctness --------------------------------------------------------------------------

def test_7_lr_correctness(criterion):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(20):
        n, d = int(rng.integers(5, 60)), int(rng.integers(1, 10))
        X = rng.normal(size=(n, d))
        y = (rng.random(n) < 0.5).astype(float)
        w = rng.normal(size=d)
        w[np.abs(w) < 0.05] = 0.3  # stay off the l1 kink
        b, l1 = float(rng.normal()), float(rng.uniform(0, 2))
        gw, gb = gradient(w, b, X, y, l1)
        h = 1e-6
        fd = []
        for j in range(d):
            e = np.zeros(d)
            e[j] = h
            fd.append((objective(w + e, b, X, y, l1) - objective(w - e, b, X, y, l1)) / (2 * h))
        fd.append((objective(w, b + h, X, y, l1) - objective(w, b - h, X, y, l1)) / (2 * h))
        an = np.append(gw, gb)
        worst = max(worst, float(np.max(np.abs(np.array(fd) - an) / np.maximum(np.abs(an), 1e-3))))

    # separable: matches differ little in every feature, non-matches a lot
    pos = rng.uniform(0, 0.5, size=(30, 6))
    neg = rng.uniform(2.0, 4.0, size=(30, 6))
    examples = ([PairExample((i + 2, 1), x, 1) for i, x in enumerate(pos)]
                + [PairExample((i + 100, 1), x, 0) for i, x in enumerate(neg)])
    hp = LRHyperParams(max_iterations=1000, convergence_error=1e-6, l1=1.0, learning_rate=0.1)
    model = train_lr(examples, hp)
    X, y = examples_to_arrays(examples)
    acc = float(np.mean((predict_proba(model, X) >= 0.5) == (y == 1)))
    ok = worst <= 1e-5 and acc == 1.0 and model.iterations <= 1000
    criterion(ok, f"max relative gradient error {worst:.1e} (tol 1e-5); separable accuracy {acc:.3f} "
                  f"after {model.iterations} iterations")


# -- end-to-end recovery ---------------------------------------------------------------------

def _report_rows(path):
    with open(path, encoding="utf-8") as fh:
        header, *rows = [line.rstrip("\n").split("\t") for line in fh]
    return {r[0]: dict(zip(header[1:], map(float, r[1:]))) for r in rows}


def test_8_planted_recovery(criterion, tmp_path):
    spec = SynthSpec(planted=50, seed=8)
    paths = generate_synthetic(tmp_path / "data", spec)
    start = time.perf_counter()
    run(load_config(paths["config"], {"paths.output": str(tmp_path / "out")}))
    elapsed = time.perf_counter() - start
    rows = _report_rows(tmp_path / "out" / "report.tsv")
    recovered = rows["fused"]["planted_recovered"]
    before, after = rows["fused"]["map_at_k"], rows["corrected"]["map_at_k"]
    ok = recovered >= 0.9 and after > before and elapsed < 300
    criterion(ok, f"planted pairs in fused top-k {recovered:.2%} (need >= 90%), "
                  f"MAP@200 fused {before:.4f} -> corrected {after:.4f}, {elapsed:.1f}s (limit 300s)")
