"""Logistic-regression match scoring and the rank correction built on it.

The model sees the absolute componentwise difference of two items' feature
vectors and predicts whether they belong together. Its probabilities over a
recall set are turned into per-entry corrections that average to zero and
are added to each entry's normalized original score.
"""

from __future__ import annotations

import math
import struct
from collections import Counter
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Mapping

import numpy as np

from .datamodel import ItemInfo, MatchPackage, RecallEntry, RecallSet, Source, canonical


class SingleClassError(ValueError):
    """Training data lacks positive or negative examples."""


@dataclass(frozen=True)
class LRHyperParams:
    max_iterations: int = 1000
    convergence_error: float = 1e-6
    l1: float = 1.0
    learning_rate: float = 0.1

    def __post_init__(self):
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.convergence_error < 0 or self.l1 < 0:
            raise ValueError("convergence_error and l1 must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class RankModel:
    weights: np.ndarray
    bias: float = 0.0
    hyperparams: LRHyperParams = field(default_factory=LRHyperParams)
    iterations: int = 0
    history: list[float] = field(default_factory=list, repr=False)

    @property
    def dim(self) -> int:
        return len(self.weights)

    @classmethod
    def zeros(cls, dim: int, hyperparams: LRHyperParams | None = None) -> "RankModel":
        return cls(np.zeros(dim), 0.0, hyperparams or LRHyperParams())


@dataclass(frozen=True)
class PairExample:
    pair: tuple[int, int]
    feature_diff: np.ndarray
    label: int


def feature_diff(a, b) -> np.ndarray:
    """``|a - b|`` componentwise, so pair orientation does not matter."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"feature dimension mismatch: {a.shape} vs {b.shape}")
    return np.abs(a - b)


def build_training_set(packages: Iterable[MatchPackage], items: Mapping[int, ItemInfo],
                       negative_ratio: float = 1.0, seed: int = 42,
                       counters: Counter | None = None) -> list[PairExample]:
    """Positives: every pair inside a match package. Negatives: uniformly sampled
    pairs of featured items that never share a package, ``ratio x positives`` of them."""
    if not negative_ratio > 0:
        raise ValueError("negative_ratio must be positive")
    counters = counters if counters is not None else Counter()
    positives: set[tuple[int, int]] = set()
    for pkg in packages:
        positives.update(canonical(a, b) for a, b in combinations(pkg.item_ids, 2))

    def vec(i):
        info = items.get(i)
        return None if info is None else info.feature_vector

    examples = []
    for hi, lo in sorted(positives):
        va, vb = vec(hi), vec(lo)
        if va is None or vb is None:
            counters["train.missing_features"] += 1
            continue
        examples.append(PairExample((hi, lo), feature_diff(va, vb), 1))
    if not examples:
        return []

    featured = sorted(i for i, info in items.items() if info.feature_vector is not None)
    wanted = int(round(negative_ratio * len(examples)))
    negatives = _sample_negatives(featured, positives, wanted, seed)
    if len(negatives) < wanted:
        counters["train.negatives_short"] += wanted - len(negatives)
    for hi, lo in negatives:
        examples.append(PairExample((hi, lo), feature_diff(vec(hi), vec(lo)), 0))
    return examples


def _sample_negatives(ids: list[int], excluded: set, wanted: int, seed: int) -> list[tuple[int, int]]:
    rng = np.random.default_rng(seed)
    n = len(ids)
    idset = set(ids)
    space = n * (n - 1) // 2 - sum(1 for hi, lo in excluded if hi in idset and lo in idset)
    if wanted <= 0 or space <= 0:
        return []
    if wanted * 2 >= space:
        pool = [canonical(a, b) for a, b in combinations(ids, 2) if canonical(a, b) not in excluded]
        picks = rng.permutation(len(pool))[:wanted]
        return sorted(pool[i] for i in picks)
    chosen: set[tuple[int, int]] = set()
    while len(chosen) < wanted:
        a, b = rng.integers(0, n, size=2)
        if a == b:
            continue
        pair = canonical(ids[a], ids[b])
        if pair not in excluded:
            chosen.add(pair)
    return sorted(chosen)


def examples_to_arrays(examples: list[PairExample]) -> tuple[np.ndarray, np.ndarray]:
    X = np.vstack([e.feature_diff for e in examples])
    y = np.array([e.label for e in examples], dtype=float)
    return X, y


def _sigmoid(z):
    # split to stay finite for large |z|
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logistic_loss(w, b, X, y) -> float:
    """Summed negative log-likelihood (no penalty)."""
    z = X @ w + b
    return float(np.sum(np.logaddexp(0.0, z) - y * z))


def objective(w, b, X, y, l1: float) -> float:
    return logistic_loss(w, b, X, y) + l1 * float(np.abs(w).sum())


def gradient(w, b, X, y, l1: float) -> tuple[np.ndarray, float]:
    """(Sub)gradient of :func:`objective`; ``sign(0) = 0`` for the penalty."""
    r = _sigmoid(X @ w + b) - y
    return X.T @ r + l1 * np.sign(w), float(r.sum())


def _soft_threshold(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def train_lr(examples: list[PairExample], hyperparams: LRHyperParams | None = None) -> RankModel:
    """L1-regularized logistic regression by proximal gradient with backtracking.

    The bias is not penalized. Stops after ``max_iterations`` accepted steps or
    when the objective improves by less than ``convergence_error``.
    """
    hp = hyperparams or LRHyperParams()
    labels = {e.label for e in examples}
    if labels != {0, 1}:
        raise SingleClassError(f"training needs positive and negative examples, got labels {sorted(labels)}")
    X, y = examples_to_arrays(examples)
    w = np.zeros(X.shape[1])
    b = 0.0
    step = hp.learning_rate
    current = objective(w, b, X, y, hp.l1)
    history = [current]
    it = 0
    while it < hp.max_iterations:
        r = _sigmoid(X @ w + b) - y
        gw, gb = X.T @ r, float(r.sum())
        smooth = logistic_loss(w, b, X, y)
        step = min(hp.learning_rate, 2 * step)
        while True:
            w_new = _soft_threshold(w - step * gw, step * hp.l1)
            b_new = b - step * gb
            dw, db = w_new - w, b_new - b
            smooth_new = logistic_loss(w_new, b_new, X, y)
            bound = smooth + gw @ dw + gb * db + (dw @ dw + db * db) / (2 * step)
            if smooth_new <= bound + 1e-12 * abs(bound) or step < 1e-20:
                break
            step *= 0.5
        new = smooth_new + hp.l1 * float(np.abs(w_new).sum())
        if new > current:
            break
        it += 1
        w, b = w_new, b_new
        improvement = current - new
        current = new
        history.append(current)
        if improvement < hp.convergence_error:
            break
    return RankModel(w, b, hp, it, history)


def predict_proba(model: RankModel, diff) -> float | np.ndarray:
    x = np.asarray(diff, dtype=float)
    if x.shape[-1] != model.dim:
        raise ValueError(f"feature dimension {x.shape[-1]} != model dimension {model.dim}")
    p = _sigmoid(np.atleast_1d(x @ model.weights + model.bias))
    return float(p[0]) if x.ndim == 1 else p


def score_recall(model: RankModel, recall: RecallSet, items: Mapping[int, ItemInfo],
                 counters: Counter | None = None) -> dict[tuple[int, int], float]:
    """Match probability for every (item, candidate) entry of ``recall``.

    Entries lacking features on either side get the mean probability of the
    scored entries and are counted under ``rank.missing_features``.
    """
    counters = counters if counters is not None else Counter()
    keys, diffs, missing = [], [], []
    for item, cand in recall.pairs():
        a, b = items.get(item), items.get(cand)
        if a is None or b is None or a.feature_vector is None or b.feature_vector is None:
            missing.append((item, cand))
            continue
        keys.append((item, cand))
        diffs.append(feature_diff(a.feature_vector, b.feature_vector))
    probs: dict[tuple[int, int], float] = {}
    if keys:
        for key, p in zip(keys, predict_proba(model, np.vstack(diffs))):
            probs[key] = float(p)
    fill = math.fsum(probs.values()) / len(probs) if probs else 0.5
    for key in missing:
        counters["rank.missing_features"] += 1
        probs[key] = fill
    return probs


def compute_fix(probs: Mapping) -> dict:
    """``p / sum(p) * m`` for each of the ``m`` entries."""
    total = math.fsum(probs.values())
    if not total > 0:
        raise ValueError("match probabilities sum to zero; cannot normalize")
    m = len(probs)
    return {key: p / total * m for key, p in probs.items()}


def rank_fix(fixes: Mapping) -> dict:
    """Mean-centred corrections."""
    mean = math.fsum(fixes.values()) / len(fixes) if fixes else 0.0
    return {key: f - mean for key, f in fixes.items()}


def _base_scores(lst: list[RecallEntry], mode: str) -> list[float]:
    n = len(lst)
    if mode == "position":
        return [1.0 if n == 1 else (n - 1 - i) / (n - 1) for i in range(n)]
    lo = min(e.score for e in lst)
    hi = max(e.score for e in lst)
    if hi == lo:
        return [1.0] * n
    return [(e.score - lo) / (hi - lo) for e in lst]


def apply_rank_correction(recall: RecallSet, fixes: Mapping[tuple[int, int], float],
                          base: str = "auto") -> RecallSet:
    """Re-rank every list by normalized original score plus its rank correction.

    ``base`` selects the original-score normalization: ``"minmax"`` rescales
    scores per list to [0, 1]; ``"position"`` uses 1 for the head of the list
    falling linearly to 0 at the tail, which suits fused lists whose scores mix
    scales; ``"auto"`` picks ``position`` for fused sets and ``minmax`` otherwise.
    """
    if base == "auto":
        base = "position" if recall.source is Source.FUSED else "minmax"
    if base not in ("minmax", "position"):
        raise ValueError(f"unknown base normalization {base!r}")
    missing = [p for p in recall.pairs() if p not in fixes]
    if missing:
        raise KeyError(f"no fix value for {len(missing)} recall entries, e.g. {missing[0]}")
    corrections = rank_fix({p: fixes[p] for p in recall.pairs()})
    out = {}
    for item in sorted(recall.entries):
        lst = recall.entries[item]
        if not lst:
            out[item] = []
            continue
        rescored = [RecallEntry(e.candidate, s + corrections[(item, e.candidate)], e.source)
                    for e, s in zip(lst, _base_scores(lst, base))]
        out[item] = sorted(rescored, key=lambda e: (-e.score, e.candidate))
    return RecallSet(recall.source, out, recall.hit_rate)


# --------------------------------------------------------------------------
# Persistence: magic | u16 version | u32 dim | f64 weights | f64 bias |
#              u32 max_iterations | f64 convergence | f64 l1 | f64 lr | u32 iterations
# --------------------------------------------------------------------------

_MODEL_MAGIC = b"RFLRMODL"
_MODEL_VERSION = 1


def save_model(model: RankModel, path) -> None:
    hp = model.hyperparams
    blob = bytearray(_MODEL_MAGIC)
    blob += struct.pack(">HI", _MODEL_VERSION, model.dim)
    blob += np.asarray(model.weights, dtype=">f8").tobytes()
    blob += struct.pack(">dIdddI", model.bias, hp.max_iterations, hp.convergence_error, hp.l1,
                        hp.learning_rate, model.iterations)
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_model(path) -> RankModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(_MODEL_MAGIC):
        raise ValueError(f"{path}: not a model file")
    off = len(_MODEL_MAGIC)
    try:
        version, dim = struct.unpack_from(">HI", blob, off)
        if version != _MODEL_VERSION:
            raise ValueError(f"{path}: unsupported model version {version}")
        off += 6
        weights = np.frombuffer(blob, dtype=">f8", count=dim, offset=off).astype(float)
        off += 8 * dim
        bias, max_it, conv, l1, lr, iterations = struct.unpack_from(">dIdddI", blob, off)
    except (struct.error, ValueError) as exc:
        raise ValueError(f"{path}: malformed model file: {exc}") from exc
    if off + struct.calcsize(">dIdddI") != len(blob):
        raise ValueError(f"{path}: trailing bytes in model file")
    return RankModel(weights, bias, LRHyperParams(max_it, conv, l1, lr), iterations)
