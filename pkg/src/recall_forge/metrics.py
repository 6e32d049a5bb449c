"""Precision / recall / F1 over predicted pairs and MAP@k over ranked lists."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Collection, Hashable, Iterable, Mapping, Sequence

DEFAULT_MAP_K = 200


def f1_score(precision: float, recall: float) -> float:
    denom = precision + recall
    return 2 * precision * recall / denom if denom > 0 else 0.0


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    map_at_k: float | None = None
    predicted: int = 0
    relevant: int = 0
    hits: int = 0
    extra: dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> dict[str, float | int]:
        out: dict[str, float | int] = {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "predicted": self.predicted,
            "relevant": self.relevant,
            "hits": self.hits,
        }
        if self.map_at_k is not None:
            out["map_at_k"] = self.map_at_k
        out.update(self.extra)
        return out

    def kv_lines(self, prefix: str = "eval.") -> list[str]:
        return [f"{prefix}{k}={_fmt(v)}" for k, v in self.as_dict().items()]

    def table(self) -> str:
        rows = [(k, _fmt(v)) for k, v in self.as_dict().items()]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def _fmt(v) -> str:
    return f"{v:.9f}" if isinstance(v, float) else str(v)


def precision_recall_f1(predicted: Collection[Hashable], relevant: Collection[Hashable]) -> EvalReport:
    pred, rel = set(predicted), set(relevant)
    hits = len(pred & rel)
    p = hits / len(pred) if pred else 0.0
    r = hits / len(rel) if rel else 0.0
    return EvalReport(p, r, f1_score(p, r), predicted=len(pred), relevant=len(rel), hits=hits)


def average_precision(ranked: Sequence[Hashable], relevant: Collection[Hashable], k: int = DEFAULT_MAP_K,
                      counters: Counter | None = None) -> float:
    """AP@k normalized by ``min(|relevant|, k)``; 0 for an empty relevant set."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rel = set(relevant)
    if not rel:
        if counters is not None:
            counters["eval.empty_relevant"] += 1
        return 0.0
    hits = 0
    total = 0.0
    for i, item in enumerate(ranked[:k], 1):
        if item in rel:
            hits += 1
            total += hits / i
    return total / min(len(rel), k)


def map_at_k(aps: Iterable[float]) -> float:
    aps = list(aps)
    if not aps:
        raise ValueError("MAP of an empty query list is undefined")
    return math.fsum(aps) / len(aps)


def mean_average_precision(rankings: Mapping[int, Sequence[int]], truth: Mapping[int, Collection[int]],
                           k: int = DEFAULT_MAP_K, counters: Counter | None = None) -> float:
    """MAP@k over the queries in ``truth``; queries absent from ``rankings`` score 0."""
    return map_at_k(average_precision(rankings.get(q, []), truth[q], k, counters) for q in sorted(truth))
