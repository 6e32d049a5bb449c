"""Category filtering and hierarchical (waterfall) fusion of recall sets.

Fusion draws from recall sets in priority order. Each source has a global
quota that is spread over items in proportion to how many not-yet-taken
candidates each item has in that source, using largest-remainder rounding,
so the global total drawn from a source is exactly ``min(quota, available)``.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .datamodel import ItemInfo, ItemPair, RecallEntry, RecallSet, Source


class CategoryRule(str, enum.Enum):
    CROSS_CATEGORY_ONLY = "cross_category_only"
    ALLOW_ALL = "allow_all"
    WHITELIST = "whitelist"


@dataclass(frozen=True)
class FusionPolicy:
    quotas: tuple[tuple[Source, int], ...]
    category_rule: CategoryRule = CategoryRule.CROSS_CATEGORY_ONLY
    whitelist: frozenset[frozenset[int]] = frozenset()
    # sets with a known hit rate below this contribute nothing
    min_hit_rate: float = 0.0

    def __post_init__(self):
        sources = [Source(s) for s, _ in self.quotas]
        if len(set(sources)) != len(sources):
            raise ValueError("fusion quotas name a source twice")
        if any(q < 0 for _, q in self.quotas):
            raise ValueError("fusion quotas must be non-negative")
        if Source.FUSED in sources:
            raise ValueError("cannot fuse an already fused set")


def whitelist_of(pairs: Iterable[tuple[int, int]]) -> frozenset[frozenset[int]]:
    return frozenset(frozenset(p) for p in pairs)


def _allowed(cat_a: int, cat_b: int, rule: CategoryRule, whitelist) -> bool:
    if rule is CategoryRule.ALLOW_ALL:
        return True
    if rule is CategoryRule.CROSS_CATEGORY_ONLY:
        return cat_a != cat_b
    return frozenset((cat_a, cat_b)) in whitelist


def category_filter(pairs: Iterable[ItemPair], items: Mapping[int, ItemInfo],
                    rule: CategoryRule | str = CategoryRule.CROSS_CATEGORY_ONLY,
                    whitelist: frozenset = frozenset(),
                    counters: Counter | None = None) -> list[ItemPair]:
    """Drop pairs whose category combination the rule does not allow.

    Pairs with an item missing from ``items`` are dropped and counted under
    ``filter.unresolved``.
    """
    rule = CategoryRule(rule)
    counters = counters if counters is not None else Counter()
    kept = []
    for pair in pairs:
        a, b = items.get(pair.hi), items.get(pair.lo)
        if a is None or b is None:
            counters["filter.unresolved"] += 1
            continue
        if _allowed(a.cat_id, b.cat_id, rule, whitelist):
            kept.append(pair)
        else:
            counters["filter.dropped"] += 1
    return kept


def hit_rate(recall: RecallSet, truth: Iterable[tuple[int, int]]) -> float:
    """Fraction of the set's (item, candidate) entries that are true pairs."""
    truth_set = {frozenset(p) for p in truth}
    total = len(recall)
    if not total:
        return 0.0
    hits = sum(1 for item, cand in recall.pairs() if frozenset((item, cand)) in truth_set)
    return hits / total


def allocate(quota: int, sizes: Mapping[int, int]) -> dict[int, int]:
    """Split ``quota`` over keys proportionally to ``sizes`` (largest remainder).

    Remainder ties go to the smaller key. Never allocates more than a key's size.
    """
    total = sum(sizes.values())
    if quota >= total:
        return dict(sizes)
    shares = {}
    remainders = []
    for key in sorted(sizes):
        whole, rem = divmod(quota * sizes[key], total)
        shares[key] = whole
        remainders.append((-rem, key))
    left = quota - sum(shares.values())
    for _, key in sorted(remainders)[:left]:
        shares[key] += 1
    return shares


def fuse_recalls(sets: Sequence[RecallSet], policy: FusionPolicy) -> RecallSet:
    """Waterfall fusion of single-source recall sets under ``policy``.

    Per item, candidates from earlier sources come first; a candidate already
    taken from an earlier source is skipped later on, keeping the earlier score.
    """
    by_source = {}
    for s in sets:
        if s.source in by_source:
            raise ValueError(f"two recall sets with source {s.source.value}")
        by_source[s.source] = s
    fused: dict[int, list[RecallEntry]] = {}
    taken: dict[int, set[int]] = {}
    for source, quota in policy.quotas:
        source = Source(source)
        if source not in by_source:
            raise KeyError(f"fusion quota references missing recall set {source.value}")
        rs = by_source[source]
        if rs.hit_rate is not None and rs.hit_rate < policy.min_hit_rate:
            continue
        available = {}
        for item, lst in rs.entries.items():
            seen = taken.get(item, ())
            available[item] = [e for e in lst if e.candidate not in seen]
        shares = allocate(quota, {i: len(v) for i, v in available.items()})
        for item in sorted(available):
            draw = available[item][:shares[item]]
            fused.setdefault(item, []).extend(draw)
            taken.setdefault(item, set()).update(e.candidate for e in draw)
    return RecallSet(Source.FUSED, {i: fused[i] for i in sorted(fused)})
