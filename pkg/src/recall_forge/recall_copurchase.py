"""Co-purchase recall: how many users bought both items within a time window.

Two MapReduce steps. The first groups purchases by user and emits every item
pair the user bought within ``tau`` days of each other; the second groups by
pair and counts distinct users.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .datamodel import ItemPair, PurchaseRecord, RecallSet, Source, top_k_recall
from .engine import EngineConfig, JobStage, KeyedRecord, run_stage

DEFAULT_TAU_DAYS = 60.0


@dataclass(frozen=True)
class TimeWindow:
    days: float = DEFAULT_TAU_DAYS

    def __post_init__(self):
        if not self.days > 0:
            raise ValueError(f"time window must be positive, got {self.days}")


def user_pairs(purchases: Iterable[tuple[int, int]], tau_days: float) -> list[tuple[int, int]]:
    """Canonical pairs from one user's ``(item, day)`` purchases.

    A pair qualifies if some purchase of one item and some purchase of the
    other are at most ``tau_days`` apart. Each pair is reported once.
    """
    events = sorted((day, item) for item, day in purchases)
    found = set()
    start = 0
    for end, (day, item) in enumerate(events):
        while day - events[start][0] > tau_days:
            start += 1
        for other_day, other in events[start:end]:
            if other != item:
                found.add((item, other) if item > other else (other, item))
    return sorted(found)


def _by_user(tau_days: float):
    def mapper(_, purchase):
        user, item, day = purchase
        yield user, (item, day)

    def reducer(user, values):
        pairs = user_pairs(values, tau_days)
        if pairs:
            yield user, tuple(pairs)

    return mapper, reducer


def _purchase_records(purchases: Iterable[PurchaseRecord]):
    for i, p in enumerate(purchases):
        yield i, (p.user_id, p.item_id, p.create_at.toordinal())


def build_user_baskets(purchases: Iterable[PurchaseRecord], tau: TimeWindow,
                       config: EngineConfig | None = None, partitions: int = 4) -> list[KeyedRecord]:
    """First step: ``(user, ((hi, lo), ...))`` for users with at least one pair."""
    mapper, reducer = _by_user(tau.days)
    stage = JobStage(mapper, reducer, partitions, name="copurchase.baskets")
    return run_stage(stage, _purchase_records(purchases), config)


def _pair_mapper(user, pairs):
    for pair in pairs:
        yield tuple(pair), user


def _count_reducer(pair, users):
    # users arrive sorted, so distinct count is a run-length count
    distinct = sum(1 for i, u in enumerate(users) if i == 0 or u != users[i - 1])
    yield pair, distinct


def count_pairs(baskets: Iterable[tuple], config: EngineConfig | None = None,
                partitions: int = 4) -> list[ItemPair]:
    """Second step: number of distinct users per canonical pair, keys ascending."""
    stage = JobStage(_pair_mapper, _count_reducer, partitions, name="copurchase.count")
    return [ItemPair(hi, lo, float(n)) for (hi, lo), n in run_stage(stage, baskets, config)]


def copurchase_pairs(purchases: Iterable[PurchaseRecord], tau: TimeWindow,
                     config: EngineConfig | None = None, partitions: int = 4) -> list[ItemPair]:
    return count_pairs(build_user_baskets(purchases, tau, config, partitions), config, partitions)


def copurchase_recall(pairs: Iterable[ItemPair], k: int, items: Iterable[int] = ()) -> RecallSet:
    return top_k_recall(pairs, k, Source.CO_PURCHASE, items)
