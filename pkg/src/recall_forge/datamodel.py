"""Record types, TSV ingestion and binary persistence of intermediate results.

All inputs are UTF-8, tab-delimited and header-less. Parsers stream: they
yield records as they go and keep only the counters in a :class:`ParseStats`.
"""

from __future__ import annotations

import datetime as dt
import enum
import io
import os
import struct
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, NamedTuple, Sequence

BEHAVIOR_TIME_FORMAT = "%Y-%m-%d %H"
PURCHASE_DATE_FORMAT = "%Y-%m-%d"
DEFAULT_REJECT_THRESHOLD = 0.01


class ParseError(ValueError):
    """Too many malformed lines in an input file, or an unreadable sidecar."""


class ChecksumError(IOError):
    """A persisted artifact is truncated or corrupted."""


class BehaviorType(enum.IntEnum):
    BROWSE = 1
    FAVORITE = 2
    ADD_TO_CART = 3
    BUY = 4


@dataclass(frozen=True)
class BehaviorRecord:
    user_id: int
    item_id: int
    behavior_type: BehaviorType
    geohash: str | None
    item_category: int
    time: dt.datetime


@dataclass(frozen=True)
class ItemInfo:
    item_id: int
    cat_id: int
    terms: tuple[int, ...] = ()
    feature_vector: tuple[float, ...] | None = None


@dataclass(frozen=True)
class MatchPackage:
    coll_id: int
    item_ids: tuple[int, ...]

    def __post_init__(self):
        if len(self.item_ids) < 2:
            raise ValueError(f"package {self.coll_id} has fewer than 2 items")
        if len(set(self.item_ids)) != len(self.item_ids):
            raise ValueError(f"package {self.coll_id} has duplicate items")


@dataclass(frozen=True)
class PurchaseRecord:
    user_id: int
    item_id: int
    create_at: dt.date


class ItemPair(NamedTuple):
    """Unordered item pair stored as ``hi > lo`` with a non-negative score."""

    hi: int
    lo: int
    score: float

    @classmethod
    def of(cls, a: int, b: int, score: float) -> "ItemPair":
        if a == b:
            raise ValueError(f"self-pair ({a}, {b})")
        if score < 0:
            raise ValueError(f"negative pair score {score}")
        return cls(a, b, score) if a > b else cls(b, a, score)


def canonical(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a > b else (b, a)


# --------------------------------------------------------------------------
# Recall sets
# --------------------------------------------------------------------------

class Source(str, enum.Enum):
    CO_PURCHASE = "co_purchase"
    TITLE_SIMILARITY = "title_similarity"
    FUSED = "fused"


class RecallEntry(NamedTuple):
    candidate: int
    score: float
    source: Source


@dataclass
class RecallSet:
    """Per-item candidate lists.

    Lists of single-source sets are ordered by ``(score desc, candidate asc)``.
    Fused lists keep draw order, and each entry remembers its origin source.
    """

    source: Source
    entries: dict[int, list[RecallEntry]] = field(default_factory=dict)
    hit_rate: float | None = None

    def candidates(self, item: int) -> list[int]:
        return [e.candidate for e in self.entries.get(item, [])]

    def pairs(self) -> Iterator[tuple[int, int]]:
        """(query item, candidate) for every entry, queries ascending."""
        for item in sorted(self.entries):
            for e in self.entries[item]:
                yield item, e.candidate

    def __len__(self) -> int:
        return sum(len(v) for v in self.entries.values())

    def check(self) -> None:
        for item, lst in self.entries.items():
            cands = [e.candidate for e in lst]
            if len(set(cands)) != len(cands):
                raise ValueError(f"duplicate candidates for item {item}")
            if item in cands:
                raise ValueError(f"item {item} recalled for itself")
            if self.source is not Source.FUSED:
                keys = [(-e.score, e.candidate) for e in lst]
                if keys != sorted(keys):
                    raise ValueError(f"list for item {item} is not ranked")


def ranked(entries: Iterable[RecallEntry]) -> list[RecallEntry]:
    return sorted(entries, key=lambda e: (-e.score, e.candidate))


def top_k_recall(pairs: Iterable[ItemPair], k: int, source: Source,
                 items: Iterable[int] = ()) -> RecallSet:
    """Top-``k`` counterparts per item, ties broken by ascending candidate id.

    Both members of every pair get the other as a candidate. Ids in ``items``
    that have no pair still appear, with an empty list.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    neighbours: dict[int, list[RecallEntry]] = {i: [] for i in items}
    for hi, lo, score in pairs:
        neighbours.setdefault(hi, []).append(RecallEntry(lo, score, source))
        neighbours.setdefault(lo, []).append(RecallEntry(hi, score, source))
    return RecallSet(source, {i: ranked(lst)[:k] for i, lst in sorted(neighbours.items())})


# --------------------------------------------------------------------------
# TSV ingestion
# --------------------------------------------------------------------------

@dataclass
class ParseStats:
    path: str = ""
    lines: int = 0
    accepted: int = 0
    rejected_lines: list[int] = field(default_factory=list)

    @property
    def rejected(self) -> int:
        return len(self.rejected_lines)

    @property
    def reject_rate(self) -> float:
        return self.rejected / self.lines if self.lines else 0.0


def _parse_lines(path, parse_line, stats: ParseStats | None, threshold: float):
    stats = stats if stats is not None else ParseStats()
    stats.path = str(path)
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            stats.lines += 1
            try:
                record = parse_line(line.split("\t"))
            except (ValueError, IndexError):
                stats.rejected_lines.append(lineno)
                continue
            stats.accepted += 1
            yield record
    if stats.reject_rate > threshold:
        raise ParseError(
            f"{path}: {stats.rejected}/{stats.lines} lines rejected "
            f"({stats.reject_rate:.2%} > {threshold:.2%}); first bad lines: {stats.rejected_lines[:10]}"
        )


def _int_list(text: str) -> tuple[int, ...]:
    text = text.strip()
    return tuple(int(t) for t in text.split(",")) if text else ()


def _expect(cols: list[str], n: int) -> list[str]:
    if len(cols) != n:
        raise ValueError(f"expected {n} columns, got {len(cols)}")
    return cols


def _behavior(cols):
    user, item, btype, geohash, cat, time = _expect(cols, 6)
    return BehaviorRecord(int(user), int(item), BehaviorType(int(btype)), geohash or None,
                          int(cat), dt.datetime.strptime(time, BEHAVIOR_TIME_FORMAT))


def _item(cols):
    item, cat, terms = _expect(cols, 3)
    return ItemInfo(int(item), int(cat), _int_list(terms))


def _package(cols):
    coll, items = _expect(cols, 2)
    return MatchPackage(int(coll), _int_list(items))


def _purchase(cols):
    user, item, date = _expect(cols, 3)
    return PurchaseRecord(int(user), int(item), dt.datetime.strptime(date, PURCHASE_DATE_FORMAT).date())


def parse_behavior_log(path, stats: ParseStats | None = None,
                       reject_threshold: float = DEFAULT_REJECT_THRESHOLD) -> Iterator[BehaviorRecord]:
    """Columns: user_id, item_id, behavior_type (1-4), geohash (may be empty),
    item_category, time (``YYYY-MM-DD HH``)."""
    return _parse_lines(path, _behavior, stats, reject_threshold)


def parse_item_info(path, features_path=None, dim: int | None = None, stats: ParseStats | None = None,
                    reject_threshold: float = DEFAULT_REJECT_THRESHOLD) -> Iterator[ItemInfo]:
    """Columns: item_id, cat_id, comma-separated term ids (may be empty).

    Feature vectors come from an optional sidecar (item_id TAB comma-separated
    reals). The sidecar is loaded up front since it is keyed by item.
    """
    features = load_features(features_path, dim) if features_path else {}
    for info in _parse_lines(path, _item, stats, reject_threshold):
        vec = features.get(info.item_id)
        yield ItemInfo(info.item_id, info.cat_id, info.terms, vec) if vec is not None else info


def parse_match_packages(path, stats: ParseStats | None = None,
                         reject_threshold: float = DEFAULT_REJECT_THRESHOLD) -> Iterator[MatchPackage]:
    """Columns: coll_id, comma-separated item ids (at least two, distinct)."""
    return _parse_lines(path, _package, stats, reject_threshold)


def parse_purchase_history(path, stats: ParseStats | None = None,
                           reject_threshold: float = DEFAULT_REJECT_THRESHOLD) -> Iterator[PurchaseRecord]:
    """Columns: user_id, item_id, create_at (``YYYY-MM-DD``)."""
    return _parse_lines(path, _purchase, stats, reject_threshold)


def load_features(path, dim: int | None = None) -> dict[int, tuple[float, ...]]:
    features: dict[int, tuple[float, ...]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                item, values = line.rstrip("\r\n").split("\t")
                vec = tuple(float(v) for v in values.split(","))
                item_id = int(item)
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: bad feature line: {exc}") from exc
            if dim is None:
                dim = len(vec)
            if len(vec) != dim:
                raise ParseError(f"{path}:{lineno}: feature dimension {len(vec)} != {dim}")
            features[item_id] = vec
    return features


def format_behavior(r: BehaviorRecord) -> str:
    return "\t".join([str(r.user_id), str(r.item_id), str(int(r.behavior_type)), r.geohash or "",
                      str(r.item_category), r.time.strftime(BEHAVIOR_TIME_FORMAT)])


def format_item(r: ItemInfo) -> str:
    return f"{r.item_id}\t{r.cat_id}\t{','.join(map(str, r.terms))}"


def format_package(r: MatchPackage) -> str:
    return f"{r.coll_id}\t{','.join(map(str, r.item_ids))}"


def format_purchase(r: PurchaseRecord) -> str:
    return f"{r.user_id}\t{r.item_id}\t{r.create_at.strftime(PURCHASE_DATE_FORMAT)}"


def format_features(item_id: int, vec: Sequence[float]) -> str:
    return f"{item_id}\t{','.join(repr(float(v)) for v in vec)}"


# --------------------------------------------------------------------------
# Binary persistence
# --------------------------------------------------------------------------
# Layout: magic (8 bytes) | u64 record count | records | u32 crc32 of all
# preceding bytes. Pairs are (i64 hi, i64 lo, f64 score).

_PAIR_MAGIC = b"RFPAIRS1"
_RECALL_MAGIC = b"RFRECAL1"
_PAIR = struct.Struct(">qqd")
_U64 = struct.Struct(">Q")
_U32 = struct.Struct(">I")
_SOURCES = list(Source)


def _write_atomic(path, payload: bytes) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
        fh.write(_U32.pack(zlib.crc32(payload)))
    os.replace(tmp, path)


def _read_checked(path, magic: bytes) -> io.BytesIO:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(magic) + 4 or not data.startswith(magic):
        raise ChecksumError(f"{path}: missing header or truncated")
    payload, (crc,) = data[:-4], _U32.unpack(data[-4:])
    if zlib.crc32(payload) != crc:
        raise ChecksumError(f"{path}: checksum mismatch")
    buf = io.BytesIO(payload)
    buf.seek(len(magic))
    return buf


def persist_pairs(pairs: Iterable[ItemPair], path) -> None:
    body = bytearray(_PAIR_MAGIC)
    records = bytearray()
    n = 0
    for hi, lo, score in pairs:
        records += _PAIR.pack(hi, lo, score)
        n += 1
    body += _U64.pack(n) + records
    _write_atomic(path, bytes(body))


def load_pairs(path) -> list[ItemPair]:
    buf = _read_checked(path, _PAIR_MAGIC)
    (n,) = _U64.unpack(buf.read(8))
    raw = buf.read()
    if len(raw) != n * _PAIR.size:
        raise ChecksumError(f"{path}: record count does not match payload")
    return [ItemPair(*t) for t in _PAIR.iter_unpack(raw)]


def persist_recall(recall: RecallSet, path) -> None:
    """Layout after the magic: u8 source, u8 has_hit_rate, f64 hit_rate,
    u64 item count, then per item: i64 id, u64 n, n x (i64 cand, f64 score, u8 source)."""
    body = bytearray(_RECALL_MAGIC)
    body += struct.pack(">BBd", _SOURCES.index(recall.source), recall.hit_rate is not None,
                        recall.hit_rate or 0.0)
    body += _U64.pack(len(recall.entries))
    for item in sorted(recall.entries):
        lst = recall.entries[item]
        body += struct.pack(">qQ", item, len(lst))
        for e in lst:
            body += struct.pack(">qdB", e.candidate, e.score, _SOURCES.index(Source(e.source)))
    _write_atomic(path, bytes(body))


def load_recall(path) -> RecallSet:
    buf = _read_checked(path, _RECALL_MAGIC)
    try:
        src, has_hr, hr = struct.unpack(">BBd", buf.read(10))
        (n_items,) = _U64.unpack(buf.read(8))
        entries = {}
        for _ in range(n_items):
            item, n = struct.unpack(">qQ", buf.read(16))
            lst = []
            for _ in range(n):
                cand, score, s = struct.unpack(">qdB", buf.read(17))
                lst.append(RecallEntry(cand, score, _SOURCES[s]))
            entries[item] = lst
    except struct.error as exc:
        raise ChecksumError(f"{path}: malformed recall set: {exc}") from exc
    return RecallSet(_SOURCES[src], entries, hr if has_hr else None)


def item_lookup(items: Iterable[ItemInfo]) -> Mapping[int, ItemInfo]:
    return {it.item_id: it for it in items}
