"""Local, deterministic MapReduce stages.

A stage maps every input record to zero or more ``(key, value)`` pairs,
shuffles them through hash partitions with an external sort, and hands each
key with its complete, sorted value list to the reducer exactly once.
The stage output is the concatenation of reducer outputs in ascending key
order, which makes it independent of worker count and spill behaviour.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import os
import shutil
import tempfile
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, NamedTuple, Sequence

from .codec import SerializationError, decode, encode
from .extsort import RunBuffer, merge_runs

log = logging.getLogger(__name__)

DEFAULT_MEMORY_BUDGET = 256 * 1024 * 1024


class KeyedRecord(NamedTuple):
    key: Any
    value: Any


Mapper = Callable[[Any, Any], Iterable[tuple]]
Reducer = Callable[[Any, list], Iterable[tuple]]


class StageError(RuntimeError):
    """A map or reduce function failed, or a record could not be serialized.

    ``phase`` is ``"map"``, ``"reduce"`` or ``"serialize"``; ``record`` is the
    offending input record (map) or key (reduce); ``stage_index`` is filled in
    by :func:`run_pipeline`.
    """

    def __init__(self, message: str, *, phase: str, record: Any = None,
                 stage_name: str = "", stage_index: int | None = None):
        super().__init__(message)
        self.phase = phase
        self.record = record
        self.stage_name = stage_name
        self.stage_index = stage_index

    def __str__(self) -> str:
        where = []
        if self.stage_index is not None:
            where.append(f"stage {self.stage_index}")
        if self.stage_name:
            where.append(repr(self.stage_name))
        prefix = f"[{' '.join(where)}] " if where else ""
        return prefix + super().__str__()


@dataclass
class EngineConfig:
    """Execution settings. None of these change stage output."""

    workers: int = field(default_factory=lambda: os.cpu_count() or 1)
    memory_budget: int = DEFAULT_MEMORY_BUDGET
    scratch_dir: str | None = None
    split_size: int = 4096
    merge_fan_in: int = 64

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.memory_budget < 1:
            raise ValueError("memory_budget must be positive")
        if self.split_size < 1:
            raise ValueError("split_size must be >= 1")


@dataclass(frozen=True)
class JobStage:
    mapper: Mapper
    reducer: Reducer
    partitions: int = 4
    name: str = ""

    def __post_init__(self):
        if self.partitions < 1:
            raise ValueError("partition count must be >= 1")


def identity_mapper(key, value):
    yield key, value


def identity_reducer(key, values):
    for v in values:
        yield key, v


def _encode_pair(key, value, stage: JobStage, record) -> tuple[bytes, bytes]:
    try:
        return encode(key), encode(value)
    except SerializationError as exc:
        raise StageError(f"cannot serialize {(key, value)!r}: {exc}", phase="serialize",
                         record=record, stage_name=stage.name) from exc


def _map_split(stage: JobStage, split: list, budget: int, scratch: str) -> list[RunBuffer]:
    buffers = [RunBuffer(budget, scratch) for _ in range(stage.partitions)]
    nparts = stage.partitions
    mapper = stage.mapper
    for record in split:
        key, value = record
        try:
            emitted = list(mapper(key, value))
        except Exception as exc:
            raise StageError(f"map failed on record {record!r}: {exc!r}", phase="map",
                             record=record, stage_name=stage.name) from exc
        for out in emitted:
            try:
                okey, ovalue = out
            except (TypeError, ValueError) as exc:
                raise StageError(f"map emitted non-pair {out!r} for record {record!r}",
                                 phase="map", record=record, stage_name=stage.name) from exc
            kb, vb = _encode_pair(okey, ovalue, stage, record)
            part = zlib.crc32(kb) % nparts if nparts > 1 else 0
            buffers[part].add(kb, vb)
    return buffers


def _reduce_partition(stage: JobStage, sources: list, scratch: str, fan_in: int) -> list:
    out = []
    reducer = stage.reducer
    merged = merge_runs(sources, scratch, fan_in)
    for kb, group in itertools.groupby(merged, key=lambda f: f[0]):
        key = decode(kb)
        values = [decode(vb) for _, vb in group]
        try:
            emitted = list(reducer(key, values))
        except Exception as exc:
            raise StageError(f"reduce failed on key {key!r}: {exc!r}", phase="reduce",
                             record=key, stage_name=stage.name) from exc
        results = []
        for pair in emitted:
            try:
                okey, ovalue = pair
            except (TypeError, ValueError) as exc:
                raise StageError(f"reduce emitted non-pair {pair!r} for key {key!r}",
                                 phase="reduce", record=key, stage_name=stage.name) from exc
            try:
                encode(okey), encode(ovalue)
            except SerializationError as exc:
                raise StageError(f"cannot serialize reduce output {pair!r}: {exc}",
                                 phase="serialize", record=key, stage_name=stage.name) from exc
            results.append(KeyedRecord(okey, ovalue))
        out.append((kb, results))
    return out


def _splits(records: Iterable, size: int):
    it = iter(records)
    while True:
        chunk = list(itertools.islice(it, size))
        if not chunk:
            return
        yield chunk


def run_stage(stage: JobStage, records: Iterable, config: EngineConfig | None = None) -> list[KeyedRecord]:
    """Run one map/shuffle/reduce stage over ``(key, value)`` records."""
    config = config or EngineConfig()
    scratch = tempfile.mkdtemp(prefix="stage-", dir=config.scratch_dir)
    workers = config.workers
    budget = max(1, config.memory_budget // (workers * stage.partitions))
    try:
        partition_sources: list[list[RunBuffer]] = [[] for _ in range(stage.partitions)]
        retained: list[RunBuffer] = []

        def collect(buffers: list[RunBuffer]) -> None:
            for p, buf in enumerate(buffers):
                partition_sources[p].append(buf)
            retained.extend(b for b in buffers if b.frames)
            # unspilled tails of finished splits count against the same budget
            if sum(b.used for b in retained) > config.memory_budget:
                for b in retained:
                    b.spill()
                retained.clear()

        splits = _splits(records, config.split_size)
        if workers == 1:
            for split in splits:
                collect(_map_split(stage, split, budget, scratch))
            reduced = [_reduce_partition(stage, [src for buf in bufs for src in buf.sorted_sources()],
                                         scratch, config.merge_fan_in)
                       for bufs in partition_sources]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                pending = []
                for split in splits:
                    pending.append(pool.submit(_map_split, stage, split, budget, scratch))
                    # bound the number of in-flight splits held in memory
                    if len(pending) >= 2 * workers:
                        collect(pending.pop(0).result())
                for fut in pending:
                    collect(fut.result())
                futures = [pool.submit(_reduce_partition, stage,
                                       [src for buf in bufs for src in buf.sorted_sources()],
                                       scratch, config.merge_fan_in)
                           for bufs in partition_sources]
                reduced = [f.result() for f in futures]
        output: list[KeyedRecord] = []
        for _, results in heapq.merge(*reduced, key=lambda item: item[0]):
            output.extend(results)
        log.debug("stage %r: %d output records", stage.name, len(output))
        return output
    finally:
        shutil.rmtree(scratch, ignore_errors=True)


def run_pipeline(stages: Sequence[JobStage], records: Iterable,
                 config: EngineConfig | None = None) -> list[KeyedRecord]:
    """Feed the output of each stage into the next one."""
    if not stages:
        raise ValueError("pipeline needs at least one stage")
    data: Iterable = records
    for index, stage in enumerate(stages):
        try:
            data = run_stage(stage, data, config)
        except StageError as exc:
            exc.stage_index = index
            raise
    return data  # type: ignore[return-value]


def _join_reducer(key, values):
    lefts = [v for side, v in values if side == 0]
    rights = [v for side, v in values if side == 1]
    for left in lefts:
        if rights:
            for right in rights:
                yield key, (left, right)
        else:
            yield key, (left, None)


def left_outer_join(left: Iterable, right: Iterable, config: EngineConfig | None = None,
                    partitions: int = 4) -> list[KeyedRecord]:
    """Join two keyed streams; unmatched left records carry ``None`` on the right.

    Within a key, left values (and right values) are taken in sorted order.
    """
    tagged = itertools.chain(((k, (0, v)) for k, v in left), ((k, (1, v)) for k, v in right))
    stage = JobStage(identity_mapper, _join_reducer, partitions=partitions, name="left_outer_join")
    return run_stage(stage, tagged, config)
