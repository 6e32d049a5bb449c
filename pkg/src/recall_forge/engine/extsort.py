"""Sorted runs of (key, value) byte frames, spilled to disk and merged back.

A run file is a sequence of frames ``[u32 key_len][key][u32 value_len][value]``
(big-endian lengths). Frames inside a run are sorted by ``(key, value)``.
"""

from __future__ import annotations

import heapq
import os
import struct
import tempfile
from typing import Iterable, Iterator

_LEN = struct.Struct(">I")
# Rough per-frame bookkeeping cost of a buffered (bytes, bytes) tuple.
FRAME_OVERHEAD = 120

Frame = tuple[bytes, bytes]


def frame_size(key: bytes, value: bytes) -> int:
    return len(key) + len(value) + FRAME_OVERHEAD


def write_run(frames: Iterable[Frame], directory: str | None) -> str:
    """Write already-sorted frames to a new temporary run file and return its path."""
    fd, path = tempfile.mkstemp(prefix="run-", suffix=".bin", dir=directory)
    pack = _LEN.pack
    with os.fdopen(fd, "wb", buffering=1 << 16) as fh:
        write = fh.write
        for key, value in frames:
            write(pack(len(key)))
            write(key)
            write(pack(len(value)))
            write(value)
    return path


def read_run(path: str, delete: bool = True) -> Iterator[Frame]:
    """Stream the frames of a run file, removing the file once exhausted."""
    try:
        with open(path, "rb", buffering=1 << 16) as fh:
            read = fh.read
            unpack = _LEN.unpack
            while True:
                head = read(4)
                if not head:
                    return
                if len(head) != 4:
                    raise OSError(f"truncated run file {path}")
                key = read(unpack(head)[0])
                vhead = read(4)
                if len(vhead) != 4:
                    raise OSError(f"truncated run file {path}")
                value = read(unpack(vhead)[0])
                yield key, value
    finally:
        if delete:
            try:
                os.unlink(path)
            except FileNotFoundError:
                pass


class RunBuffer:
    """Accumulates frames in memory and spills sorted runs past a byte budget."""

    def __init__(self, budget: int, directory: str | None):
        self.budget = max(1, budget)
        self.directory = directory
        self.frames: list[Frame] = []
        self.used = 0
        self.runs: list[str] = []

    def add(self, key: bytes, value: bytes) -> None:
        self.frames.append((key, value))
        self.used += frame_size(key, value)
        if self.used >= self.budget:
            self.spill()

    def spill(self) -> None:
        if not self.frames:
            return
        self.frames.sort()
        self.runs.append(write_run(self.frames, self.directory))
        self.frames = []
        self.used = 0

    def sorted_sources(self) -> list:
        """Return iterables (spilled runs plus the in-memory tail), each sorted."""
        self.frames.sort()
        sources: list = [read_run(p) for p in self.runs]
        if self.frames:
            sources.append(self.frames)
        return sources


def merge_runs(sources: list, directory: str | None, fan_in: int = 64) -> Iterator[Frame]:
    """K-way merge of sorted frame sources.

    When there are more than ``fan_in`` sources, groups are pre-merged into
    intermediate runs so that at most ``fan_in`` files are open at once.
    """
    fan_in = max(2, fan_in)
    while len(sources) > fan_in:
        merged = []
        for i in range(0, len(sources), fan_in):
            group = sources[i:i + fan_in]
            merged.append(read_run(write_run(heapq.merge(*group), directory)))
        sources = merged
    if len(sources) == 1:
        return iter(sources[0])
    return heapq.merge(*sources)
