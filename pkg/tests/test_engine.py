import os
from collections import defaultdict

import pytest
from hypothesis import given, settings, strategies as st

from recall_forge.engine import (EngineConfig, JobStage, KeyedRecord, StageError, identity_mapper,
                                 identity_reducer, left_outer_join, run_pipeline, run_stage)
from recall_forge.engine.extsort import RunBuffer, merge_runs, read_run, write_run


def _words(_, line):
    for w in line.split():
        yield w, 1


def _sum(key, values):
    yield key, sum(values)


LINES = ["a b a", "c b", "a", "", "d d d d"]


def groupby_oracle(mapper, reducer, records):
    groups = defaultdict(list)
    for k, v in records:
        for mk, mv in mapper(k, v):
            groups[mk].append(mv)
    out = []
    for k in sorted(groups):
        out.extend(KeyedRecord(*kv) for kv in reducer(k, sorted(groups[k])))
    return out


class TestRunStage:
    def test_word_count(self, engine):
        out = run_stage(JobStage(_words, _sum), enumerate(LINES), engine)
        assert out == [("a", 3), ("b", 2), ("c", 1), ("d", 4)]

    def test_identity_is_sorted_group(self, engine):
        recs = [(3, "x"), (1, "b"), (3, "a"), (2, "z")]
        out = run_stage(JobStage(identity_mapper, identity_reducer), recs, engine)
        assert out == [(1, "b"), (2, "z"), (3, "a"), (3, "x")]

    def test_empty_input(self, engine):
        assert run_stage(JobStage(_words, _sum), [], engine) == []

    def test_values_arrive_sorted(self, engine):
        seen = {}

        def reducer(k, vs):
            seen[k] = list(vs)
            yield k, len(vs)

        recs = [(1, v) for v in [5, -2, 9, 0, 3]]
        run_stage(JobStage(identity_mapper, reducer), recs, engine)
        assert seen[1] == [-2, 0, 3, 5, 9]

    @pytest.mark.parametrize("workers", [1, 2, 8])
    def test_worker_count_does_not_change_output(self, tmp_path, workers):
        recs = [(i, f"w{i % 37} w{i % 11}") for i in range(3000)]
        base = run_stage(JobStage(_words, _sum, partitions=5), recs, EngineConfig(workers=1, split_size=64))
        cfg = EngineConfig(workers=workers, scratch_dir=str(tmp_path), split_size=64)
        assert run_stage(JobStage(_words, _sum, partitions=5), recs, cfg) == base

    def test_tiny_budget_spills_and_matches(self, tmp_path):
        recs = [(i, f"k{i % 97} k{(i * 7) % 13}") for i in range(5000)]
        stage = JobStage(_words, _sum, partitions=3)
        in_memory = run_stage(stage, recs, EngineConfig(workers=1))
        spilled = run_stage(stage, recs, EngineConfig(workers=3, memory_budget=2048, split_size=100,
                                                      merge_fan_in=2, scratch_dir=str(tmp_path)))
        assert spilled == in_memory
        assert os.listdir(tmp_path) == []

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 20), st.integers(-50, 50)), max_size=200))
    def test_matches_groupby_oracle(self, recs):
        def mapper(k, v):
            yield k % 7, (v, k)

        def reducer(k, vs):
            yield k, tuple(vs)

        cfg = EngineConfig(workers=2, memory_budget=512, split_size=16)
        assert run_stage(JobStage(mapper, reducer), recs, cfg) == groupby_oracle(mapper, reducer, recs)


class TestErrors:
    def test_mapper_failure_names_stage_and_record(self, engine):
        def bad(k, v):
            if v == "boom":
                raise ValueError("nope")
            yield k, v

        stages = [JobStage(identity_mapper, identity_reducer, name="first"),
                  JobStage(bad, identity_reducer, name="second")]
        with pytest.raises(StageError) as info:
            run_pipeline(stages, [(1, "ok"), (2, "boom")], engine)
        err = info.value
        assert (err.stage_index, err.stage_name, err.phase) == (1, "second", "map")
        assert err.record == (2, "boom")

    def test_unserializable_output(self, engine):
        def mapper(k, v):
            yield k, {v}

        with pytest.raises(StageError):
            run_stage(JobStage(mapper, identity_reducer), [(1, 2)], engine)


class TestJoin:
    def test_left_outer_join(self, engine):
        left = [(1, "a"), (2, "b"), (2, "c"), (4, "d")]
        right = [(2, 20), (3, 30), (4, 40), (4, 41)]
        assert left_outer_join(left, right, engine) == [
            (1, ("a", None)), (2, ("b", 20)), (2, ("c", 20)), (4, ("d", 40)), (4, ("d", 41))]


class TestExternalSort:
    def test_run_file_round_trip(self, tmp_path):
        frames = [(b"a", b"1"), (b"b", b""), (b"", b"zz")]
        path = write_run(frames, str(tmp_path))
        assert list(read_run(path)) == frames
        assert not os.path.exists(path)

    def test_merge_with_small_fan_in(self, tmp_path):
        buf = RunBuffer(budget=200, directory=str(tmp_path))
        keys = [bytes([i % 251, i % 7]) for i in range(400)]
        for k in keys:
            buf.add(k, b"v")
        merged = [k for k, _ in merge_runs(buf.sorted_sources(), str(tmp_path), fan_in=2)]
        assert merged == sorted(keys)
