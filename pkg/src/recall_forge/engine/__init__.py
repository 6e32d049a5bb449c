"""Deterministic local MapReduce engine."""

from .codec import SerializationError, decode, encode
from .job import (
    DEFAULT_MEMORY_BUDGET,
    EngineConfig,
    JobStage,
    KeyedRecord,
    StageError,
    identity_mapper,
    identity_reducer,
    left_outer_join,
    run_pipeline,
    run_stage,
)

__all__ = [
    "DEFAULT_MEMORY_BUDGET",
    "EngineConfig",
    "JobStage",
    "KeyedRecord",
    "SerializationError",
    "StageError",
    "decode",
    "encode",
    "identity_mapper",
    "identity_reducer",
    "left_outer_join",
    "run_pipeline",
    "run_stage",
]
