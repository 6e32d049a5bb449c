"""Pipeline configuration: a flat ``key = value`` file with dotted section prefixes.

Example::

    # comments start with '#'
    paths.purchases = data/purchases.tsv
    copurchase.tau_days = 30
    fusion.quota.co_purchase = 88500

Unknown keys and out-of-range values are rejected before any work starts.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Any, Callable, Mapping

from .datamodel import Source
from .engine import DEFAULT_MEMORY_BUDGET, EngineConfig
from .fusion import CategoryRule, FusionPolicy, whitelist_of
from .ranker import LRHyperParams

SCRATCH_ENV = "RECALL_FORGE_SCRATCH"


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _positive(v):
    return v > 0


def _non_negative(v):
    return v >= 0


def _unit(v):
    return 0.0 <= v <= 1.0


def _one_of(*choices):
    def check(v):
        return v in choices
    check.__doc__ = "one of " + ", ".join(choices)
    return check


def _source_list(v: str):
    names = [s.strip() for s in v.split(",") if s.strip()]
    return len(names) == len(set(names)) and all(n in ("co_purchase", "title_similarity") for n in names)


def _whitelist(v: str):
    try:
        parse_whitelist(v)
    except ValueError:
        return False
    return True


@dataclass(frozen=True)
class Key:
    name: str
    type: Callable[[str], Any]
    default: Any
    check: Callable[[Any], bool] | None = None
    help: str = ""


KEYS: list[Key] = [
    Key("paths.purchases", str, "", help="purchase history TSV (user, item, YYYY-MM-DD)"),
    Key("paths.items", str, "", help="item info TSV (item, category, comma-separated term ids)"),
    Key("paths.features", str, "", help="feature sidecar TSV (item, comma-separated reals)"),
    Key("paths.packages", str, "", help="match packages TSV (package, comma-separated items)"),
    Key("paths.truth", str, "", help="ground-truth pairs TSV (hi, lo, ...) for evaluation"),
    Key("paths.behavior", str, "", help="behavior log TSV, only validated by ingest"),
    Key("paths.scratch", str, "", help=f"spill directory; ${SCRATCH_ENV} overrides"),
    Key("paths.output", str, "recall_forge_out", help="artifact directory"),
    Key("ingest.reject_threshold", float, 0.01, _unit, "max fraction of malformed lines per file"),
    Key("copurchase.tau_days", float, 60.0, _positive, "co-purchase window in days (inclusive)"),
    Key("copurchase.top_k", int, 50, _positive, "candidates kept per item"),
    Key("title.top_k", int, 50, _positive, "candidates kept per item"),
    Key("fusion.order", str, "co_purchase,title_similarity", _source_list, "draw priority"),
    Key("fusion.quota.co_purchase", int, 88500, _non_negative, "global draw budget"),
    Key("fusion.quota.title_similarity", int, 16500, _non_negative, "global draw budget"),
    Key("fusion.category_rule", str, "cross_category_only",
        _one_of("cross_category_only", "allow_all", "whitelist"), "category filter"),
    Key("fusion.category_whitelist", str, "", _whitelist, "allowed category pairs, e.g. 2:7,3:4"),
    Key("fusion.min_hit_rate", float, 0.0, _unit, "skip sets whose hit rate is below this"),
    Key("fusion.hit_rate.co_purchase", str, "", help="fixed hit rate; empty = measure from truth"),
    Key("fusion.hit_rate.title_similarity", str, "", help="fixed hit rate; empty = measure from truth"),
    Key("ranker.max_iterations", int, 1000, _non_negative),
    Key("ranker.convergence_error", float, 1e-6, _non_negative),
    Key("ranker.l1", float, 1.0, _non_negative),
    Key("ranker.learning_rate", float, 0.1, _positive),
    Key("ranker.negative_ratio", float, 1.0, _positive),
    Key("ranker.base", str, "auto", _one_of("auto", "minmax", "position"),
        "original-score normalization before adding the correction"),
    Key("seed", int, 42, help="negative sampling seed"),
    Key("engine.workers", int, 0, _non_negative, "0 = available parallelism"),
    Key("engine.memory_budget", int, DEFAULT_MEMORY_BUDGET, _positive, "shuffle buffer bytes"),
    Key("engine.partitions", int, 4, _positive),
    Key("eval.k", int, 200, _positive, "MAP cutoff"),
    Key("eval.f1_top", int, 1, _positive, "entries per query counted as predictions for F1"),
    Key("report.figures", _bool, True, help="render PNG figures next to the report"),
]
KEY_INDEX = {k.name: k for k in KEYS}


def parse_whitelist(text: str) -> list[tuple[int, int]]:
    out = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        a, b = chunk.split(":")
        out.append((int(a), int(b)))
    return out


class PipelineConfig(Mapping[str, Any]):
    """Validated configuration values, indexed by dotted key."""

    def __init__(self, values: Mapping[str, Any] | None = None):
        self._values = {k.name: k.default for k in KEYS}
        for name, raw in (values or {}).items():
            self._values[name] = coerce(name, raw)
        self._check_fusion()

    def _check_fusion(self):
        if self["fusion.category_rule"] == "whitelist" and not self["fusion.category_whitelist"]:
            raise ConfigError("fusion.category_rule = whitelist needs fusion.category_whitelist")
        for src in ("co_purchase", "title_similarity"):
            raw = self[f"fusion.hit_rate.{src}"]
            if raw:
                try:
                    ok = _unit(float(raw))
                except ValueError:
                    ok = False
                if not ok:
                    raise ConfigError(f"fusion.hit_rate.{src}: {raw!r} is not a rate in [0, 1]")

    def __getitem__(self, key: str) -> Any:
        return self._values[key]

    def __iter__(self):
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def updated(self, overrides: Mapping[str, Any]) -> "PipelineConfig":
        values = dict(self._values)
        values.update(overrides)
        return PipelineConfig(values)

    @property
    def scratch(self) -> str | None:
        return os.environ.get(SCRATCH_ENV) or self["paths.scratch"] or None

    def engine(self) -> EngineConfig:
        kwargs = {"memory_budget": self["engine.memory_budget"], "scratch_dir": self.scratch}
        if self["engine.workers"]:
            kwargs["workers"] = self["engine.workers"]
        return EngineConfig(**kwargs)

    def hyperparams(self) -> LRHyperParams:
        return LRHyperParams(self["ranker.max_iterations"], self["ranker.convergence_error"],
                             self["ranker.l1"], self["ranker.learning_rate"])

    def fusion_policy(self) -> FusionPolicy:
        order = [Source(s.strip()) for s in self["fusion.order"].split(",") if s.strip()]
        return FusionPolicy(
            quotas=tuple((s, self[f"fusion.quota.{s.value}"]) for s in order),
            category_rule=CategoryRule(self["fusion.category_rule"]),
            whitelist=whitelist_of(parse_whitelist(self["fusion.category_whitelist"])),
            min_hit_rate=self["fusion.min_hit_rate"],
        )

    def fixed_hit_rate(self, source: Source) -> float | None:
        raw = self[f"fusion.hit_rate.{source.value}"]
        return float(raw) if raw else None

    def dumps(self) -> str:
        return "".join(f"{k} = {_render(self[k])}\n" for k in self)


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def coerce(name: str, raw: Any) -> Any:
    key = KEY_INDEX.get(name)
    if key is None:
        raise ConfigError(f"unknown configuration key {name!r}")
    try:
        value = key.type(raw) if isinstance(raw, str) or key.type is not _bool else bool(raw)
        if key.type is int and isinstance(raw, float) and raw != int(raw):
            raise ValueError("not an integer")
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: cannot parse {raw!r}: {exc}") from exc
    if key.check is not None and not key.check(value):
        raise ConfigError(f"{name}: value {value!r} out of range")
    return value


def parse_config_text(text: str, origin: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value'")
        name, _, value = line.partition("=")
        name = name.strip()
        if name not in KEY_INDEX:
            raise ConfigError(f"{origin}:{lineno}: unknown configuration key {name!r}")
        if name in values:
            raise ConfigError(f"{origin}:{lineno}: duplicate key {name!r}")
        values[name] = value.strip()
    return values


def load_config(path=None, overrides: Mapping[str, Any] | None = None) -> PipelineConfig:
    """Read a config file (optional) and apply overrides on top.

    Relative ``paths.*`` values in the file are resolved against the file's
    directory.
    """
    values: dict[str, Any] = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            values = parse_config_text(fh.read(), str(path))
        base = os.path.dirname(os.path.abspath(path))
        for name, v in values.items():
            if name.startswith("paths.") and v and not os.path.isabs(v):
                values[name] = os.path.join(base, v)
    values.update(overrides or {})
    return PipelineConfig(values)
