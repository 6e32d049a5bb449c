"""Seeded synthetic datasets with planted collocation structure.

Each planted pair (two items from different categories) is

* bought together, within the time window, by an exact number of users,
* given three title terms that no other item uses, and
* given near-identical feature vectors.

Every planted item also gets "decoy" partners that are co-purchased more
often than its true partner but whose features are unrelated, so that raw
co-purchase order ranks the true partner below the decoys. Training match
packages are built the same way from non-planted items.

Ground truth (pair, exact in-window user count, TF-IDF cosine) is written to
``truth.tsv``. The cosine is computed here with a dense matrix product,
independently of the engine job.
"""

from __future__ import annotations

import datetime as dt
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from . import datamodel as dm

START_DATE = dt.date(2014, 11, 18)
SPAN_DAYS = 120
# term ids at or above this are reserved for planted pairs
PLANTED_TERM_BASE = 100_000


@dataclass(frozen=True)
class SynthSpec:
    users: int = 400
    items: int = 300
    packages: int = 40
    planted: int = 50
    tau_days: float = 30.0
    seed: int = 7
    categories: int = 6
    feature_dim: int = 8
    vocab: int = 400
    decoys: tuple[int, int] = (1, 3)
    planted_freq: tuple[int, int] = (4, 9)
    noise_purchases: int = 3

    def __post_init__(self):
        for name in ("users", "items", "categories", "feature_dim", "vocab"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.packages < 0 or self.planted < 0:
            raise ValueError("packages and planted must be non-negative")
        if not self.tau_days > 0:
            raise ValueError("tau_days must be positive")
        if self.categories < 2:
            raise ValueError("need at least two categories for cross-category pairs")


@dataclass
class SynthDataset:
    items: list[dm.ItemInfo]
    purchases: list[dm.PurchaseRecord]
    behaviors: list[dm.BehaviorRecord]
    packages: list[dm.MatchPackage]
    truth: list[tuple[int, int, int, float]]
    decoys: dict[int, list[int]] = field(default_factory=dict)


class _Users:
    """Hands out users for co-purchase events without disturbing planted counts."""

    def __init__(self, n: int, rng: np.random.Generator, partner: dict[int, int]):
        self.n = n
        self.rng = rng
        self.partner = partner
        self.owned: dict[int, set[int]] = defaultdict(set)

    def pick(self, items, allow_pair: tuple[int, int] | None = None) -> int:
        for _ in range(200):
            u = int(self.rng.integers(1, self.n + 1))
            owned = self.owned[u]
            if any(it in owned for it in items):
                continue
            bad = False
            for it in items:
                mate = self.partner.get(it)
                if mate is None:
                    continue
                if mate in owned:
                    bad = True
                if mate in items and (allow_pair is None or {it, mate} != set(allow_pair)):
                    bad = True
            if not bad:
                owned.update(items)
                return u
        raise ValueError("not enough users to place co-purchase events without collisions; raise users")


def dense_cosines(items: list[dm.ItemInfo], pairs) -> dict[tuple[int, int], float]:
    """Cosine of TF-IDF vectors for the given pairs via a dense matrix."""
    ids = [it.item_id for it in items]
    row = {i: n for n, i in enumerate(ids)}
    terms = sorted({t for it in items for t in it.terms})
    col = {t: n for n, t in enumerate(terms)}
    tf = np.zeros((len(ids), len(terms)))
    for it in items:
        for t in it.terms:
            tf[row[it.item_id], col[t]] += 1
    df = (tf > 0).sum(axis=0)
    w = tf * np.log(len(ids) / np.maximum(df, 1))
    norms = np.linalg.norm(w, axis=1)
    out = {}
    for a, b in pairs:
        na, nb = norms[row[a]], norms[row[b]]
        out[(a, b)] = float(w[row[a]] @ w[row[b]] / (na * nb)) if na > 0 and nb > 0 else 0.0
    return out


def generate(spec: SynthSpec) -> SynthDataset:
    rng = np.random.default_rng(spec.seed)
    n_items = spec.items
    needed = 2 * spec.planted + 2 * spec.packages
    if needed > n_items:
        raise ValueError(f"{spec.planted} planted pairs and {spec.packages} packages need {needed} items")
    ids = list(range(1, n_items + 1))
    cats = {i: int(rng.integers(1, spec.categories + 1)) for i in ids}
    style = {i: rng.normal(size=spec.feature_dim) for i in ids}
    titles = {i: [int(t) for t in rng.integers(1, spec.vocab + 1, size=int(rng.integers(3, 7)))] for i in ids}

    order = [int(i) for i in rng.permutation(ids)]
    planted_items, package_items, rest = (order[:2 * spec.planted],
                                          order[2 * spec.planted:needed], order[needed:])
    partner: dict[int, int] = {}
    planted = []
    for n in range(spec.planted):
        a, b = planted_items[2 * n], planted_items[2 * n + 1]
        if cats[a] == cats[b]:
            cats[b] = cats[a] % spec.categories + 1
        style[b] = style[a] + rng.normal(scale=0.05, size=spec.feature_dim)
        shared = [PLANTED_TERM_BASE + 3 * n + j for j in range(3)]
        titles[a] += shared
        titles[b] += shared
        partner[a], partner[b] = b, a
        planted.append(dm.canonical(a, b))

    packages = []
    for n in range(spec.packages):
        a, b = package_items[2 * n], package_items[2 * n + 1]
        if cats[a] == cats[b]:
            cats[b] = cats[a] % spec.categories + 1
        style[b] = style[a] + rng.normal(scale=0.05, size=spec.feature_dim)
        packages.append(dm.MatchPackage(n + 1, (a, b)))

    users = _Users(spec.users, rng, partner)
    purchases: list[tuple[int, int, int]] = []  # (user, item, day offset)
    window = int(math.floor(spec.tau_days))
    span = max(SPAN_DAYS, 3 * window + 3)

    def event(items_, days, allow_pair=None):
        u = users.pick(items_, allow_pair)
        for it, d in zip(items_, days):
            purchases.append((u, it, d))

    freq = {}
    decoys: dict[int, list[int]] = {}
    decoy_pool = rest or package_items
    for a, b in ((planted_items[2 * n], planted_items[2 * n + 1]) for n in range(spec.planted)):
        f = int(rng.integers(spec.planted_freq[0], spec.planted_freq[1] + 1))
        freq[dm.canonical(a, b)] = f
        for _ in range(f):
            d0 = int(rng.integers(0, span - window))
            event((a, b), (d0, d0 + int(rng.integers(0, window + 1))), allow_pair=(a, b))
        # bought both, but too far apart to count
        for _ in range(int(rng.integers(0, 3))):
            d0 = int(rng.integers(0, span - window - 2))
            gap = window + 1 + int(rng.integers(0, span - window - 1 - d0))
            if d0 + gap < span:
                event((a, b), (d0, d0 + gap), allow_pair=(a, b))
        for it in (a, b):
            n_dec = int(rng.integers(spec.decoys[0], spec.decoys[1] + 1))
            choices = [d for d in decoy_pool if cats[d] != cats[it]]
            picks = [choices[int(j)] for j in rng.choice(len(choices), size=min(n_dec, len(choices)),
                                                         replace=False)]
            decoys[it] = picks
            for d in picks:
                for _ in range(f + int(rng.integers(1, 5))):
                    d0 = int(rng.integers(0, span - window))
                    event((it, d), (d0, d0 + int(rng.integers(0, window + 1))))

    background = [i for i in ids if i not in partner]
    for u in range(1, spec.users + 1):
        for _ in range(int(rng.integers(0, spec.noise_purchases + 1))):
            it = background[int(rng.integers(0, len(background)))]
            purchases.append((u, it, int(rng.integers(0, span))))

    purchases.sort()
    purchase_records = [dm.PurchaseRecord(u, it, START_DATE + dt.timedelta(days=d)) for u, it, d in purchases]
    behaviors = []
    for u, it, d in purchases:
        when = dt.datetime.combine(START_DATE + dt.timedelta(days=d), dt.time(int(rng.integers(0, 24))))
        geo = None if rng.random() < 0.5 else f"9{int(rng.integers(0, 36 ** 4)):06x}"
        if rng.random() < 0.5:
            behaviors.append(dm.BehaviorRecord(u, it, dm.BehaviorType.BROWSE, geo, cats[it], when))
        behaviors.append(dm.BehaviorRecord(u, it, dm.BehaviorType.BUY, geo, cats[it], when))

    items = [dm.ItemInfo(i, cats[i], tuple(titles[i]), tuple(float(x) for x in np.round(style[i], 6)))
             for i in ids]
    cos = dense_cosines(items, planted)
    truth = [(hi, lo, freq[(hi, lo)], cos[(hi, lo)]) for hi, lo in sorted(planted)]
    return SynthDataset(items, purchase_records, behaviors, packages, truth, decoys)


FILES = {
    "purchases": "purchases.tsv",
    "items": "items.tsv",
    "features": "features.tsv",
    "packages": "packages.tsv",
    "behavior": "behavior.tsv",
    "truth": "truth.tsv",
    "config": "pipeline.conf",
}


def write_dataset(ds: SynthDataset, out_dir, spec: SynthSpec | None = None) -> dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = {k: os.path.join(out_dir, v) for k, v in FILES.items()}

    def dump(path, lines):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for line in lines:
                fh.write(line + "\n")

    dump(paths["purchases"], map(dm.format_purchase, ds.purchases))
    dump(paths["items"], map(dm.format_item, ds.items))
    dump(paths["features"], (dm.format_features(it.item_id, it.feature_vector) for it in ds.items))
    dump(paths["packages"], map(dm.format_package, ds.packages))
    dump(paths["behavior"], map(dm.format_behavior, ds.behaviors))
    dump(paths["truth"], (f"{hi}\t{lo}\t{f}\t{c!r}" for hi, lo, f, c in ds.truth))
    tau = spec.tau_days if spec else 30.0
    dump(paths["config"], [
        "# generated by recall-forge synth",
        f"paths.purchases = {FILES['purchases']}",
        f"paths.items = {FILES['items']}",
        f"paths.features = {FILES['features']}",
        f"paths.packages = {FILES['packages']}",
        f"paths.truth = {FILES['truth']}",
        f"paths.behavior = {FILES['behavior']}",
        "paths.output = out",
        f"copurchase.tau_days = {tau}",
    ])
    return paths


def generate_synthetic(out_dir, spec: SynthSpec | None = None) -> dict[str, str]:
    spec = spec or SynthSpec()
    return write_dataset(generate(spec), out_dir, spec)


def load_truth(path) -> list[tuple[int, int]]:
    """Canonical pairs from a truth TSV whose first two columns are item ids."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            cols = line.rstrip("\r\n").split("\t")
            try:
                pairs.append(dm.canonical(int(cols[0]), int(cols[1])))
            except (ValueError, IndexError) as exc:
                raise dm.ParseError(f"{path}:{lineno}: bad truth line") from exc
    return pairs
