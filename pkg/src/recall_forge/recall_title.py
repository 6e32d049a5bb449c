"""Title-similarity recall over TF-IDF weighted term vectors.

Cosine similarity for every pair of titles sharing a term is computed with an
inverted index on the engine:

1-2. key postings by term; per term, emit the weight product for each
     document pair on the posting list;
3-4. key weights by document and compute each document's norm;
5.   left-outer-join the partial products (keyed by each member document)
     with the norms;
6-7. re-key by document pair, sum the partial products and divide by the
     two norms.
"""

from __future__ import annotations

import math
import threading
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .datamodel import ItemInfo, ItemPair, RecallSet, Source, top_k_recall
from .engine import EngineConfig, JobStage, left_outer_join, run_stage


@dataclass(frozen=True)
class WeightedTermVector:
    doc_id: int
    weights: Mapping[int, float]
    norm: float

    @classmethod
    def from_weights(cls, doc_id: int, weights: Mapping[int, float]) -> "WeightedTermVector":
        ordered = dict(sorted(weights.items()))
        return cls(doc_id, ordered, math.sqrt(math.fsum(w * w for w in ordered.values())))


@dataclass
class CorpusStats:
    m: int
    doc_freq: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        for term, n in self.doc_freq.items():
            if not 1 <= n <= self.m:
                raise ValueError(f"document frequency {n} of term {term} outside [1, {self.m}]")


def compute_tf(items: Iterable[ItemInfo]) -> dict[int, dict[int, int]]:
    """Raw term counts per document."""
    return {it.item_id: dict(sorted(Counter(it.terms).items())) for it in items}


def corpus_stats(tf: Mapping[int, Mapping[int, int]]) -> CorpusStats:
    df: Counter = Counter()
    for counts in tf.values():
        df.update(counts.keys())
    return CorpusStats(len(tf), dict(sorted(df.items())))


def compute_idf(stats: CorpusStats) -> dict[int, float]:
    """Natural-log inverse document frequency, ``ln(m / n_k)``."""
    return {term: math.log(stats.m / n) for term, n in stats.doc_freq.items()}


def compute_tfidf(tf: Mapping[int, Mapping[int, int]], idf: Mapping[int, float]) -> list[WeightedTermVector]:
    out = []
    for doc_id in sorted(tf):
        weights = {}
        for term, count in tf[doc_id].items():
            if term not in idf:
                raise KeyError(f"no idf for term {term} (document {doc_id}); corpus stats are inconsistent")
            weights[term] = count * idf[term]
        out.append(WeightedTermVector.from_weights(doc_id, weights))
    return out


# -- engine jobs ------------------------------------------------------------

def _posting_mapper(doc, term_weight):
    term, weight = term_weight
    yield term, (doc, weight)


def _posting_reducer(term, postings):
    # postings are sorted by doc id, so (hi, lo) = (postings[j], postings[i]) for i < j
    for j in range(1, len(postings)):
        dj, wj = postings[j]
        for i in range(j):
            di, wi = postings[i]
            yield (dj, di), wi * wj


def _norm_mapper(doc, term_weight):
    yield doc, term_weight[1]


def _norm_reducer(doc, weights):
    yield doc, math.sqrt(math.fsum(w * w for w in weights))


def _split_by_member(pair, product):
    hi, lo = pair
    yield hi, (pair, 0, product)
    yield lo, (pair, 1, product)


def _rekey_by_pair(doc, joined):
    (pair, side, product), norm = joined
    yield pair, (side, product, norm)


def _cosine_reducer_factory(counters: Counter):
    lock = threading.Lock()

    def count(name):
        with lock:
            counters[name] += 1

    def reducer(pair, values):
        products = [p for side, p, _ in values if side == 0]
        hi_norms = {n for side, _, n in values if side == 0}
        lo_norms = {n for side, _, n in values if side == 1}
        if None in hi_norms or None in lo_norms or not hi_norms or not lo_norms:
            count("title.pairs_missing_norm")
            return
        (n_hi,), (n_lo,) = hi_norms, lo_norms
        if n_hi == 0 or n_lo == 0:
            count("title.pairs_zero_norm")
            return
        cos = math.fsum(products) / (n_hi * n_lo)
        yield pair, min(1.0, max(0.0, cos))
    return reducer


def pairwise_cosine(vectors: Iterable[WeightedTermVector], config: EngineConfig | None = None,
                    partitions: int = 4, counters: Counter | None = None) -> list[ItemPair]:
    """Cosine similarity of every document pair sharing at least one term.

    Documents with zero norm are skipped and counted under
    ``title.zero_norm_docs``. Output pairs are canonical and sorted.
    """
    counters = counters if counters is not None else Counter()
    postings = []
    for vec in vectors:
        if vec.norm == 0:
            counters["title.zero_norm_docs"] += 1
            continue
        postings.extend((vec.doc_id, (term, w)) for term, w in vec.weights.items())

    products = run_stage(JobStage(_posting_mapper, _posting_reducer, partitions, "title.products"),
                         postings, config)
    norms = run_stage(JobStage(_norm_mapper, _norm_reducer, partitions, "title.norms"),
                      postings, config)
    by_member = (rec for pair, product in products for rec in _split_by_member(pair, product))
    joined = left_outer_join(by_member, norms, config, partitions)
    cosines = run_stage(JobStage(_rekey_by_pair, _cosine_reducer_factory(counters), partitions,
                                 "title.cosine"), joined, config)
    return [ItemPair(hi, lo, score) for (hi, lo), score in cosines]


def title_pairs(items: Iterable[ItemInfo], config: EngineConfig | None = None,
                partitions: int = 4, counters: Counter | None = None) -> list[ItemPair]:
    tf = compute_tf(items)
    vectors = compute_tfidf(tf, compute_idf(corpus_stats(tf)))
    return pairwise_cosine(vectors, config, partitions, counters)


def title_recall(pairs: Iterable[ItemPair], k: int, items: Iterable[int] = ()) -> RecallSet:
    return top_k_recall(pairs, k, Source.TITLE_SIMILARITY, items)
