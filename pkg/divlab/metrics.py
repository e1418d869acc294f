"""Instruction histograms and similarity scores between programs."""
import logging
from collections import Counter
from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np
import pandas as pd

from divlab.analysis import build_cfg
from divlab.errors import MetricError
from divlab.isa import Program

log = logging.getLogger(__name__)

METRICS = ("S", "jaccard_pairs", "jaccard_weighted", "cfg")
HISTOGRAM_MODES = ("mnemonic", "instruction")


@dataclass(frozen=True)
class NgramHistogram:
    n: int
    counts: Mapping[Tuple[str, ...], int]
    total: int

    @classmethod
    def from_counts(cls, counts: Mapping, n: int = 1):
        """Build from {key: count}; single-mnemonic string keys are accepted for n = 1."""
        normalized = Counter()
        for key, count in counts.items():
            if isinstance(key, str):
                key = (key,)
            if len(key) != n:
                raise MetricError(f"key {key} does not have length {n}")
            if count:
                normalized[tuple(key)] += int(count)
        return cls(n, dict(normalized), sum(normalized.values()))

    def frequencies(self):
        if self.total == 0:
            return {}
        return {k: c / self.total for k, c in self.counts.items()}

    def pairs(self):
        return frozenset(self.counts.items())


@dataclass(frozen=True)
class SimilarityScore:
    value: float
    metric: str

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise MetricError(f"{self.metric} score {self.value} outside [0, 1]")

    def __float__(self):
        return self.value


def _key(insn, mode):
    return insn.mnemonic if mode == "mnemonic" else str(insn)


def mnemonic_histogram(p: Program, n: int, mode: str = "mnemonic") -> NgramHistogram:
    """n-grams of mnemonics (or whole instructions) counted inside basic blocks."""
    if n < 1:
        raise MetricError("gram length must be >= 1")
    if mode not in HISTOGRAM_MODES:
        raise MetricError(f"unknown histogram mode {mode!r}")
    counts = Counter()
    for f in p.functions:
        for b in f.blocks:
            keys = [_key(i, mode) for i in b.instructions]
            for start in range(len(keys) - n + 1):
                counts[tuple(keys[start:start + n])] += 1
    return NgramHistogram(n, dict(counts), sum(counts.values()))


def freq(h: NgramHistogram, key) -> float:
    if h.total == 0:
        raise MetricError("frequency of an empty histogram is undefined")
    if isinstance(key, str):
        key = (key,)
    return h.counts.get(tuple(key), 0) / h.total


def _same_n(a, b):
    if a.n != b.n:
        raise MetricError(f"gram lengths differ: {a.n} vs {b.n}")


def _clamp(value):
    return min(1.0, max(0.0, value))


def similarity_S(a: NgramHistogram, b: NgramHistogram) -> SimilarityScore:
    _same_n(a, b)
    if a.total == 0 and b.total == 0:
        log.warning("S of two empty histograms taken as 1")
        return SimilarityScore(1.0, "S")
    if a.total == 0 or b.total == 0:
        raise MetricError("S is undefined against an empty histogram")
    fa, fb = a.frequencies(), b.frequencies()
    keys = sorted(set(fa) | set(fb))
    distance = sum(abs(fa.get(k, 0.0) - fb.get(k, 0.0)) ** 2 for k in keys)
    return SimilarityScore(_clamp(1.0 - distance / 2.0), "S")


def jaccard_pairs(a: NgramHistogram, b: NgramHistogram) -> SimilarityScore:
    """|A ∩ B| / |A ∪ B| over sets of (key, count) pairs."""
    _same_n(a, b)
    pa, pb = a.pairs(), b.pairs()
    union = pa | pb
    if not union:
        return SimilarityScore(1.0, "jaccard_pairs")
    return SimilarityScore(len(pa & pb) / len(union), "jaccard_pairs")


def _weighted(ca: Mapping, cb: Mapping):
    keys = set(ca) | set(cb)
    top = sum(max(ca.get(k, 0), cb.get(k, 0)) for k in keys)
    if top == 0:
        return 1.0
    return sum(min(ca.get(k, 0), cb.get(k, 0)) for k in keys) / top


def jaccard_weighted(a: NgramHistogram, b: NgramHistogram) -> SimilarityScore:
    """Σ min(count) / Σ max(count) over the union of keys."""
    _same_n(a, b)
    return SimilarityScore(_weighted(a.counts, b.counts), "jaccard_weighted")


def size_bucket(count):
    """Power-of-two bucket: 1 -> 1, 2..3 -> 2, 4..7 -> 3, ..."""
    return int(count).bit_length()


def cfg_fingerprints(p: Program):
    """Multisets of block fingerprints and edge-labelled fingerprint pairs over all functions."""
    blocks, edges = Counter(), Counter()
    for f in p.functions:
        g = build_cfg(f).graph
        prints = {
            label: (g.in_degree(label), g.out_degree(label), size_bucket(data["size"]), data["terminator"])
            for label, data in g.nodes(data=True)
        }
        blocks.update(prints.values())
        for u, v, data in g.edges(data=True):
            edges[(prints[u], prints[v], data["kind"])] += 1
    return blocks, edges


def _fingerprint_score(fa, fb):
    (blocks_a, edges_a), (blocks_b, edges_b) = fa, fb
    score = (_weighted(blocks_a, blocks_b) + _weighted(edges_a, edges_b)) / 2.0
    return SimilarityScore(_clamp(score), "cfg")


def cfg_similarity(a: Program, b: Program) -> SimilarityScore:
    return _fingerprint_score(cfg_fingerprints(a), cfg_fingerprints(b))


_HISTOGRAM_METRICS: Dict[str, Callable] = {
    "S": similarity_S,
    "jaccard_pairs": jaccard_pairs,
    "jaccard_weighted": jaccard_weighted,
}


def score(a: Program, b: Program, metric: str, n: int = 1, mode: str = "mnemonic") -> SimilarityScore:
    if metric == "cfg":
        return cfg_similarity(a, b)
    if metric not in _HISTOGRAM_METRICS:
        raise MetricError(f"unknown metric {metric!r}")
    return _HISTOGRAM_METRICS[metric](mnemonic_histogram(a, n, mode), mnemonic_histogram(b, n, mode))


@dataclass(frozen=True)
class SimilarityMatrix:
    labels: Tuple[str, ...]
    values: np.ndarray
    metric: str

    def __len__(self):
        return len(self.labels)

    def index(self, label):
        return self.labels.index(label)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, index=list(self.labels), columns=list(self.labels))

    def to_csv(self, path):
        self.to_frame().to_csv(path, float_format="%.4f")


def pairwise_matrix(population: Sequence[Program], metric: str, n: int = 1,
                    labels: Sequence[str] = None, mode: str = "mnemonic") -> SimilarityMatrix:
    if not population:
        raise MetricError("population is empty")
    if metric not in METRICS:
        raise MetricError(f"unknown metric {metric!r}")
    labels = tuple(labels) if labels is not None else tuple(f"m{i}" for i in range(len(population)))
    if len(labels) != len(population):
        raise MetricError("one label per population member is required")
    size = len(population)
    values = np.ones((size, size))
    if metric == "cfg":
        prints = [cfg_fingerprints(p) for p in population]
        pair_score = lambda i, j: _fingerprint_score(prints[i], prints[j]).value
    else:
        hists = [mnemonic_histogram(p, n, mode) for p in population]
        fn = _HISTOGRAM_METRICS[metric]

        def pair_score(i, j):
            empty = [k for k in (i, j) if hists[k].total == 0]
            # a program too short for n-grams shares nothing with one that has them
            if len(empty) == 1:
                log.warning("%s: %s has no %d-grams, pair scored 0", metric, labels[empty[0]], n)
                return 0.0
            return fn(hists[i], hists[j]).value
        for i in range(size):
            values[i, i] = fn(hists[i], hists[i]).value
    for i, j in combinations(range(size), 2):
        values[i, j] = values[j, i] = pair_score(i, j)
    return SimilarityMatrix(labels, values, metric)


def _pair_values(m: SimilarityMatrix, group_a: Iterable, group_b: Iterable = None) -> List[float]:
    ia = [m.index(x) if isinstance(x, str) else x for x in group_a]
    if group_b is None:
        return [m.values[i, j] for i, j in combinations(ia, 2)]
    ib = [m.index(x) if isinstance(x, str) else x for x in group_b]
    return [m.values[i, j] for i in ia for j in ib]


def within_group_mean(m: SimilarityMatrix, group) -> float:
    values = _pair_values(m, group)
    if not values:
        return float(m.values[_pair_index(m, group), _pair_index(m, group)])
    return float(np.mean(values))


def within_group_min(m: SimilarityMatrix, group) -> float:
    """Lowest pairwise similarity inside a group."""
    values = _pair_values(m, group)
    if not values:
        return float(m.values[_pair_index(m, group), _pair_index(m, group)])
    return float(np.min(values))


def _pair_index(m, group):
    first = list(group)[0]
    return m.index(first) if isinstance(first, str) else first


def cross_group_mean(m: SimilarityMatrix, group_a, group_b) -> float:
    return float(np.mean(_pair_values(m, group_a, group_b)))


def cross_group_min(m: SimilarityMatrix, group_a, group_b) -> float:
    return float(np.min(_pair_values(m, group_a, group_b)))


def group_table(m: SimilarityMatrix, groups: Mapping[str, Sequence], aggregation: str = "mean") -> pd.DataFrame:
    """Group x group table: diagonal within-group, off-diagonal cross-group aggregate."""
    if aggregation not in ("mean", "min"):
        raise MetricError(f"unknown aggregation {aggregation!r}")
    within = within_group_mean if aggregation == "mean" else within_group_min
    cross = cross_group_mean if aggregation == "mean" else cross_group_min
    names = list(groups)
    table = pd.DataFrame(index=names, columns=names, dtype=float)
    for a in names:
        for b in names:
            if a == b:
                table.loc[a, b] = within(m, groups[a])
            else:
                table.loc[a, b] = cross(m, groups[a], groups[b])
    return table
