# ==============================================================================
# Module: similarity_analysis.py
# Description: Population-level similarity measurements.
#              (1) shared-substring length histograms and hex dumps per quorum with
#                  log-count decay fits,
#              (2) n-gram S tables and the n-gram tendency test,
#              (3) S / Jaccard / CFG matrices with group tables,
#              (4) canonical digest tables.
# ==============================================================================
import logging
from typing import Dict, Iterable, Mapping, Sequence

import pandas as pd

from divlab.canonical import canonicalize
from divlab.encoding import ByteImage
from divlab.errors import PopulationError
from divlab.isa import Program
from divlab.log import STATUS
from divlab.metrics import group_table, pairwise_matrix, within_group_mean
from divlab.signatures import (
    DEFAULT_MIN_LEN, SUBSTRING_COLUMNS, length_histogram, shared_substrings, substrings_frame,
)
from divlab.statistics import length_decay, ngram_tendency

log = logging.getLogger(__name__)

QUORUMS = (2, 3, 4, 5)
NGRAM_SIZES = (1, 2, 3, 4, 5)


def subsequence_analysis(images: Sequence[ByteImage], min_len: int = DEFAULT_MIN_LEN,
                         quorums: Iterable[int] = QUORUMS):
    """Length histograms (quorum, length, count) and the hex dump of every shared substring
    with the variants supporting it, for every quorum the population can support."""
    rows, dumps = [], []
    for q in quorums:
        if q > len(images):
            raise PopulationError(f"quorum {q} exceeds population size {len(images)}")
        subs = shared_substrings(images, min_len, q)
        hist = length_histogram(subs)
        rows.extend({"quorum": q, "length": length, "count": count} for length, count in hist.items())
        frame = substrings_frame(subs, images)
        frame.insert(0, "quorum", q)
        dumps.append(frame)
        log.info("Quorum %d: %d shared substrings", q, sum(hist.values()), extra=STATUS)
    histograms = pd.DataFrame(rows, columns=["quorum", "length", "count"])
    if not dumps:
        return histograms, pd.DataFrame(columns=["quorum", *SUBSTRING_COLUMNS])
    return histograms, pd.concat(dumps, ignore_index=True)


def decay_fits(histograms: pd.DataFrame) -> pd.DataFrame:
    rows = []
    for q, group in histograms.groupby("quorum"):
        fit = length_decay(dict(zip(group["length"], group["count"])))
        rows.append({"quorum": q, **fit})
    return pd.DataFrame(rows, columns=["quorum", "slope", "intercept", "r2", "p_value", "points"])


def ngram_table(populations: Mapping[str, Sequence[Program]], sizes: Iterable[int] = NGRAM_SIZES) -> pd.DataFrame:
    """Mean within-population S for each program and n-gram size."""
    rows = []
    for name, population in populations.items():
        for n in sizes:
            m = pairwise_matrix(population, "S", n)
            rows.append({"program": name, "n": n, "mean_S": within_group_mean(m, range(len(population)))})
    return pd.DataFrame(rows, columns=["program", "n", "mean_S"])


def ngram_analysis(populations: Mapping[str, Sequence[Program]], sizes: Iterable[int] = NGRAM_SIZES):
    table = ngram_table(populations, sizes)
    return table, ngram_tendency(table)


def matrix_frames(populations: Mapping[str, Sequence[Program]], metric: str, n: int = 1,
                  aggregation: str = "mean"):
    """Long-form matrix over all members plus the program x program group table."""
    members, labels, groups = [], [], {}
    for name, population in populations.items():
        groups[name] = []
        for i, p in enumerate(population):
            groups[name].append(len(members))
            members.append(p)
            labels.append(f"{name}/{i}")
    matrix = pairwise_matrix(members, metric, n, labels=labels)
    long = pd.DataFrame(
        [(a, b, matrix.values[i, j]) for i, a in enumerate(labels) for j, b in enumerate(labels)],
        columns=["a", "b", "value"],
    )
    table = group_table(matrix, groups, aggregation)
    table.index.name = "program"
    return long, table.reset_index()


def canonical_digest_table(populations: Mapping[str, Sequence[Program]]) -> pd.DataFrame:
    rows = []
    for name, population in populations.items():
        for i, p in enumerate(population):
            rows.append({"program": name, "variant_id": i, "digest": canonicalize(p).digest})
    return pd.DataFrame(rows, columns=["program", "variant_id", "digest"])


def digest_summary(digests: pd.DataFrame) -> Dict[str, int]:
    per_program = digests.groupby("program")["digest"].nunique()
    return {
        "programs": int(per_program.size),
        "max_digests_per_program": int(per_program.max()) if per_program.size else 0,
        "distinct_digests": int(digests["digest"].nunique()),
    }
