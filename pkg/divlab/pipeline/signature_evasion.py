# ==============================================================================
# Module: signature_evasion.py
# Description: Signature experiments on populations of images.
#              - evasion runs: signatures from k sampled variants scanned
#                against the held-out variants and a benign pool,
#              - identical-copies control arm,
#              - pairwise longest shared substring relative to code size,
#              - whole-image hash matching.
# ==============================================================================
import logging
from itertools import combinations
from typing import Sequence

import pandas as pd

from divlab.encoding import ByteImage
from divlab.log import STATUS
from divlab.signatures import (
    SIGNATURE_MIN_LEN, EvasionReport, evasion_experiment, hash_match, maximal_repeats,
)

log = logging.getLogger(__name__)


def identical_copies(image: ByteImage, count: int):
    return [image] * count


def run_evasion(name, population: Sequence[ByteImage], benign: Sequence[ByteImage] = (), k: int = 2,
                min_len: int = SIGNATURE_MIN_LEN, trials: int = 20, seed: int = 0) -> EvasionReport:
    report = evasion_experiment(population, k, min_len, trials, benign, seed)
    log.info("%s: mean held-out match rate %.4f, %d trials without signature",
             name, report.mean_match_rate, report.no_signature_trials, extra=STATUS)
    return report


def longest_shared(a: bytes, b: bytes) -> int:
    if not a or not b:
        return 0
    repeats = maximal_repeats([a, b], 1, 2)
    return max((s.length for s in repeats), default=0)


def pairwise_longest(population: Sequence[ByteImage]) -> pd.DataFrame:
    """Longest common code substring for every pair, as bytes and as a fraction of the shorter code region."""
    rows = []
    for i, j in combinations(range(len(population)), 2):
        a, b = population[i].code, population[j].code
        length = longest_shared(a, b)
        rows.append({
            "a": i,
            "b": j,
            "longest": length,
            "fraction": length / min(len(a), len(b)),
        })
    return pd.DataFrame(rows, columns=["a", "b", "longest", "fraction"])


def hash_matches(population: Sequence[ByteImage]) -> int:
    """Number of variant pairs a whole-image hash scanner would equate."""
    return sum(hash_match(population[i], population[j]) for i, j in combinations(range(len(population)), 2))
