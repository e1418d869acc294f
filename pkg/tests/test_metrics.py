from collections import Counter
from itertools import combinations

import numpy as np
import pytest

from conftest import program_of
from divlab.config import DiversityConfig
from divlab.diversifier import diversify_population, permute_registers, randomize_blocks
from divlab.errors import MetricError
from divlab.metrics import (
    NgramHistogram, cfg_fingerprints, cfg_similarity, cross_group_mean, freq,
    group_table, jaccard_pairs, jaccard_weighted, mnemonic_histogram, pairwise_matrix,
    score, similarity_S, within_group_mean, within_group_min,
)

H = NgramHistogram.from_counts


def test_histogram_erases_operands():
    p = program_of("movi r0, 1", "movi r3, 2", "halt")
    h1 = mnemonic_histogram(p, 1)
    assert h1.counts == {("movi",): 2, ("halt",): 1}
    assert h1.total == 3
    h2 = mnemonic_histogram(p, 2)
    assert h2.counts == {("movi", "movi"): 1, ("movi", "halt"): 1}
    assert h2.total == 2


def test_histogram_rejects_zero_length(fib):
    with pytest.raises(MetricError):
        mnemonic_histogram(fib, 0)


def test_unigram_total_is_instruction_count(corpus):
    for p in corpus.values():
        assert mnemonic_histogram(p, 1).total == p.instruction_count()


def test_freq():
    h = H({"movi": 2, "halt": 1})
    assert freq(h, "movi") == pytest.approx(2 / 3)
    assert freq(h, "add") == 0
    with pytest.raises(MetricError):
        freq(H({}), "movi")


def test_frequencies_sum_to_one(corpus):
    for p in corpus.values():
        assert sum(mnemonic_histogram(p, 1).frequencies().values()) == pytest.approx(1.0)


def test_formula_spot_checks():
    assert abs(similarity_S(H({"mov": 1, "add": 1}), H({"mov": 2})).value - 0.75) < 1e-12
    a, b = H({"mov": 2, "add": 1}), H({"mov": 2, "sub": 1})
    assert abs(jaccard_weighted(a, b).value - 0.5) < 1e-12
    assert abs(jaccard_pairs(a, b).value - 1 / 3) < 1e-12


def test_metric_extremes():
    assert similarity_S(H({"mov": 1}), H({"halt": 1})).value == 0.0
    assert jaccard_pairs(H({"mov": 2, "add": 1}), H({"mov": 3, "sub": 1})).value == 0.0
    assert jaccard_weighted(H({"mov": 1}), H({"halt": 4})).value == 0.0
    assert jaccard_pairs(H({}), H({})).value == 1.0
    assert jaccard_weighted(H({}), H({})).value == 1.0
    assert similarity_S(H({}), H({})).value == 1.0


def test_mismatched_gram_lengths():
    with pytest.raises(MetricError):
        similarity_S(H({"mov": 1}), H({("mov", "add"): 1}, 2))
    with pytest.raises(MetricError):
        similarity_S(H({"mov": 1}), H({}))


def test_random_histograms_bounded_and_symmetric():
    rng = np.random.default_rng(5)
    keys = ["mov", "add", "sub", "xor", "out", "halt"]
    for _ in range(100):
        a = H({k: int(c) for k, c in zip(keys, rng.integers(0, 5, len(keys)))} | {"nop": 1})
        b = H({k: int(c) for k, c in zip(keys, rng.integers(0, 5, len(keys)))} | {"nop": 1})
        for fn in (similarity_S, jaccard_pairs, jaccard_weighted):
            ab, ba = fn(a, b).value, fn(b, a).value
            assert 0.0 <= ab <= 1.0
            assert ab == pytest.approx(ba, abs=1e-12)
            assert fn(a, a).value == pytest.approx(1.0)


def test_corpus_pairs_bounded_and_symmetric(corpus):
    programs = list(corpus.values())
    for metric in ("S", "jaccard_pairs", "jaccard_weighted", "cfg"):
        for a, b in combinations(programs, 2):
            ab = score(a, b, metric).value
            assert 0.0 <= ab <= 1.0
            assert ab == pytest.approx(score(b, a, metric).value, abs=1e-12)
        for p in programs:
            assert score(p, p, metric).value == pytest.approx(1.0)


def test_register_permutation_invariance(corpus):
    for p in corpus.values():
        for seed in range(10):
            q = permute_registers(p, DiversityConfig(seed=seed))
            for metric in ("S", "jaccard_pairs", "jaccard_weighted"):
                assert score(p, q, metric).value == 1.0


def test_cfg_similarity_examples():
    single = program_of("halt")
    two = program_of("movi r1, 1", "jmp next", "next:", "halt")
    assert cfg_similarity(single, single).value == 1.0
    assert cfg_similarity(single, two).value < 1.0


def _naive_weighted(a, b):
    keys = set(a) | set(b)
    return sum(min(a[k], b[k]) for k in keys) / sum(max(a[k], b[k]) for k in keys)


def test_cfg_similarity_matches_naive_multisets(backdoor):
    variant = randomize_blocks(backdoor, DiversityConfig(seed=4))
    (ba, ea), (bb, eb) = cfg_fingerprints(backdoor), cfg_fingerprints(variant)
    expected = (_naive_weighted(Counter(ba), Counter(bb)) + _naive_weighted(Counter(ea), Counter(eb))) / 2
    assert cfg_similarity(backdoor, variant).value == pytest.approx(expected, abs=1e-12)


def test_pairwise_matrix_protocol(fib, corpus):
    one = pairwise_matrix([fib], "jaccard_pairs")
    assert one.values.shape == (1, 1)
    assert one.values[0, 0] == 1.0

    group_a = diversify_population(fib, DiversityConfig(seed=1), 3)
    group_b = diversify_population(corpus["sort"], DiversityConfig(seed=1), 3)
    m = pairwise_matrix(group_a + group_b, "jaccard_pairs")
    pairs = [m.values[i, j] for i, j in combinations(range(3), 2)]
    assert within_group_mean(m, range(3)) == pytest.approx(np.mean(pairs))
    assert within_group_min(m, range(3)) == pytest.approx(min(pairs))
    cross = [m.values[i, j] for i in range(3) for j in range(3, 6)]
    assert cross_group_mean(m, range(3), range(3, 6)) == pytest.approx(np.mean(cross))
    assert np.allclose(m.values, m.values.T)

    table = group_table(m, {"fib": [0, 1, 2], "sort": [3, 4, 5]})
    assert table.loc["fib", "sort"] == pytest.approx(np.mean(cross))
    assert table.loc["fib", "fib"] == pytest.approx(np.mean(pairs))


def test_pairwise_matrix_scores_short_program_zero(caplog):
    longer = program_of("movi r1, 1", "movi r2, 2", "movi r3, 3", "movi r4, 4", "out r1", "halt")
    short = program_of("out r0", "halt")
    with pytest.raises(MetricError):
        similarity_S(mnemonic_histogram(longer, 5), mnemonic_histogram(short, 5))
    m = pairwise_matrix([longer, short], "S", 5, labels=["long", "short"])
    assert m.values[0, 1] == m.values[1, 0] == 0.0
    assert m.values[1, 1] == 1.0
    assert "short has no 5-grams" in caplog.text


def test_pairwise_matrix_rejects_empty_population():
    with pytest.raises(MetricError):
        pairwise_matrix([], "S")
