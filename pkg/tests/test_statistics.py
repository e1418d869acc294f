import math

import numpy as np
import pandas as pd
import pytest

from divlab.statistics import cumulative_counts, length_decay, ngram_tendency, paired_test


def test_paired_test_picks_a_method():
    rng = np.random.default_rng(0)
    x = rng.normal(0.5, 0.1, 30)
    y = x - rng.normal(0.05, 0.02, 30)
    method, stat, p_val, p_norm = paired_test(x, y)
    assert method in ("paired t-test", "wilcoxon")
    assert 0.0 <= p_val <= 1.0
    assert p_val < 0.05


def test_constant_difference_falls_back_to_wilcoxon():
    x = [0.9, 0.8, 0.7, 0.6, 0.5]
    y = [v - 0.1 for v in x]
    method, _, _, p_norm = paired_test(x, y)
    assert method == "wilcoxon"
    assert math.isnan(p_norm)


def test_paired_test_needs_three_pairs():
    method, stat, p_val, _ = paired_test([1.0, 2.0], [0.5, 1.5])
    assert method == "n/a"
    assert math.isnan(stat) and math.isnan(p_val)


def test_ngram_tendency_rows():
    rows = []
    for i, program in enumerate("abcdef"):
        base = 0.9 - 0.05 * i
        for n in (1, 2, 3):
            rows.append({"program": program, "n": n, "mean_S": base - 0.1 * (n - 1) - 0.01 * i * (n - 1)})
    result = ngram_tendency(pd.DataFrame(rows))
    assert result["n"].tolist() == [1, 2, 3]
    assert result.loc[0, "method"] == ""
    assert result.loc[0, "mean_diff_vs_n1"] == 0.0
    assert result["within_slack"].all()
    assert (result.loc[1:, "mean_diff_vs_n1"] < 0).all()
    assert result["mean_S"].is_monotonic_decreasing


def test_ngram_tendency_requires_unigrams():
    table = pd.DataFrame([{"program": "a", "n": 2, "mean_S": 0.5}])
    with pytest.raises(ValueError):
        ngram_tendency(table)


def test_cumulative_counts():
    frame = cumulative_counts({10: 5, 12: 2, 11: 3})
    assert frame["length"].tolist() == [10, 11, 12]
    assert frame["count_at_least"].tolist() == [10, 5, 2]
    assert cumulative_counts({}).empty


def test_length_decay_recovers_halving_rate():
    fit = length_decay({10: 64, 11: 32, 12: 16, 13: 8, 14: 4})
    assert fit["slope"] == pytest.approx(-math.log(2))
    assert fit["r2"] == pytest.approx(1.0)
    assert fit["points"] == 5


def test_length_decay_needs_three_lengths():
    fit = length_decay({10: 4, 11: 2, 12: 0})
    assert fit["points"] == 2
    assert math.isnan(fit["slope"])
