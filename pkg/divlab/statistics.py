# ==============================================================================
# Module: statistics.py
# Description: Significance testing and trend fits over experiment tables.
#              (1) n-gram tendency: paired test of within-population S at
#                  n > 1 against n = 1 (Shapiro-Wilk on the differences,
#                  then paired t-test or Wilcoxon signed-rank).
#              (2) length decay: OLS fit of log(count) on substring length.
# ==============================================================================
import logging
from typing import Mapping

import numpy as np
import pandas as pd
import statsmodels.api as sm
from scipy.stats import shapiro, ttest_rel, wilcoxon

log = logging.getLogger(__name__)

ALPHA = 0.05
NGRAM_SLACK = 0.05


def paired_test(x, y):
    """Shapiro-Wilk on x - y decides between a paired t-test and Wilcoxon.

    Returns (method, statistic, p_value, normality_p); NaN where a test
    cannot run on the sample.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    diff = x - y
    if len(diff) < 3:
        log.warning("paired test needs at least 3 pairs, got %d", len(diff))
        return "n/a", np.nan, np.nan, np.nan
    if np.allclose(diff, diff[0]):
        # shapiro is undefined on a constant sample
        p_norm = np.nan
        is_normal = False
    else:
        _, p_norm = shapiro(diff)
        is_normal = p_norm > ALPHA

    if is_normal:
        method = "paired t-test"
        stat, p_val = ttest_rel(x, y)
    else:
        method = "wilcoxon"
        try:
            stat, p_val = wilcoxon(x, y)
        except ValueError as e:
            stat, p_val = np.nan, np.nan
            log.warning("Wilcoxon test failed: %s", e)
    return method, float(stat), float(p_val), float(p_norm)


def ngram_tendency(table: pd.DataFrame) -> pd.DataFrame:
    """One row per n: mean S, difference to n = 1 and the paired test across programs.

    `table` has columns program, n, mean_S (one row per program and n).
    """
    wide = table.pivot(index="program", columns="n", values="mean_S").sort_index()
    if 1 not in wide.columns:
        raise ValueError("n-gram table has no n = 1 column")
    base = wide[1]
    rows = []
    for n in sorted(wide.columns):
        current = wide[n]
        row = {
            "n": int(n),
            "mean_S": float(current.mean()),
            "mean_diff_vs_n1": float((current - base).mean()),
            "within_slack": bool(current.mean() <= base.mean() + NGRAM_SLACK),
        }
        if n == 1:
            row.update(method="", statistic=np.nan, p_value=np.nan, normality_p=np.nan)
        else:
            method, stat, p_val, p_norm = paired_test(current.values, base.values)
            row.update(method=method, statistic=stat, p_value=p_val, normality_p=p_norm)
        rows.append(row)
    return pd.DataFrame(rows)


def cumulative_counts(histogram: Mapping[int, int]) -> pd.DataFrame:
    """count_at_least[L] = number of substrings of length >= L."""
    lengths = sorted(histogram)
    counts = [histogram[k] for k in lengths]
    at_least = np.cumsum(counts[::-1])[::-1] if counts else []
    return pd.DataFrame({"length": lengths, "count": counts, "count_at_least": list(at_least)})


def length_decay(histogram: Mapping[int, int]) -> dict:
    """OLS of log(count) on length; a negative slope is the expected decay."""
    points = {k: v for k, v in histogram.items() if v > 0}
    if len(points) < 3:
        log.warning("decay fit needs 3 distinct lengths, got %d", len(points))
        return {"slope": np.nan, "intercept": np.nan, "r2": np.nan, "p_value": np.nan, "points": len(points)}
    lengths = np.array(sorted(points), dtype=float)
    log_counts = np.log([points[int(k)] for k in lengths])
    X = sm.add_constant(lengths)
    model = sm.OLS(log_counts, X).fit()
    return {
        "slope": float(model.params[1]),
        "intercept": float(model.params[0]),
        "r2": float(model.rsquared),
        "p_value": float(model.pvalues[1]),
        "points": len(points),
    }
