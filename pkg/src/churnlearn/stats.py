"""Nonparametric comparison machinery: ranks, Friedman, Nemenyi, Kruskal-Wallis.

Methods are compared by ranking them within each observation (one dataset ×
network row), testing whether average ranks could be equal (Friedman), and
following up with the Nemenyi critical difference.  The unbalanced with/
without collective inference question uses Kruskal-Wallis on pooled values.
Tie corrections are applied throughout because coarse score vectors produce
tied metrics routinely.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2, rankdata

__all__ = [
    "RankTable",
    "rank_methods",
    "average_ranks",
    "friedman_test",
    "nemenyi_cd",
    "nemenyi_significance",
    "kruskal_wallis",
    "write_avg_rank_csv",
    "write_significance_csv",
    "write_cd_diagram_csv",
    "STUDENTIZED_RANGE_005",
]

# Upper 5% points of the studentized range statistic divided by sqrt(2), for
# k = 2..30 methods at infinite degrees of freedom (standard published table;
# cross-checked against an independent computation in the test suite).
STUDENTIZED_RANGE_005 = {
    2: 1.960, 3: 2.344, 4: 2.569, 5: 2.728, 6: 2.850,
    7: 2.948, 8: 3.031, 9: 3.102, 10: 3.164, 11: 3.219,
    12: 3.268, 13: 3.313, 14: 3.354, 15: 3.391, 16: 3.426,
    17: 3.458, 18: 3.489, 19: 3.517, 20: 3.544, 21: 3.569,
    22: 3.593, 23: 3.616, 24: 3.637, 25: 3.658, 26: 3.678,
    27: 3.696, 28: 3.714, 29: 3.732, 30: 3.749,
}


@dataclass(frozen=True)
class RankTable:
    """Per-observation ranks (1 = best, ties averaged) of k methods over N
    observations."""

    methods: tuple[str, ...]
    ranks: np.ndarray
    metric: str = ""

    def __post_init__(self) -> None:
        ranks = np.asarray(self.ranks, dtype=np.float64)
        object.__setattr__(self, "ranks", ranks)
        n, k = ranks.shape if ranks.ndim == 2 else (0, 0)
        if k != len(self.methods):
            raise ValueError("one rank column per method is required")
        if n < 2 or k < 2:
            raise ValueError(f"need at least 2 observations of 2 methods, got N={n}, k={k}")
        expected = k * (k + 1) / 2.0
        sums = ranks.sum(axis=1)
        if not np.allclose(sums, expected, rtol=0.0, atol=1e-9):
            raise ValueError("every row's ranks must sum to k(k+1)/2")

    @property
    def n_observations(self) -> int:
        return self.ranks.shape[0]

    @property
    def n_methods(self) -> int:
        return self.ranks.shape[1]


def rank_methods(metric_matrix, higher_is_better: bool = True, methods=None, metric: str = "") -> RankTable:
    """Rank methods within each observation row, best = 1, ties averaged."""
    values = np.asarray(metric_matrix, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("metric_matrix must be 2-dimensional (observations x methods)")
    if not np.isfinite(values).all():
        raise ValueError("metric_matrix must not contain missing entries")
    signed = -values if higher_is_better else values
    ranks = np.apply_along_axis(rankdata, 1, signed)
    if methods is None:
        methods = tuple(f"method_{j}" for j in range(values.shape[1]))
    return RankTable(tuple(methods), ranks, metric)


def average_ranks(table: RankTable) -> np.ndarray:
    return table.ranks.mean(axis=0)


def friedman_test(table: RankTable) -> tuple[float, float]:
    """Friedman chi-square test that all average ranks are equal.

    Uses the tie-corrected statistic; the p-value comes from the chi-square
    distribution with k - 1 degrees of freedom.  A table whose rows are all
    complete ties carries no information and yields (0, 1).
    """
    ranks = table.ranks
    n, k = ranks.shape
    col_sums = ranks.sum(axis=0)
    centered = col_sums - n * (k + 1) / 2.0
    denom = float((ranks**2).sum()) - n * k * (k + 1) ** 2 / 4.0
    if denom <= 0.0:
        return 0.0, 1.0
    statistic = (k - 1) * float(np.dot(centered, centered)) / denom
    p_value = float(chi2.sf(statistic, k - 1))
    return statistic, p_value


def nemenyi_cd(k: int, n: int, alpha: float = 0.05) -> float:
    """Critical difference of average ranks for the post-hoc Nemenyi test.

    Two of ``k`` methods compared over ``n`` observations differ
    significantly iff their average ranks differ by at least the returned
    value.
    """
    if alpha != 0.05:
        raise ValueError("only alpha = 0.05 is bundled")
    if k not in STUDENTIZED_RANGE_005:
        raise ValueError(f"k must lie in 2..30 for the bundled critical values, got {k}")
    if n < 2:
        raise ValueError("need at least 2 observations")
    q = STUDENTIZED_RANGE_005[k]
    return q * math.sqrt(k * (k + 1) / (6.0 * n))


def nemenyi_significance(avg_ranks: np.ndarray, cd: float) -> np.ndarray:
    """Symmetric boolean matrix: (i, j) iff methods i and j differ by >= cd."""
    avg_ranks = np.asarray(avg_ranks, dtype=np.float64)
    diff = np.abs(avg_ranks[:, None] - avg_ranks[None, :])
    out = diff >= cd
    np.fill_diagonal(out, False)
    return out


def kruskal_wallis(group_a, group_b) -> tuple[float, float]:
    """Tie-corrected Kruskal-Wallis rank-sum test for two groups.

    Returns the H statistic and its chi-square p-value with one degree of
    freedom.  Pooled samples that are all identical carry no information and
    yield (0, 1).
    """
    a = np.asarray(group_a, dtype=np.float64)
    b = np.asarray(group_b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("both groups must be nonempty")
    pooled = np.concatenate([a, b])
    n = pooled.shape[0]
    ranks = rankdata(pooled)
    r_a = ranks[: a.size].sum()
    r_b = ranks[a.size :].sum()
    h = 12.0 / (n * (n + 1)) * (r_a**2 / a.size + r_b**2 / b.size) - 3.0 * (n + 1)
    _, counts = np.unique(pooled, return_counts=True)
    correction = 1.0 - float(((counts**3 - counts).sum())) / (n**3 - n)
    if correction <= 0.0:
        return 0.0, 1.0
    h /= correction
    return float(h), float(chi2.sf(h, 1))


# ---------------------------------------------------------------------------
# Plot-ready emitters.
# ---------------------------------------------------------------------------

def write_avg_rank_csv(path, table: RankTable) -> None:
    avg = average_ranks(table)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "avg_rank"])
        for name, rank in zip(table.methods, avg):
            writer.writerow([name, repr(float(rank))])


def write_significance_csv(path, methods, significant: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", *methods])
        for name, row in zip(methods, significant):
            writer.writerow([name, *(int(x) for x in row)])


def write_cd_diagram_csv(path, table: RankTable, cd: float) -> None:
    """``method,avg_rank,cd`` rows: each method's average rank and the shared
    critical difference, enough to draw a critical-difference diagram."""
    avg = average_ranks(table)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "avg_rank", "cd"])
        for name, rank in zip(table.methods, avg):
            writer.writerow([name, repr(float(rank)), repr(float(cd))])
