"""Ranking-quality measures for churn scores: lift, AUC and the H-measure.

All four benchmark metrics (lift at 0.5% and 1%, AUC, H) depend on scores
only through their ordering, so any strictly increasing transformation of a
score vector leaves them unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc
from scipy.stats import rankdata

__all__ = ["lift", "auc", "h_measure", "EvaluationReport", "evaluate"]


def _validate(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 1 or scores.shape != labels.shape:
        raise ValueError("scores and labels must be one-dimensional and equally long")
    if scores.size == 0:
        raise ValueError("empty evaluation population")
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    labels = labels.astype(np.float64)
    if not np.isin(labels, (0.0, 1.0)).all():
        raise ValueError("labels must be 0/1")
    return scores, labels


def lift(scores, labels, p: float, ids=None) -> float:
    """Churn rate among the top ``p`` fraction of scores over the base rate.

    The cutoff keeps ``ceil(p * n)`` customers; ties at the cutoff break by
    ascending customer id so the measure is deterministic.
    """
    scores, labels = _validate(scores, labels)
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie strictly between 0 and 1, got {p}")
    n = scores.shape[0]
    base_rate = labels.mean()
    if base_rate == 0.0:
        raise ValueError("base churn rate is zero; lift is undefined")
    if ids is None:
        ids = np.arange(n)
    else:
        ids = np.asarray(ids)
        if ids.shape != scores.shape:
            raise ValueError("ids must match scores in length")
    top = math.ceil(p * n)
    order = np.lexsort((ids, -scores))
    picked = order[:top]
    return float(labels[picked].mean() / base_rate)


def auc(scores, labels) -> float:
    """Probability that a random churner outranks a random non-churner, ties
    counting one half (the Mann-Whitney form of the ROC area)."""
    scores, labels = _validate(scores, labels)
    pos = labels == 1.0
    n1 = int(pos.sum())
    n0 = scores.shape[0] - n1
    if n1 == 0 or n0 == 0:
        raise ValueError("both classes must be present to compute AUC")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def _beta_segment_integrals(alpha: float, beta: float, c1: float, c2: float) -> tuple[float, float]:
    """(integral of c, integral of 1-c) against the Beta(alpha, beta) density
    over [c1, c2], via regularized incomplete beta functions."""
    s = alpha + beta
    int_c = (alpha / s) * (betainc(alpha + 1.0, beta, c2) - betainc(alpha + 1.0, beta, c1))
    int_1mc = (beta / s) * (betainc(alpha, beta + 1.0, c2) - betainc(alpha, beta + 1.0, c1))
    return float(int_c), float(int_1mc)


def _threshold_lines(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Expected-loss lines ``loss(c) = a*c + b*(1-c)`` for every threshold
    rule (predict churn above the cut), endpoints included.

    ``a = pi0 * (1 - F0)`` prices false alarms, ``b = pi1 * F1`` prices
    misses, with F0/F1 the per-class score CDFs at the cut.
    """
    n = scores.shape[0]
    pi1 = labels.mean()
    pi0 = 1.0 - pi1
    order = np.argsort(scores, kind="mergesort")
    s_sorted = scores[order]
    y_sorted = labels[order]
    boundary = np.flatnonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])
    cum1 = np.cumsum(y_sorted)
    cum0 = np.cumsum(1.0 - y_sorted)
    n1 = cum1[-1]
    n0 = cum0[-1]
    f1 = np.r_[0.0, cum1[boundary] / n1]
    f0 = np.r_[0.0, cum0[boundary] / n0]
    a = pi0 * (1.0 - f0)
    b = pi1 * f1
    return a, b


def _lower_envelope(a: np.ndarray, b: np.ndarray) -> list[tuple[float, float, float, float]]:
    """Lower envelope of the lines ``a*c + b*(1-c)`` over c in [0, 1].

    Candidate lines arrive in order of decreasing slope ``a - b``; returns
    ``(c_start, c_end, a, b)`` segments covering [0, 1].
    """
    stack: list[tuple[float, float, float]] = []  # (a, b, c_start)
    for ak, bk in zip(a, b):
        enters_at: float | None = 0.0
        while stack:
            a_top, b_top, c_top = stack[-1]
            slope_gap = (a_top - b_top) - (ak - bk)
            if slope_gap <= 0.0:
                # Parallel line: the one lower at c=0 is lower everywhere.
                if bk < b_top:
                    stack.pop()
                    enters_at = 0.0
                    continue
                enters_at = None
                break
            c_cross = (bk - b_top) / slope_gap
            if c_cross <= c_top:
                stack.pop()
                enters_at = 0.0
                continue
            enters_at = c_cross
            break
        if enters_at is not None and enters_at < 1.0:
            stack.append((ak, bk, enters_at))
    segments = []
    for idx, (ak, bk, c_start) in enumerate(stack):
        c_end = stack[idx + 1][2] if idx + 1 < len(stack) else 1.0
        if c_end > c_start:
            segments.append((c_start, c_end, ak, bk))
    return segments


def h_measure(scores, labels, severity_params: tuple[float, float] = (2.0, 2.0)) -> float:
    """H-measure: expected minimum misclassification loss over a Beta cost
    distribution, normalized against the score-free classifier.

    0 means no skill, 1 means perfect separation.  ``severity_params`` are
    the Beta distribution's shape parameters; the default Beta(2, 2) weights
    symmetric misclassification severities.
    """
    scores, labels = _validate(scores, labels)
    alpha, beta = severity_params
    if not (alpha > 0.0 and beta > 0.0 and math.isfinite(alpha) and math.isfinite(beta)):
        raise ValueError(f"Beta severity parameters must be positive and finite, got {severity_params}")
    pi1 = float(labels.mean())
    if pi1 in (0.0, 1.0):
        raise ValueError("both classes must be present to compute the H-measure")
    pi0 = 1.0 - pi1

    a, b = _threshold_lines(scores, labels)
    numerator = 0.0
    for c1, c2, ak, bk in _lower_envelope(a, b):
        int_c, int_1mc = _beta_segment_integrals(alpha, beta, c1, c2)
        numerator += ak * int_c + bk * int_1mc

    # Score-free reference: classify everyone as churner below cost pi1,
    # everyone as non-churner above it.
    int_c_low, _ = _beta_segment_integrals(alpha, beta, 0.0, pi1)
    _, int_1mc_high = _beta_segment_integrals(alpha, beta, pi1, 1.0)
    denominator = pi0 * int_c_low + pi1 * int_1mc_high
    if denominator <= 0.0:
        raise ValueError("degenerate severity distribution")
    return float(min(1.0, max(0.0, 1.0 - numerator / denominator)))


@dataclass(frozen=True)
class EvaluationReport:
    """The four benchmark metrics for one scored population."""

    lift_05: float
    lift_1: float
    auc: float
    h: float
    population: int
    base_rate: float

    def __post_init__(self) -> None:
        for name in ("lift_05", "lift_1", "auc", "h", "base_rate"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        cap = 1.0 / self.base_rate
        if self.lift_05 > cap * (1.0 + 1e-12) or self.lift_1 > cap * (1.0 + 1e-12):
            raise ValueError("lift cannot exceed 1 / base_rate")


def evaluate(scores, labels, ids=None, severity_params: tuple[float, float] = (2.0, 2.0)) -> EvaluationReport:
    """Compute all four metrics for one run's evaluation population."""
    scores_arr, labels_arr = _validate(scores, labels)
    return EvaluationReport(
        lift_05=lift(scores_arr, labels_arr, 0.005, ids=ids),
        lift_1=lift(scores_arr, labels_arr, 0.01, ids=ids),
        auc=auc(scores_arr, labels_arr),
        h=h_measure(scores_arr, labels_arr, severity_params),
        population=int(scores_arr.shape[0]),
        base_rate=float(labels_arr.mean()),
    )
