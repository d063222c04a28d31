from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm


def wilson_interval(errors: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("Wilson interval needs n > 0")
    z = norm.ppf(0.5 + confidence / 2)
    p = errors / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    # the exact interval always contains p; clamp away rounding at e=0 or e=n
    return float(max(0.0, min(p, centre - half))), float(min(1.0, max(p, centre + half)))


@dataclass(frozen=True)
class ErrorReport:
    errors: int
    n: int
    rate: float
    ci_low: float
    ci_high: float
    per_position: np.ndarray

    def overlaps(self, other: ErrorReport) -> bool:
        return not (self.ci_high < other.ci_low or other.ci_high < self.ci_low)


def evaluate_errors(decided, truth, confidence: float = 0.95) -> ErrorReport:
    """Symbol error rate with a Wilson interval and per-position error rates.

    Inputs are ``(n_seq, K)`` (or 1-D) arrays of symbol indices; for binary
    symbols the symbol error rate is the bit error rate.
    """
    d = np.asarray(decided)
    t = np.asarray(truth)
    if d.shape != t.shape:
        raise ValueError(f"decisions {d.shape} and truth {t.shape} differ in shape")
    if d.size == 0:
        raise ValueError("no symbols to evaluate")
    wrong = d != t
    if wrong.ndim == 1:
        wrong = wrong[None]
    errors = int(wrong.sum())
    n = wrong.size
    lo, hi = wilson_interval(errors, n, confidence)
    return ErrorReport(errors, n, errors / n, lo, hi, wrong.mean(axis=0))
