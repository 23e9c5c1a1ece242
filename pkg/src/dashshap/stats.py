"""Paired statistical machinery for the benchmark comparisons.

Wilcoxon signed-rank uses the exact permutation null for n <= 25 pairs
(conditioning on the observed |difference| ranks, so average-rank ties are
handled exactly via a subset-sum count over doubled ranks) and a
tie-corrected normal approximation with continuity correction above that.
Zero differences are dropped before ranking.

Cohen's d follows the paired-design convention: mean of the differences
over their sample SD.

The BCa bootstrap resamples whole items (e.g. repetition-level importance
vectors), recomputes the statistic per resample, and corrects the
percentile interval with the bias term z0 and the jackknife acceleration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, rankdata

from .seeding import generator


@dataclass(frozen=True)
class TestResult:
    comparison: str
    metric: str
    p_raw: float
    p_adjusted: float
    effect_d: float
    n_pairs: int


def wilcoxon_signed_rank(diffs) -> float:
    """Two-sided p-value of the Wilcoxon signed-rank test."""
    diffs = np.asarray(diffs, dtype=np.float64)
    diffs = diffs[diffs != 0.0]
    n = diffs.size
    if n < 5:
        raise ValueError("need at least 5 non-zero differences")
    ranks = rankdata(np.abs(diffs))
    w_plus = float(ranks[diffs > 0].sum())
    if n <= 25:
        return _wilcoxon_exact(ranks, w_plus)
    return _wilcoxon_normal(ranks, w_plus)


def _wilcoxon_exact(ranks, w_plus) -> float:
    # Average ranks are multiples of 1/2: double them and run an integer
    # subset-sum count over all 2^n sign assignments.
    r2 = np.rint(2.0 * ranks).astype(np.int64)
    total = int(r2.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in r2:
        counts[r:] += counts[: total + 1 - r]
    counts /= counts.sum()
    w2 = int(round(2.0 * w_plus))
    p_low = float(counts[: w2 + 1].sum())
    p_high = float(counts[w2:].sum())
    return min(1.0, 2.0 * min(p_low, p_high))


def _wilcoxon_normal(ranks, w_plus) -> float:
    n = ranks.size
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    tie_term = float(((tie_counts**3 - tie_counts) / 48.0).sum())
    sd = np.sqrt(n * (n + 1) * (2 * n + 1) / 24.0 - tie_term)
    if sd == 0.0:
        raise ValueError("zero variance in signed ranks")
    z = (abs(w_plus - mean) - 0.5) / sd  # continuity correction
    return float(min(1.0, 2.0 * norm.sf(max(z, 0.0))))


def holm_bonferroni(p_values) -> np.ndarray:
    """Step-down adjusted p-values, returned in the input order."""
    p = np.asarray(p_values, dtype=np.float64)
    if p.size == 0:
        return p.copy()
    if np.any(p <= 0) or np.any(p > 1):
        raise ValueError("p-values must lie in (0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    adjusted = np.empty(m, dtype=np.float64)
    running = 0.0
    for i, idx in enumerate(order):
        running = max(running, min(1.0, (m - i) * p[idx]))
        adjusted[idx] = running
    return adjusted


def cohens_d(diffs) -> float:
    """Paired-design effect size: mean(diffs) / sample SD(diffs)."""
    diffs = np.asarray(diffs, dtype=np.float64)
    if diffs.size < 2:
        raise ValueError("need at least 2 differences")
    sd = float(diffs.std(ddof=1))
    if sd == 0.0:
        raise ValueError("Cohen's d undefined: zero standard deviation")
    return float(diffs.mean()) / sd


def bca_bootstrap(samples, statistic, n_boot: int = 2000, level: float = 0.95, seed: int = 0):
    """Bias-corrected accelerated bootstrap interval ``(lo, hi)``.

    ``samples`` is indexed along its first axis; ``statistic`` maps a
    resampled array to a scalar.  Deterministic for a given seed.
    """
    samples = np.asarray(samples)
    n = samples.shape[0]
    if n < 3:
        raise ValueError("need at least 3 samples")
    if n_boot < 1000:
        raise ValueError("need at least 1000 bootstrap resamples")
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")

    theta_hat = float(statistic(samples))
    rng = generator(seed)
    idx = rng.integers(0, n, size=(n_boot, n))
    boot = np.array([float(statistic(samples[idx[b]])) for b in range(n_boot)])

    frac_below = float(np.mean(boot < theta_hat))
    if frac_below <= 0.0 or frac_below >= 1.0:
        raise ValueError(
            "degenerate bootstrap distribution: point estimate outside its support"
        )
    z0 = float(norm.ppf(frac_below))

    jack = np.array(
        [float(statistic(np.delete(samples, i, axis=0))) for i in range(n)]
    )
    dev = jack.mean() - jack
    denom = float((dev**2).sum()) ** 1.5
    accel = float((dev**3).sum()) / (6.0 * denom) if denom > 0.0 else 0.0

    alpha = 1.0 - level
    lo_hi = []
    for z_a in (norm.ppf(alpha / 2.0), norm.ppf(1.0 - alpha / 2.0)):
        adj = z0 + (z0 + z_a) / (1.0 - accel * (z0 + z_a))
        lo_hi.append(float(np.quantile(boot, norm.cdf(adj))))
    return lo_hi[0], lo_hi[1]
