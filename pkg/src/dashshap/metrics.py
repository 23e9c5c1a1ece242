"""Evaluation metrics: stability, accuracy, within-group equity, RMSE.

Spearman correlation uses average ranks for ties throughout.  Tie handling
matters here because the equitable ground truth assigns identical values
to every feature of a group, so rank ties are the norm, not an edge case.

Within-group equity is the mean coefficient of variation of importance
inside each correlated group, with population SD (groups have fixed known
size) and groups whose mean importance is below 1e-6 excluded to avoid
division-by-zero artifacts on zero-coefficient groups.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .data import GroupStructure
from .seeding import child_seed

EQUITY_EXCLUSION_THRESHOLD = 1e-6


def spearman(a, b) -> float:
    """Spearman rank correlation (Pearson correlation of average ranks)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("need two equal-length vectors with at least 2 entries")
    ra = rankdata(a)
    rb = rankdata(b)
    sa = ra - ra.mean()
    sb = rb - rb.mean()
    denom = np.sqrt((sa * sa).sum() * (sb * sb).sum())
    if denom == 0.0:
        raise ValueError("Spearman undefined: zero rank variance")
    return float((sa * sb).sum() / denom)


def stability(importance_vectors) -> float:
    """Mean pairwise Spearman correlation across repetitions."""
    vectors = [np.asarray(v, dtype=np.float64) for v in importance_vectors]
    r = len(vectors)
    if r < 2:
        raise ValueError("need at least 2 repetitions")
    total = 0.0
    for i in range(r):
        for j in range(i + 1, r):
            total += spearman(vectors[i], vectors[j])
    return total / (r * (r - 1) / 2)


def accuracy(importance, truth) -> float:
    """Rank agreement between estimated importance and the ground truth."""
    return spearman(importance, truth)


def equity_cv(importance, groups: GroupStructure) -> float:
    """Mean within-group coefficient of variation (population SD / |mean|)."""
    importance = np.asarray(importance, dtype=np.float64)
    if importance.size != groups.n_features:
        raise ValueError("importance length does not match the group structure")
    cvs = []
    for members in groups.groups:
        vals = importance[list(members)]
        mu = float(vals.mean())
        if abs(mu) < EQUITY_EXCLUSION_THRESHOLD:
            continue
        cvs.append(float(vals.std()) / abs(mu))
    if not cvs:
        raise ValueError("all groups excluded: every group mean is near zero")
    return float(np.mean(cvs))


def rmse(predictions, targets) -> float:
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape or predictions.size == 0:
        raise ValueError("predictions and targets must be equal-length and non-empty")
    return float(np.sqrt(np.mean((predictions - targets) ** 2)))


def variance_decomposition(make_data, run_method, reps: int, master_seed: int = 0):
    """Stability with the data seed fixed vs. the method seed fixed.

    ``make_data(data_seed)`` must return ``(dataset, split)`` and
    ``run_method(dataset, split, method_seed)`` an importance vector.
    Returns ``(fixed_data_stability, fixed_model_stability)``; the share of
    instability attributable to each axis is the directional proxy
    ``1 - stability``.
    """
    if reps < 2:
        raise ValueError("need at least 2 repetitions")
    dataset, split = make_data(child_seed(master_seed, 0))
    fixed_data = [
        run_method(dataset, split, child_seed(master_seed, 1, r)) for r in range(reps)
    ]
    model_seed = child_seed(master_seed, 2)
    fixed_model = []
    for r in range(reps):
        d_r, s_r = make_data(child_seed(master_seed, 3, r))
        fixed_model.append(run_method(d_r, s_r, model_seed))
    return stability(fixed_data), stability(fixed_model)
