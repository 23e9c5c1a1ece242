"""The five-stage consensus-attribution pipeline.

Stage 1 trains a population of gradient-boosted models under randomly
sampled hyperparameters (notably low column sampling, which forces
different models onto different members of correlated feature groups).
Stage 2 keeps only models scoring within epsilon of the best validation
score.  Stage 3 picks a feature-utilization-diverse subset by greedy
max-min cosine dissimilarity on gain-importance vectors (or one of the
alternative selectors).  Stage 4 computes exact interventional Shapley
attributions per selected model on the held-out explain split and
averages them element-wise.  Stage 5 always runs diagnostics (FSI and
quadrant assignment).

:func:`fit_from_attributions` runs Stages 2-5 on attribution matrices
produced elsewhere (any per-feature attribution method), with diversity
measured on each matrix's global importance vector instead of tree gain.

Per-model seeds are ``child_seed(master_seed, i)``, so populations are
reproducible, order-independent, and prefix-stable: the first k models of
a size-M population equal the size-k population for the same master seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import diagnostics
from .data import Dataset, FourWaySplit
from .gbdt import (
    BoostedModel,
    Hyperparams,
    gain_importance,
    predict_raw,
    sample_hyperparams,
    score,
    train,
)
from .metrics import spearman
from .seeding import child_seed, generator, string_seed
from .treeshap import ShapMatrix, consensus_average, global_importance, interventional_shap

SELECTIONS = ("maxmin", "dedup", "random", "naive_topn")
DEDUP_SPEARMAN_THRESHOLD = 0.95


@dataclass(frozen=True)
class PipelineConfig:
    population_size: int = 200
    k_max: int = 30
    epsilon: float = 0.08
    epsilon_mode: str = "absolute"  # "relative" recommended for real-world data
    diversity_threshold: float = 0.05
    selection: str = "maxmin"
    background_size: int = 100
    master_seed: int = 0
    n_estimators_max: int = 300
    early_stopping_rounds: int = 20
    cluster_tau: float = 0.3  # recorded for config fidelity; no stage consumes it

    def __post_init__(self):
        if self.population_size < 1:
            raise ValueError("population_size must be >= 1")
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.epsilon_mode not in ("absolute", "relative"):
            raise ValueError(f"unknown epsilon_mode {self.epsilon_mode!r}")
        if self.selection not in SELECTIONS:
            raise ValueError(f"unknown selection {self.selection!r}")
        if self.background_size < 1:
            raise ValueError("background_size must be >= 1")


@dataclass
class Population:
    models: list[BoostedModel]
    scores: np.ndarray
    gain_vectors: np.ndarray  # (M, P)

    @property
    def size(self) -> int:
        return len(self.models)


@dataclass
class DashResult:
    consensus: ShapMatrix
    per_model: list[ShapMatrix]
    selected: list[int]
    filtered: list[int]
    fsi: np.ndarray
    quadrants: tuple[diagnostics.Quadrant, ...]
    global_importance: np.ndarray
    fsi_report: diagnostics.FsiReport
    quadrant_assignment: diagnostics.QuadrantAssignment
    population: Population | None = field(default=None, repr=False)


def train_population(
    dataset: Dataset,
    split: FourWaySplit,
    n_models: int,
    master_seed: int,
    n_estimators_max: int = 300,
    early_stopping_rounds: int = 20,
) -> Population:
    """Stage 1: train ``n_models`` with per-model sampled hyperparameters.

    Model ``i`` derives everything from ``child_seed(master_seed, i)``:
    hyperparameters from child 0 of that, the training stream from child 1.
    """
    X, y = dataset.features, dataset.target
    X_train, y_train = X[split.train], y[split.train]
    X_val, y_val = X[split.val], y[split.val]
    models = []
    scores = np.empty(n_models, dtype=np.float64)
    gains = []
    for i in range(n_models):
        seed_i = child_seed(master_seed, i)
        hp = sample_hyperparams(generator(child_seed(seed_i, 0)))
        hp = replace(
            hp,
            n_estimators_max=n_estimators_max,
            early_stopping_rounds=early_stopping_rounds,
        )
        try:
            model = train(
                X_train, y_train, X_val, y_val, hp,
                task=dataset.task, seed=child_seed(seed_i, 1),
            )
        except RuntimeError as exc:
            raise RuntimeError(f"training model {i} failed: {exc}") from exc
        models.append(model)
        scores[i] = score(model, X_val, y_val)
        gains.append(gain_importance(model))
    return Population(models=models, scores=scores, gain_vectors=np.stack(gains))


def generate_population(dataset: Dataset, split: FourWaySplit, config: PipelineConfig) -> Population:
    return train_population(
        dataset,
        split,
        config.population_size,
        config.master_seed,
        n_estimators_max=config.n_estimators_max,
        early_stopping_rounds=config.early_stopping_rounds,
    )


def filter_performance(scores, epsilon: float, mode: str = "absolute") -> list[int]:
    """Stage 2: indices within epsilon of the best score (always incl. argmax)."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("empty population")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    s_star = float(scores.max())
    if mode == "absolute":
        bound = epsilon
    elif mode == "relative":
        bound = epsilon * abs(s_star)
    else:
        raise ValueError(f"unknown filter mode {mode!r}")
    return [int(i) for i in np.nonzero(np.abs(scores - s_star) <= bound)[0]]


def _unit_rows(vectors: np.ndarray):
    norms = np.linalg.norm(vectors, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    return vectors / safe[:, None], norms == 0


def maxmin_select(gain_vectors, candidates, scores, k_max: int, delta: float) -> list[int]:
    """Stage 3 (default): greedy max-min cosine-dissimilarity selection.

    Starts from the highest-scoring candidate, then repeatedly adds the
    candidate whose minimum distance to the selected set is largest,
    stopping at ``k_max`` or when that best distance falls below ``delta``.
    Zero-norm vectors count as distance 1 from everything.  Ties break
    toward the lower candidate index.  Returns indices in selection order.
    """
    candidates = sorted(int(c) for c in candidates)
    if not candidates:
        raise ValueError("no candidates to select from")
    vectors = np.asarray(gain_vectors, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    unit, is_zero = _unit_rows(vectors)

    def distance(a: int, b: int) -> float:
        if is_zero[a] or is_zero[b]:
            return 1.0
        return 1.0 - float(unit[a] @ unit[b])

    cand_scores = scores[candidates]
    selected = [candidates[int(np.argmax(cand_scores))]]
    remaining = [c for c in candidates if c != selected[0]]
    min_dist = {c: distance(c, selected[0]) for c in remaining}

    while remaining and len(selected) < k_max:
        best = max(remaining, key=lambda c: (min_dist[c], -c))
        if min_dist[best] < delta:
            break
        selected.append(best)
        remaining.remove(best)
        for c in remaining:
            d = distance(c, best)
            if d < min_dist[c]:
                min_dist[c] = d
    return selected


def _dedup_corr(a: np.ndarray, b: np.ndarray) -> float:
    # Constant vectors have no rank signal: two constants are duplicates
    # of each other, a constant and a non-constant are not.
    a_const = np.all(a == a[0])
    b_const = np.all(b == b[0])
    if a_const or b_const:
        return 1.0 if (a_const and b_const) else 0.0
    return spearman(a, b)


def dedup_select(gain_vectors, candidates, scores) -> list[int]:
    """Stage 3 (variant): drop near-duplicates (rank correlation > 0.95).

    Candidates are processed by descending score (ties toward the lower
    index), so each duplicated pair keeps its better-scoring member and
    the result does not depend on input order.  Returns ascending indices.
    """
    candidates = sorted(int(c) for c in candidates)
    if not candidates:
        raise ValueError("no candidates to select from")
    vectors = np.asarray(gain_vectors, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    by_score = sorted(candidates, key=lambda c: (-scores[c], c))
    kept: list[int] = []
    for c in by_score:
        if all(
            _dedup_corr(vectors[c], vectors[k]) <= DEDUP_SPEARMAN_THRESHOLD
            for k in kept
        ):
            kept.append(c)
    return sorted(kept)


def random_select(candidates, k: int, seed: int) -> list[int]:
    """Uniform k-subset of the candidates (the whole set if k >= len)."""
    candidates = sorted(int(c) for c in candidates)
    if len(candidates) <= k:
        return candidates
    picks = generator(seed).choice(len(candidates), size=k, replace=False)
    return sorted(candidates[i] for i in picks)


def naive_topn_select(candidates, scores, k: int) -> list[int]:
    """Top-k candidates by score, no diversity criterion."""
    candidates = sorted(int(c) for c in candidates)
    scores = np.asarray(scores, dtype=np.float64)
    by_score = sorted(candidates, key=lambda c: (-scores[c], c))
    return sorted(by_score[:k])


def _select(config: PipelineConfig, vectors, filtered, scores) -> list[int]:
    if config.selection == "maxmin":
        return maxmin_select(
            vectors, filtered, scores, config.k_max, config.diversity_threshold
        )
    if config.selection == "dedup":
        kept = dedup_select(vectors, filtered, scores)
        return naive_topn_select(kept, scores, config.k_max)
    if config.selection == "random":
        return random_select(
            filtered, config.k_max, string_seed(config.master_seed, "selection")
        )
    return naive_topn_select(filtered, scores, config.k_max)


def sample_background(split: FourWaySplit, background_size: int, master_seed: int):
    """Background row positions within the explain split (plus dataset ids).

    Drawn without replacement from the explain split; if the split is
    smaller than the requested size, every explain row is used.
    """
    n_explain = split.explain.size
    if n_explain == 0:
        raise ValueError("explain split is empty")
    if background_size >= n_explain:
        positions = np.arange(n_explain)
    else:
        rng = generator(string_seed(master_seed, "background"))
        positions = np.sort(rng.choice(n_explain, size=background_size, replace=False))
    return positions, split.explain[positions]


def _finish(config, per_model, selected, filtered, population) -> DashResult:
    consensus = consensus_average(per_model)
    importance = global_importance(consensus)
    report = diagnostics.compute_fsi(per_model, importance)
    assignment = diagnostics.assign_quadrants(importance, report.fsi)
    return DashResult(
        consensus=consensus,
        per_model=per_model,
        selected=list(selected),
        filtered=list(filtered),
        fsi=report.fsi,
        quadrants=assignment.quadrants,
        global_importance=importance,
        fsi_report=report,
        quadrant_assignment=assignment,
        population=population,
    )


def run_dash(dataset: Dataset, split: FourWaySplit, config: PipelineConfig) -> DashResult:
    """Run all five stages on a dataset and four-way split."""
    population = generate_population(dataset, split, config)
    filtered = filter_performance(population.scores, config.epsilon, config.epsilon_mode)
    selected = _select(config, population.gain_vectors, filtered, population.scores)
    X_explain = dataset.features[split.explain]
    positions, background_ids = sample_background(
        split, config.background_size, config.master_seed
    )
    background = X_explain[positions]
    per_model = [
        interventional_shap(
            population.models[i],
            X_explain,
            background,
            model_id=f"m{i:04d}",
            background_ids=background_ids,
        )
        for i in selected
    ]
    return _finish(config, per_model, selected, filtered, population)


def fit_from_attributions(
    matrices: list[ShapMatrix], scores, config: PipelineConfig
) -> DashResult:
    """Stages 2-5 on externally produced attribution matrices.

    Diversity is measured on each matrix's global importance vector (the
    closest analogue of a gain vector that any attribution method offers).
    To aggregate a pre-selected set verbatim, pass ``diversity_threshold=0``
    with ``k_max >= len(matrices)``: the filter always admits everything
    within epsilon of the best provided score and max-min selection with a
    zero threshold never stops early.
    """
    if not matrices:
        raise ValueError("need at least one attribution matrix")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (len(matrices),):
        raise ValueError("scores must align with matrices")
    shape = matrices[0].values.shape
    for sm in matrices[1:]:
        if sm.values.shape != shape:
            raise ValueError("attribution matrices must share one shape")
    filtered = filter_performance(scores, config.epsilon, config.epsilon_mode)
    vectors = np.stack([global_importance(sm) for sm in matrices])
    selected = _select(config, vectors, filtered, scores)
    per_model = [matrices[i] for i in selected]
    return _finish(config, per_model, selected, filtered, population=None)


def ensemble_raw_prediction(models: list[BoostedModel], X: np.ndarray) -> np.ndarray:
    """Mean raw prediction across models (the predictor consensus explains)."""
    if not models:
        raise ValueError("need at least one model")
    return np.mean([predict_raw(m, X) for m in models], axis=0)
