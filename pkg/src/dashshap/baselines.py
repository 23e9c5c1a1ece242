"""The nine benchmarked importance methods under one calling convention.

Every method consumes a dataset and four-way split, spends its own seeded
randomness, and produces a global importance vector (mean |attribution|
per feature over the explain split) plus its test RMSE.  Methods split
into two families:

* *dependent* methods explain a single optimization trajectory: the best
  of a random search (``single_best``), one long low-column-sample run
  (``large_single_model``, optionally grid-tuned), or one wide ensemble
  (``ensemble_shap``);
* *independent* methods average attributions over separately trained
  models: seed-averaging with one fixed config (``stochastic_retrain``)
  and the population pipeline with max-min, random, or top-score
  selection.

The large single model deliberately has no early stopping: it runs an
exact tree count so its total tree budget can be matched to the pipeline's.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, FourWaySplit
from .gbdt import Hyperparams, predict_raw, score, train
from .metrics import rmse
from .pipeline import (
    PipelineConfig,
    ensemble_raw_prediction,
    run_dash,
    sample_background,
    train_population,
)
from .seeding import child_seed, generator
from .treeshap import consensus_average, global_importance, interventional_shap

METHOD_NAMES = (
    "single_best_30",
    "single_best_M",
    "large_single_model",
    "lsm_tuned",
    "ensemble_shap",
    "stochastic_retrain",
    "random_selection",
    "naive_topn",
    "dash_maxmin",
)

LSM_COLSAMPLE_GRID = (0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5)
LSM_TUNED_DEPTH_GRID = (3, 6, 10)
LSM_TUNED_LR_GRID = (0.01, 0.05)


@dataclass(frozen=True)
class MethodSpec:
    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in METHOD_NAMES:
            raise ValueError(f"unknown method {self.name!r}; valid: {METHOD_NAMES}")


@dataclass
class MethodResult:
    name: str
    importance: np.ndarray
    test_rmse: float | None
    extras: dict = field(default_factory=dict)


def _test_rmse(dataset, split, raw_predictions) -> float | None:
    if dataset.task != "regression":
        return None
    return rmse(raw_predictions, dataset.target[split.test])


def _explain_one(model, dataset, split, background_size, seed):
    X_explain = dataset.features[split.explain]
    positions, bg_ids = sample_background(split, background_size, seed)
    return interventional_shap(
        model, X_explain, X_explain[positions], model_id="m0000", background_ids=bg_ids
    )


def single_best(
    dataset: Dataset,
    split: FourWaySplit,
    m: int,
    seed: int,
    background_size: int = 100,
    n_estimators_max: int = 300,
    early_stopping_rounds: int = 20,
) -> MethodResult:
    """Train ``m`` random-search models and explain the best one."""
    if m < 1:
        raise ValueError("m must be >= 1")
    pop = train_population(
        dataset, split, m, child_seed(seed, 0),
        n_estimators_max=n_estimators_max,
        early_stopping_rounds=early_stopping_rounds,
    )
    best = int(np.argmax(pop.scores))
    model = pop.models[best]
    sm = _explain_one(model, dataset, split, background_size, child_seed(seed, 1))
    return MethodResult(
        name=f"single_best_{m}",
        importance=global_importance(sm),
        test_rmse=_test_rmse(
            dataset, split, predict_raw(model, dataset.features[split.test])
        ),
        extras={
            "best_index": best,
            "best_val_score": float(pop.scores[best]),
            "n_trees_total": int(sum(mod.n_trees for mod in pop.models)),
            "n_shap_evals": 1,
        },
    )


def large_single_model(
    dataset: Dataset,
    split: FourWaySplit,
    total_trees: int,
    tuned: bool,
    seed: int,
    background_size: int = 100,
    max_depth: int = 6,
    learning_rate: float = 0.01,
) -> MethodResult:
    """One sequential model with exactly ``total_trees`` trees.

    Column sampling is drawn per run from the low end of the search grid;
    the small fixed learning rate keeps long runs non-degenerate.  The
    tuned variant first grid-searches depth x learning-rate with early
    stopping, then commits the winner to the long run.
    """
    if total_trees < 1:
        raise ValueError("total_trees must be >= 1")
    X, y = dataset.features, dataset.target
    rng = generator(child_seed(seed, 0))
    colsample = float(LSM_COLSAMPLE_GRID[int(rng.integers(len(LSM_COLSAMPLE_GRID)))])

    if tuned:
        best_pair, best_val = None, -np.inf
        for d_i, depth in enumerate(LSM_TUNED_DEPTH_GRID):
            for l_i, lr in enumerate(LSM_TUNED_LR_GRID):
                probe = train(
                    X[split.train], y[split.train], X[split.val], y[split.val],
                    Hyperparams(
                        max_depth=depth, learning_rate=lr,
                        colsample_bytree=colsample,
                    ),
                    task=dataset.task,
                    seed=child_seed(seed, 1, d_i, l_i),
                )
                if probe.val_score > best_val:
                    best_val = probe.val_score
                    best_pair = (depth, lr)
        max_depth, learning_rate = best_pair

    hp = Hyperparams(
        max_depth=max_depth,
        learning_rate=learning_rate,
        colsample_bytree=colsample,
        n_estimators_max=total_trees,
        early_stopping_rounds=0,
    )
    model = train(
        X[split.train], y[split.train], X[split.val], y[split.val],
        hp, task=dataset.task, seed=child_seed(seed, 2),
    )
    sm = _explain_one(model, dataset, split, background_size, child_seed(seed, 3))
    return MethodResult(
        name="lsm_tuned" if tuned else "large_single_model",
        importance=global_importance(sm),
        test_rmse=_test_rmse(dataset, split, predict_raw(model, X[split.test])),
        extras={
            "colsample_bytree": colsample,
            "max_depth": max_depth,
            "learning_rate": learning_rate,
            "n_trees_total": model.n_trees,
            "n_shap_evals": 1,
        },
    )


def ensemble_shap(
    dataset: Dataset,
    split: FourWaySplit,
    seed: int,
    n_trees: int = 2000,
    background_size: int = 100,
    max_depth: int = 6,
    learning_rate: float = 0.05,
) -> MethodResult:
    """One wide ensemble (colsample 0.8), one attribution over all of it."""
    X, y = dataset.features, dataset.target
    hp = Hyperparams(
        max_depth=max_depth,
        learning_rate=learning_rate,
        colsample_bytree=0.8,
        n_estimators_max=n_trees,
        early_stopping_rounds=0,
    )
    model = train(
        X[split.train], y[split.train], X[split.val], y[split.val],
        hp, task=dataset.task, seed=child_seed(seed, 0),
    )
    sm = _explain_one(model, dataset, split, background_size, child_seed(seed, 1))
    return MethodResult(
        name="ensemble_shap",
        importance=global_importance(sm),
        test_rmse=_test_rmse(dataset, split, predict_raw(model, X[split.test])),
        extras={"n_trees_total": model.n_trees, "n_shap_evals": 1},
    )


def stochastic_retrain(
    dataset: Dataset,
    split: FourWaySplit,
    k: int,
    seed: int,
    n_search: int = 100,
    background_size: int = 100,
    n_estimators_max: int = 300,
    early_stopping_rounds: int = 20,
) -> MethodResult:
    """Seed-averaging: best config of a random search, retrained k times.

    The k retrains share one hyperparameter configuration and differ only
    by seed; their attribution matrices are averaged element-wise.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    search = train_population(
        dataset, split, n_search, child_seed(seed, 0),
        n_estimators_max=n_estimators_max,
        early_stopping_rounds=early_stopping_rounds,
    )
    best_hp = search.models[int(np.argmax(search.scores))].hyperparams
    X, y = dataset.features, dataset.target
    models = [
        train(
            X[split.train], y[split.train], X[split.val], y[split.val],
            best_hp, task=dataset.task, seed=child_seed(seed, 1, j),
        )
        for j in range(k)
    ]
    X_explain = X[split.explain]
    positions, bg_ids = sample_background(split, background_size, child_seed(seed, 2))
    background = X_explain[positions]
    mats = [
        interventional_shap(
            mod, X_explain, background, model_id=f"m{j:04d}", background_ids=bg_ids
        )
        for j, mod in enumerate(models)
    ]
    consensus = consensus_average(mats)
    return MethodResult(
        name="stochastic_retrain",
        importance=global_importance(consensus),
        test_rmse=_test_rmse(
            dataset, split, ensemble_raw_prediction(models, X[split.test])
        ),
        extras={
            "n_trees_total": int(
                sum(m.n_trees for m in search.models) + sum(m.n_trees for m in models)
            ),
            "n_shap_evals": k,
        },
    )


def _population_method(dataset, split, seed, config: PipelineConfig, selection: str,
                       name: str) -> MethodResult:
    cfg = PipelineConfig(
        population_size=config.population_size,
        k_max=config.k_max,
        epsilon=config.epsilon,
        epsilon_mode=config.epsilon_mode,
        diversity_threshold=config.diversity_threshold,
        selection=selection,
        background_size=config.background_size,
        master_seed=seed,
        n_estimators_max=config.n_estimators_max,
        early_stopping_rounds=config.early_stopping_rounds,
        cluster_tau=config.cluster_tau,
    )
    result = run_dash(dataset, split, cfg)
    models = [result.population.models[i] for i in result.selected]
    return MethodResult(
        name=name,
        importance=result.global_importance,
        test_rmse=_test_rmse(
            dataset, split, ensemble_raw_prediction(models, dataset.features[split.test])
        ),
        extras={
            "k_eff": len(result.selected),
            "models_passing": len(result.filtered),
            "mean_trees_selected": float(np.mean([m.n_trees for m in models])),
            "n_trees_total": int(
                sum(m.n_trees for m in result.population.models)
            ),
            "n_shap_evals": len(result.selected),
        },
    )


def run_method(
    spec: MethodSpec,
    dataset: Dataset,
    split: FourWaySplit,
    seed: int,
    config: PipelineConfig,
) -> MethodResult:
    """Dispatch one benchmark method under the shared protocol."""
    p = spec.params
    bg = p.get("background_size", config.background_size)
    common = dict(
        n_estimators_max=config.n_estimators_max,
        early_stopping_rounds=config.early_stopping_rounds,
    )
    if spec.name == "single_best_30":
        r = single_best(dataset, split, p.get("m", 30), seed, bg, **common)
    elif spec.name == "single_best_M":
        r = single_best(
            dataset, split, p.get("m", config.population_size), seed, bg, **common
        )
    elif spec.name == "large_single_model":
        r = large_single_model(
            dataset, split, p.get("total_trees", 15000), False, seed, bg,
            max_depth=p.get("max_depth", 6),
            learning_rate=p.get("learning_rate", 0.01),
        )
    elif spec.name == "lsm_tuned":
        r = large_single_model(
            dataset, split, p.get("total_trees", 15000), True, seed, bg
        )
    elif spec.name == "ensemble_shap":
        r = ensemble_shap(dataset, split, seed, p.get("n_trees", 2000), bg)
    elif spec.name == "stochastic_retrain":
        r = stochastic_retrain(
            dataset, split, p.get("k", 30), seed,
            n_search=p.get("n_search", 100), background_size=bg, **common,
        )
    elif spec.name == "random_selection":
        r = _population_method(dataset, split, seed, config, "random", spec.name)
    elif spec.name == "naive_topn":
        r = _population_method(dataset, split, seed, config, "naive_topn", spec.name)
    else:  # dash_maxmin
        r = _population_method(dataset, split, seed, config, "maxmin", spec.name)
    r.name = spec.name
    return r
