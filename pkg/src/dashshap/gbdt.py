"""Compact gradient-boosted regression/classification trees.

Trees are grown by exact greedy search over sorted unique midpoints with
second-order (Newton) leaf weights ``w = -T_alpha(G) / (H + lambda)``,
where ``T_alpha`` is L1 soft-thresholding of the gradient sum.  Split gain
ties break toward the lowest feature index, then the lowest threshold, so
training is fully deterministic for a given ``(data, hyperparams, seed)``.

Each boosting round draws a per-tree column sample of
``ceil(colsample_bytree * P)`` features and a row sample of
``ceil(subsample * N)`` rows from a Philox stream keyed by the training
seed.  Validation score (negative RMSE, or AUC for classification) is
tracked every round; when it fails to improve for ``early_stopping_rounds``
rounds, training stops and the model is truncated to the best round.

The hot loops (split search, prediction) run under numba; everything else
is plain NumPy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit
from scipy.special import expit
from scipy.stats import rankdata

from .seeding import generator
from .storage import float_to_hex, hex_to_float, read_json, write_json

# Hyperparameter search grids for population generation.
MAX_DEPTH_GRID = (3, 4, 5, 6, 8, 10, 12)
LEARNING_RATE_GRID = (0.01, 0.03, 0.05, 0.1, 0.2, 0.3)
COLSAMPLE_BYTREE_GRID = (0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5)
SUBSAMPLE_GRID = (0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
REG_ALPHA_GRID = (0.0, 0.01, 0.1, 1.0, 5.0, 10.0)
REG_LAMBDA_GRID = (0.0, 0.01, 0.1, 1.0, 5.0, 10.0)
MIN_CHILD_WEIGHT_GRID = (1.0, 3.0, 5.0, 10.0, 20.0)

MODEL_FORMAT = "dashshap-gbm"
MODEL_VERSION = 1


@dataclass(frozen=True)
class Hyperparams:
    max_depth: int = 6
    learning_rate: float = 0.1
    colsample_bytree: float = 1.0
    subsample: float = 1.0
    reg_alpha: float = 0.0
    reg_lambda: float = 1.0
    min_child_weight: float = 1.0
    n_estimators_max: int = 300
    early_stopping_rounds: int = 20  # 0 disables early stopping

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not 0.0 < self.colsample_bytree <= 1.0:
            raise ValueError("colsample_bytree must be in (0, 1]")
        if not 0.0 < self.subsample <= 1.0:
            raise ValueError("subsample must be in (0, 1]")
        if self.reg_alpha < 0 or self.reg_lambda < 0 or self.min_child_weight < 0:
            raise ValueError("regularization terms must be non-negative")
        if self.n_estimators_max < 1:
            raise ValueError("n_estimators_max must be >= 1")


def sample_hyperparams(rng: np.random.Generator) -> Hyperparams:
    """Draw each field uniformly from its search grid."""
    pick = lambda grid: grid[int(rng.integers(len(grid)))]
    return Hyperparams(
        max_depth=pick(MAX_DEPTH_GRID),
        learning_rate=pick(LEARNING_RATE_GRID),
        colsample_bytree=pick(COLSAMPLE_BYTREE_GRID),
        subsample=pick(SUBSAMPLE_GRID),
        reg_alpha=pick(REG_ALPHA_GRID),
        reg_lambda=pick(REG_LAMBDA_GRID),
        min_child_weight=pick(MIN_CHILD_WEIGHT_GRID),
    )


@dataclass
class Tree:
    """One regression tree as flat parallel arrays.

    ``feature[k] >= 0`` marks an internal node splitting on that (global)
    feature with rule ``x[feature] < threshold -> left``; ``feature[k] == -1``
    marks a leaf carrying ``value[k]``.  ``cover`` is the hessian sum of the
    training rows routed through each node, so every internal node's cover
    equals the sum of its children's covers.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray
    gain: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    def predict_into(self, X: np.ndarray, out: np.ndarray) -> None:
        _predict_tree(
            self.feature, self.threshold, self.left, self.right, self.value, X, out
        )

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros(X.shape[0], dtype=np.float64)
        self.predict_into(np.ascontiguousarray(X, dtype=np.float64), out)
        return out


@dataclass
class BoostedModel:
    trees: list[Tree]
    learning_rate: float
    base_score: float
    task: str
    hyperparams: Hyperparams
    seed: int
    best_iteration: int
    val_score: float
    n_features: int
    val_history: tuple[float, ...] = field(default=(), repr=False)

    @property
    def n_trees(self) -> int:
        return len(self.trees)


@njit(cache=True)
def _soft_threshold(gsum, alpha):
    if gsum > alpha:
        return gsum - alpha
    if gsum < -alpha:
        return gsum + alpha
    return 0.0


@njit(cache=True)
def _split_score(gsum, hsum, alpha, lam):
    denom = hsum + lam
    if denom <= 0.0:
        return 0.0
    t = _soft_threshold(gsum, alpha)
    return t * t / denom


@njit(cache=True)
def _leaf_value(gsum, hsum, alpha, lam):
    denom = hsum + lam
    if denom <= 0.0:
        return 0.0
    return -_soft_threshold(gsum, alpha) / denom


@njit(cache=True)
def _build_tree(XsT, g, h, full_order, rows, n_total, max_depth,
                min_child_weight, reg_alpha, reg_lambda):
    """Grow one tree on the (row/column) sampled matrix ``Xs``.

    ``full_order`` holds the whole training set's per-column sort order for
    the sampled columns; the sampled rows are filtered out of it (stable),
    and the per-column orders are stably partitioned as nodes split, so
    each node scan is O(rows in node) with no per-tree sort.
    """
    m, n = XsT.shape
    cap = 2 * n + 2
    feature = np.full(cap, -1, np.int32)
    threshold = np.zeros(cap, np.float64)
    left = np.full(cap, -1, np.int32)
    right = np.full(cap, -1, np.int32)
    value = np.zeros(cap, np.float64)
    cover = np.zeros(cap, np.float64)
    gain = np.zeros(cap, np.float64)

    local_id = np.full(n_total, -1, np.int64)
    for k in range(n):
        local_id[rows[k]] = k
    order = np.empty((m, n), np.int64)
    for j in range(m):
        pos = 0
        for t in range(n_total):
            loc = local_id[full_order[j, t]]
            if loc >= 0:
                order[j, pos] = loc
                pos += 1
    buf = np.empty(n, np.int64)
    goes_left = np.empty(n, np.bool_)

    stack_node = np.empty(cap, np.int64)
    stack_start = np.empty(cap, np.int64)
    stack_end = np.empty(cap, np.int64)
    stack_depth = np.empty(cap, np.int64)
    stack_node[0], stack_start[0], stack_end[0], stack_depth[0] = 0, 0, n, 0
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        node = stack_node[top]
        s = stack_start[top]
        e = stack_end[top]
        depth = stack_depth[top]

        gsum = 0.0
        hsum = 0.0
        for t in range(s, e):
            idx = order[0, t]
            gsum += g[idx]
            hsum += h[idx]
        cover[node] = hsum

        best_gain = 0.0
        best_feat = -1
        best_thr = 0.0
        if depth < max_depth and e - s >= 2 and hsum >= 2.0 * min_child_weight:
            parent_score = _split_score(gsum, hsum, reg_alpha, reg_lambda)
            for j in range(m):
                gl = 0.0
                hl = 0.0
                for t in range(s, e - 1):
                    idx = order[j, t]
                    gl += g[idx]
                    hl += h[idx]
                    v = XsT[j, idx]
                    v_next = XsT[j, order[j, t + 1]]
                    if v == v_next:
                        continue
                    hr = hsum - hl
                    if hr < min_child_weight:
                        break  # hr only shrinks from here
                    if hl < min_child_weight:
                        continue
                    gr = gsum - gl
                    cand = 0.5 * (
                        _split_score(gl, hl, reg_alpha, reg_lambda)
                        + _split_score(gr, hr, reg_alpha, reg_lambda)
                        - parent_score
                    )
                    if cand > best_gain:
                        best_gain = cand
                        best_feat = j
                        best_thr = 0.5 * (v + v_next)

        if best_feat < 0:
            value[node] = _leaf_value(gsum, hsum, reg_alpha, reg_lambda)
            continue

        for t in range(s, e):
            idx = order[best_feat, t]
            goes_left[idx] = XsT[best_feat, idx] < best_thr
        n_left = 0
        for t in range(s, e):
            if goes_left[order[0, t]]:
                n_left += 1
        mid = s + n_left
        for j in range(m):
            a = s
            b = mid
            for t in range(s, e):
                idx = order[j, t]
                if goes_left[idx]:
                    buf[a] = idx
                    a += 1
                else:
                    buf[b] = idx
                    b += 1
            for t in range(s, e):
                order[j, t] = buf[t]

        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        feature[node] = best_feat
        threshold[node] = best_thr
        gain[node] = best_gain
        left[node] = lid
        right[node] = rid
        stack_node[top], stack_start[top], stack_end[top], stack_depth[top] = (
            rid, mid, e, depth + 1,
        )
        top += 1
        stack_node[top], stack_start[top], stack_end[top], stack_depth[top] = (
            lid, s, mid, depth + 1,
        )
        top += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
        cover[:n_nodes].copy(),
        gain[:n_nodes].copy(),
    )


@njit(cache=True)
def _predict_tree(feature, threshold, left, right, value, X, out):
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] < threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] += value[node]


def _fit_one_tree(X, g, h, hp: Hyperparams, rng: np.random.Generator, full_order) -> Tree:
    n, p = X.shape
    k_cols = math.ceil(hp.colsample_bytree * p)
    k_rows = math.ceil(hp.subsample * n)
    cols = (
        np.arange(p)
        if k_cols == p
        else np.sort(rng.choice(p, size=k_cols, replace=False))
    )
    rows = (
        np.arange(n)
        if k_rows == n
        else np.sort(rng.choice(n, size=k_rows, replace=False))
    )
    XsT = np.ascontiguousarray(X[np.ix_(rows, cols)].T)
    feat, thr, left, right, value, cover, gain = _build_tree(
        XsT,
        np.ascontiguousarray(g[rows]),
        np.ascontiguousarray(h[rows]),
        np.ascontiguousarray(full_order[cols]),
        rows,
        n,
        hp.max_depth,
        hp.min_child_weight,
        hp.reg_alpha,
        hp.reg_lambda,
    )
    internal = feat >= 0
    glob = feat.copy()
    glob[internal] = cols[feat[internal]].astype(np.int32)
    return Tree(glob, thr, left, right, value, cover, gain)


def _raw_sum(trees, X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    out = np.zeros(X.shape[0], dtype=np.float64)
    for tree in trees:
        tree.predict_into(X, out)
    return out


def predict_raw(model: BoostedModel, X: np.ndarray) -> np.ndarray:
    """Raw additive score (pre-sigmoid margin for classification)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ValueError(
            f"expected {model.n_features} feature columns, got shape {X.shape}"
        )
    return model.base_score + model.learning_rate * _raw_sum(model.trees, X)


def predict(model: BoostedModel, X: np.ndarray) -> np.ndarray:
    """Raw score for regression, probability for classification."""
    raw = predict_raw(model, X)
    if model.task == "binary-classification":
        return expit(raw)
    return raw


def _neg_rmse(raw, y) -> float:
    return -float(np.sqrt(np.mean((raw - y) ** 2)))


def _auc(raw, y) -> float:
    pos = y == 1.0
    n_pos = int(pos.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC is undefined for single-class data")
    ranks = rankdata(raw)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def score(model: BoostedModel, X: np.ndarray, y: np.ndarray) -> float:
    """Validation score: negative RMSE (regression) or AUC (classification)."""
    y = np.asarray(y, dtype=np.float64)
    if y.size == 0:
        raise ValueError("cannot score on empty data")
    raw = predict_raw(model, X)
    if model.task == "binary-classification":
        return _auc(raw, y)
    return _neg_rmse(raw, y)


def train(
    X_train: np.ndarray,
    y_train: np.ndarray,
    X_val: np.ndarray,
    y_val: np.ndarray,
    hp: Hyperparams,
    task: str = "regression",
    seed: int = 0,
) -> BoostedModel:
    """Boost depth-limited trees on the negative gradient with early stopping.

    Raises ``RuntimeError`` if the loss goes non-finite (diagnostic includes
    the failing round).  Constant features simply never produce split
    candidates; a round with no usable split yields a single-leaf tree.
    """
    X_train = np.ascontiguousarray(X_train, dtype=np.float64)
    X_val = np.ascontiguousarray(X_val, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.float64)
    y_val = np.asarray(y_val, dtype=np.float64)
    if X_train.shape[1] != X_val.shape[1]:
        raise ValueError("train and val must share the feature count")
    if y_val.size == 0:
        raise ValueError("validation split must be non-empty")

    if task == "binary-classification":
        p_bar = min(max(float(np.mean(y_train)), 1e-6), 1.0 - 1e-6)
        base = math.log(p_bar / (1.0 - p_bar))
        val_metric = _auc
    elif task == "regression":
        base = float(np.mean(y_train))
        val_metric = _neg_rmse
    else:
        raise ValueError(f"unknown task {task!r}")

    rng = generator(seed)
    raw_train = np.full(y_train.size, base, dtype=np.float64)
    raw_val = np.full(y_val.size, base, dtype=np.float64)
    full_order = np.empty((X_train.shape[1], X_train.shape[0]), dtype=np.int64)
    for j in range(X_train.shape[1]):
        full_order[j] = np.argsort(X_train[:, j])
    trees: list[Tree] = []
    history: list[float] = []
    best_score = -np.inf
    best_round = 0

    for t in range(1, hp.n_estimators_max + 1):
        if task == "binary-classification":
            p = expit(raw_train)
            g = p - y_train
            h = p * (1.0 - p)
        else:
            g = raw_train - y_train
            h = np.ones_like(g)
        tree = _fit_one_tree(X_train, g, h, hp, rng, full_order)
        trees.append(tree)
        raw_train += hp.learning_rate * tree.predict(X_train)
        raw_val += hp.learning_rate * tree.predict(X_val)
        if not np.isfinite(raw_train).all():
            raise RuntimeError(f"non-finite training loss at round {t}")
        s = val_metric(raw_val, y_val)
        if not np.isfinite(s):
            raise RuntimeError(f"non-finite validation score at round {t}")
        history.append(s)
        if s > best_score:
            best_score = s
            best_round = t
        elif hp.early_stopping_rounds > 0 and t - best_round >= hp.early_stopping_rounds:
            break

    if hp.early_stopping_rounds <= 0:
        best_round = len(trees)
        best_score = history[-1]

    return BoostedModel(
        trees=trees[:best_round],
        learning_rate=hp.learning_rate,
        base_score=base,
        task=task,
        hyperparams=hp,
        seed=seed,
        best_iteration=best_round,
        val_score=best_score,
        n_features=X_train.shape[1],
        val_history=tuple(history),
    )


def gain_importance(model: BoostedModel) -> np.ndarray:
    """Per-feature split-gain totals, normalized to sum 1 (zeros if no splits)."""
    out = np.zeros(model.n_features, dtype=np.float64)
    for tree in model.trees:
        internal = tree.feature >= 0
        np.add.at(out, tree.feature[internal], tree.gain[internal])
    total = out.sum()
    if total > 0:
        out /= total
    return out


# -- serialization ----------------------------------------------------------


def _node_to_dict(tree: Tree, node: int) -> dict:
    if tree.feature[node] < 0:
        return {
            "value": float_to_hex(tree.value[node]),
            "cover": float_to_hex(tree.cover[node]),
        }
    return {
        "feature": int(tree.feature[node]),
        "threshold": float_to_hex(tree.threshold[node]),
        "gain": float_to_hex(tree.gain[node]),
        "cover": float_to_hex(tree.cover[node]),
        "left": _node_to_dict(tree, int(tree.left[node])),
        "right": _node_to_dict(tree, int(tree.right[node])),
    }


def _count_nodes(d: dict) -> int:
    if "value" in d:
        return 1
    return 1 + _count_nodes(d["left"]) + _count_nodes(d["right"])


def _dict_to_tree(d: dict) -> Tree:
    n = _count_nodes(d)
    tree = Tree(
        feature=np.full(n, -1, np.int32),
        threshold=np.zeros(n, np.float64),
        left=np.full(n, -1, np.int32),
        right=np.full(n, -1, np.int32),
        value=np.zeros(n, np.float64),
        cover=np.zeros(n, np.float64),
        gain=np.zeros(n, np.float64),
    )
    counter = [0]

    def assign(node_dict):
        node = counter[0]
        counter[0] += 1
        tree.cover[node] = hex_to_float(node_dict["cover"])
        if "value" in node_dict:
            tree.value[node] = hex_to_float(node_dict["value"])
            return node
        tree.feature[node] = node_dict["feature"]
        tree.threshold[node] = hex_to_float(node_dict["threshold"])
        tree.gain[node] = hex_to_float(node_dict["gain"])
        tree.left[node] = assign(node_dict["left"])
        tree.right[node] = assign(node_dict["right"])
        return node

    assign(d)
    return tree


def model_to_dict(model: BoostedModel) -> dict:
    hp = model.hyperparams
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "task": model.task,
        "learning_rate": float_to_hex(model.learning_rate),
        "base_score": float_to_hex(model.base_score),
        "seed": int(model.seed),
        "best_iteration": int(model.best_iteration),
        "val_score": float_to_hex(model.val_score),
        "val_history": [float_to_hex(v) for v in model.val_history],
        "n_features": int(model.n_features),
        "hyperparams": {
            "max_depth": hp.max_depth,
            "learning_rate": float_to_hex(hp.learning_rate),
            "colsample_bytree": float_to_hex(hp.colsample_bytree),
            "subsample": float_to_hex(hp.subsample),
            "reg_alpha": float_to_hex(hp.reg_alpha),
            "reg_lambda": float_to_hex(hp.reg_lambda),
            "min_child_weight": float_to_hex(hp.min_child_weight),
            "n_estimators_max": hp.n_estimators_max,
            "early_stopping_rounds": hp.early_stopping_rounds,
        },
        "trees": [_node_to_dict(tree, 0) for tree in model.trees],
    }


def model_from_dict(d: dict) -> BoostedModel:
    if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
        raise ValueError("not a recognized model document")
    hp = d["hyperparams"]
    return BoostedModel(
        trees=[_dict_to_tree(t) for t in d["trees"]],
        learning_rate=hex_to_float(d["learning_rate"]),
        base_score=hex_to_float(d["base_score"]),
        task=d["task"],
        hyperparams=Hyperparams(
            max_depth=hp["max_depth"],
            learning_rate=hex_to_float(hp["learning_rate"]),
            colsample_bytree=hex_to_float(hp["colsample_bytree"]),
            subsample=hex_to_float(hp["subsample"]),
            reg_alpha=hex_to_float(hp["reg_alpha"]),
            reg_lambda=hex_to_float(hp["reg_lambda"]),
            min_child_weight=hex_to_float(hp["min_child_weight"]),
            n_estimators_max=hp["n_estimators_max"],
            early_stopping_rounds=hp["early_stopping_rounds"],
        ),
        seed=d["seed"],
        best_iteration=d["best_iteration"],
        val_score=hex_to_float(d["val_score"]),
        n_features=d["n_features"],
        val_history=tuple(hex_to_float(v) for v in d["val_history"]),
    )


def save_model(model: BoostedModel, path) -> None:
    write_json(path, model_to_dict(model))


def load_model(path) -> BoostedModel:
    return model_from_dict(read_json(path))


def single_leaf_model(value: float, n_features: int, task: str = "regression") -> BoostedModel:
    """A zero-tree model predicting a constant; handy for tests and edge cases."""
    return BoostedModel(
        trees=[],
        learning_rate=1.0,
        base_score=value,
        task=task,
        hyperparams=Hyperparams(),
        seed=0,
        best_iteration=0,
        val_score=float("nan"),
        n_features=n_features,
    )


def make_stump(
    feature: int,
    threshold: float,
    left_value: float,
    right_value: float,
    n_features: int,
    learning_rate: float = 1.0,
    base_score: float = 0.0,
    cover: tuple[float, float] = (1.0, 1.0),
    task: str = "regression",
) -> BoostedModel:
    """Hand-built one-split model (x[feature] < threshold -> left_value)."""
    tree = Tree(
        feature=np.array([feature, -1, -1], np.int32),
        threshold=np.array([threshold, 0.0, 0.0]),
        left=np.array([1, -1, -1], np.int32),
        right=np.array([2, -1, -1], np.int32),
        value=np.array([0.0, left_value, right_value]),
        cover=np.array([cover[0] + cover[1], cover[0], cover[1]]),
        gain=np.array([1.0, 0.0, 0.0]),
    )
    return BoostedModel(
        trees=[tree],
        learning_rate=learning_rate,
        base_score=base_score,
        task=task,
        hyperparams=Hyperparams(),
        seed=0,
        best_iteration=1,
        val_score=float("nan"),
        n_features=n_features,
    )


# `replace` is re-exported for tweaking frozen Hyperparams in callers/tests.
hp_replace = replace
