"""Exact interventional Shapley attributions for boosted trees.

For one explain row ``x`` and one background row ``r``, the attribution
game is ``v(S) = f(x_S, r_{S-bar})``: features in the coalition take their
values from ``x``, the rest from ``r``.  For a single tree, a leaf is
reached by the hybrid input exactly when every *hot* feature on its path
(satisfied by ``x`` but not ``r``) is in the coalition and every *cold*
feature (satisfied by ``r`` but not ``x``) is out; features satisfied by
both are neutral and features satisfied by neither kill the leaf.  Summing
the Shapley kernel over free features gives a closed form: a leaf with
``h`` hot and ``c`` cold features contributes

    +value * (h-1)! c! / (h+c)!   to each hot feature,
    -value * h! (c-1)! / (h+c)!   to each cold feature,

which this module evaluates per (tree, leaf, explain row, background
pattern).  Background rows with identical hot/cold patterns are bucketed
and counted, so the result is exactly invariant under permuting the
background, and exact per-tree additivity holds by construction.

Attributions are in raw-score space (pre-sigmoid margin for
classification) because tree additivity only holds there.  Every produced
:class:`ShapMatrix` is checked for local accuracy on construction:
``base_value + sum_j phi[i, j]`` must equal the raw prediction of row
``i`` to within 1e-8.

:func:`brute_force_shapley` is the independent oracle: full coalition
enumeration with factorial weights, practical for P <= 15.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .gbdt import BoostedModel, Tree, predict_raw
from .storage import float_to_hex, hex_to_float, read_matrix, write_matrix

LOCAL_ACCURACY_TOL = 1e-8


@dataclass
class ShapMatrix:
    """Per-observation, per-feature attributions for one model."""

    values: np.ndarray
    base_value: float
    model_id: str = "m0"
    background_ids: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.background_ids = np.asarray(self.background_ids, dtype=np.int64)
        if self.values.ndim != 2:
            raise ValueError("values must be a 2-D matrix")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]


def _leaf_paths(tree: Tree):
    """Flatten a tree into per-leaf path constraints.

    Returns CSR-style arrays ``(values, start, feats, lo, hi)`` where leaf
    ``l`` owns entries ``start[l]:start[l+1]``, each the intersected
    interval ``lo <= x[feat] < hi`` its path imposes.  Path features are
    listed in ascending feature order.
    """
    values, starts, feats, los, his = [], [0], [], [], []

    def descend(node, bounds):
        f = int(tree.feature[node])
        if f < 0:
            items = sorted(bounds.items())
            values.append(float(tree.value[node]))
            for feat, (lo, hi) in items:
                feats.append(feat)
                los.append(lo)
                his.append(hi)
            starts.append(len(feats))
            return
        thr = float(tree.threshold[node])
        lo, hi = bounds.get(f, (-np.inf, np.inf))
        if thr > lo:  # left child feasible
            bounds[f] = (lo, min(hi, thr))
            descend(int(tree.left[node]), bounds)
        if thr < hi:  # right child feasible
            bounds[f] = (max(lo, thr), hi)
            descend(int(tree.right[node]), bounds)
        if f in bounds:
            if lo == -np.inf and hi == np.inf:
                del bounds[f]
            else:
                bounds[f] = (lo, hi)

    descend(0, {})
    return (
        np.asarray(values, dtype=np.float64),
        np.asarray(starts, dtype=np.int64),
        np.asarray(feats, dtype=np.int64),
        np.asarray(los, dtype=np.float64),
        np.asarray(his, dtype=np.float64),
    )


def _weight_table(m_max: int) -> np.ndarray:
    """``U[a, b] = a! b! / (a + b + 1)!`` for hot/cold Shapley weights."""
    U = np.zeros((m_max + 1, m_max + 1), dtype=np.float64)
    for a in range(m_max + 1):
        for b in range(m_max + 1):
            U[a, b] = (
                math.factorial(a) * math.factorial(b) / math.factorial(a + b + 1)
            )
    return U


@njit(cache=True)
def _tree_shap_kernel(leaf_value, start, feats, lo, hi, X, R, U, phi):
    """Accumulate un-scaled hot/cold contributions for one tree into ``phi``.

    Returns ``sum_l value_l * #{background rows reaching leaf l}``, the
    tree's contribution to the base value (times B).
    """
    n_leaves = leaf_value.shape[0]
    n_x = X.shape[0]
    n_r = R.shape[0]
    xm = np.empty(n_x, np.int64)
    rm = np.empty(n_r, np.int64)
    pat = np.empty(n_r, np.int64)
    cnt = np.empty(n_r, np.int64)
    base_acc = 0.0

    for l in range(n_leaves):
        o = start[l]
        m = start[l + 1] - o
        val = leaf_value[l]
        if m == 0:
            base_acc += val * n_r
            continue
        full = (1 << m) - 1

        for i in range(n_x):
            mask = 0
            for t in range(m):
                v = X[i, feats[o + t]]
                if lo[o + t] <= v < hi[o + t]:
                    mask |= 1 << t
            xm[i] = mask
        n_full = 0
        for b in range(n_r):
            mask = 0
            for t in range(m):
                v = R[b, feats[o + t]]
                if lo[o + t] <= v < hi[o + t]:
                    mask |= 1 << t
            rm[b] = mask
            if mask == full:
                n_full += 1
        base_acc += val * n_full

        # Bucket background rows by pattern, in ascending pattern order, so
        # float accumulation order is independent of background ordering.
        rs = np.sort(rm)
        n_pat = 0
        k = 0
        while k < n_r:
            p = rs[k]
            c = 1
            k += 1
            while k < n_r and rs[k] == p:
                c += 1
                k += 1
            pat[n_pat] = p
            cnt[n_pat] = c
            n_pat += 1

        for i in range(n_x):
            xmi = xm[i]
            notx = (~xmi) & full
            for q in range(n_pat):
                p = pat[q]
                if notx & ((~p) & full):
                    continue  # some feature satisfied by neither side
                hot = xmi & ((~p) & full)
                cold = p & notx
                if hot == 0 and cold == 0:
                    continue  # neutral: cancels in all coalition differences
                n_hot = 0
                n_cold = 0
                for t in range(m):
                    bit = 1 << t
                    if hot & bit:
                        n_hot += 1
                    elif cold & bit:
                        n_cold += 1
                scale = val * cnt[q]
                if n_hot > 0:
                    w_hot = scale * U[n_hot - 1, n_cold]
                if n_cold > 0:
                    w_cold = scale * U[n_hot, n_cold - 1]
                for t in range(m):
                    bit = 1 << t
                    if hot & bit:
                        phi[i, feats[o + t]] += w_hot
                    elif cold & bit:
                        phi[i, feats[o + t]] -= w_cold
    return base_acc


def interventional_shap(
    model: BoostedModel,
    X_explain: np.ndarray,
    background: np.ndarray,
    model_id: str = "m0",
    background_ids: np.ndarray | None = None,
) -> ShapMatrix:
    """Exact interventional Shapley values of ``model`` on ``X_explain``.

    The game value for coalition S averages ``f(x_S, r_{S-bar})`` over all
    background rows ``r``; attributions are raw-score space.  Raises if
    the background is empty, on any dimension mismatch, or if the result
    violates local accuracy (which would indicate a bug, not bad data).
    """
    X_explain = np.ascontiguousarray(X_explain, dtype=np.float64)
    background = np.ascontiguousarray(background, dtype=np.float64)
    if background.ndim != 2 or background.shape[0] == 0:
        raise ValueError("background must be a non-empty matrix")
    if X_explain.ndim != 2 or X_explain.shape[1] != model.n_features:
        raise ValueError("X_explain column count does not match the model")
    if background.shape[1] != model.n_features:
        raise ValueError("background column count does not match the model")

    n_x = X_explain.shape[0]
    n_r = background.shape[0]
    phi = np.zeros((n_x, model.n_features), dtype=np.float64)
    base_acc = 0.0
    for tree in model.trees:
        values, start, feats, lo, hi = _leaf_paths(tree)
        m_max = int(np.max(start[1:] - start[:-1])) if len(values) else 0
        U = _weight_table(m_max)
        base_acc += _tree_shap_kernel(
            values, start, feats, lo, hi, X_explain, background, U, phi
        )
    phi *= model.learning_rate / n_r
    base = model.base_score + model.learning_rate * base_acc / n_r

    raw = predict_raw(model, X_explain)
    err = np.abs(base + phi.sum(axis=1) - raw)
    if err.size and float(err.max()) > LOCAL_ACCURACY_TOL:
        raise RuntimeError(
            f"local accuracy violated: max |base + sum(phi) - f(x)| = {err.max():.3e}"
        )
    return ShapMatrix(
        values=phi,
        base_value=base,
        model_id=model_id,
        background_ids=(
            np.arange(n_r, dtype=np.int64) if background_ids is None
            else np.asarray(background_ids, dtype=np.int64)
        ),
    )


def brute_force_shapley(
    model: BoostedModel, x: np.ndarray, background: np.ndarray
) -> np.ndarray:
    """Exact Shapley values by full coalition enumeration (oracle).

    Enumerates all 2^P coalitions with weights ``|S|! (P-|S|-1)! / P!``,
    averaging the game value over background rows.  Kept deliberately
    independent of the tree-recursion path so the two can check each
    other.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    background = np.asarray(background, dtype=np.float64)
    p = x.size
    if p > 15:
        raise ValueError(f"brute force limited to P <= 15, got {p}")
    if background.ndim != 2 or background.shape[1] != p:
        raise ValueError("background shape mismatch")
    n_r = background.shape[0]

    n_masks = 1 << p
    bits = np.zeros((n_masks, p), dtype=bool)
    for j in range(p):
        bits[:, j] = (np.arange(n_masks) >> j) & 1
    hybrids = np.where(bits[:, None, :], x[None, None, :], background[None, :, :])
    raw = predict_raw(model, hybrids.reshape(n_masks * n_r, p))
    v = raw.reshape(n_masks, n_r).mean(axis=1)

    fact = [math.factorial(k) for k in range(p + 1)]
    w = np.array(
        [fact[s] * fact[p - s - 1] / fact[p] for s in range(p)], dtype=np.float64
    )
    sizes = np.array([int(mask).bit_count() for mask in range(n_masks)])
    phi = np.zeros(p, dtype=np.float64)
    for j in range(p):
        bit = 1 << j
        without = np.nonzero((np.arange(n_masks) & bit) == 0)[0]
        phi[j] = float(np.sum(w[sizes[without]] * (v[without | bit] - v[without])))
    return phi


def consensus_average(matrices: list[ShapMatrix]) -> ShapMatrix:
    """Element-wise mean of attribution matrices (and of base values).

    Inputs are summed in ascending ``model_id`` order, so the result is
    exactly invariant under permuting the input list.
    """
    if not matrices:
        raise ValueError("need at least one matrix")
    shape = matrices[0].values.shape
    for sm in matrices[1:]:
        if sm.values.shape != shape:
            raise ValueError("all matrices must share the same shape")
    ordered = sorted(matrices, key=lambda sm: sm.model_id)
    stacked = np.stack([sm.values for sm in ordered])
    # mean computed about the first (canonical) matrix: exact when inputs
    # are identical, better conditioned in general, permutation-invariant
    values = stacked[0] + (stacked - stacked[0]).mean(axis=0)
    bases = np.array([sm.base_value for sm in ordered])
    base = float(bases[0] + (bases - bases[0]).mean())
    ids = [sm.background_ids for sm in ordered]
    same_background = all(np.array_equal(ids[0], other) for other in ids[1:])
    return ShapMatrix(
        values=values,
        base_value=base,
        model_id="consensus",
        background_ids=ids[0] if same_background else np.empty(0, np.int64),
    )


def global_importance(matrix: ShapMatrix) -> np.ndarray:
    """Mean absolute attribution per feature."""
    if matrix.n_rows < 1:
        raise ValueError("matrix must have at least one row")
    return np.abs(matrix.values).mean(axis=0)


def save_shap_matrix(matrix: ShapMatrix, basepath) -> None:
    write_matrix(
        basepath,
        matrix.values,
        extra={
            "kind": "shap-matrix",
            "model_id": matrix.model_id,
            "base_value": float_to_hex(matrix.base_value),
            "background_ids": matrix.background_ids.tolist(),
        },
    )


def load_shap_matrix(manifest_path) -> ShapMatrix:
    values, manifest = read_matrix(manifest_path)
    if manifest.get("kind") != "shap-matrix":
        raise ValueError(f"not a SHAP matrix container: {manifest_path}")
    return ShapMatrix(
        values=values,
        base_value=hex_to_float(manifest["base_value"]),
        model_id=manifest["model_id"],
        background_ids=np.asarray(manifest["background_ids"], dtype=np.int64),
    )
