"""Stability diagnostics: Feature Stability Index, quadrant map, disagreement.

The FSI of a feature is the mean (over observations) of the cross-model
standard deviation of its attributions, divided by its consensus
importance (plus a 1e-8 smoothing floor).  A high FSI says the models
agree the feature matters but disagree on where its credit goes, the
signature of collinear groups.

The importance/FSI plane is split into four quadrants at the medians:

    I   robust driver        high importance, low FSI
    II  collinear cluster    high importance, high FSI
    III confirmed unimportant low importance,  low FSI
    IV  fragile              low importance,  high FSI

Ties at a median go to the low side ("at or below"), so an all-equal
vector lands everything in quadrant III.  Cross-model SD is the population
SD (divide by K): the index describes the ensemble at hand, and a single
model must give exactly zero, not NaN.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .treeshap import ShapMatrix

FSI_EPSILON = 1e-8


class Quadrant(enum.Enum):
    ROBUST = "I-robust"
    COLLINEAR = "II-collinear"
    UNIMPORTANT = "III-unimportant"
    FRAGILE = "IV-fragile"


@dataclass(frozen=True)
class FsiReport:
    fsi: np.ndarray
    sigma_bar: np.ndarray
    importance: np.ndarray
    epsilon0: float = FSI_EPSILON


@dataclass(frozen=True)
class QuadrantAssignment:
    quadrants: tuple[Quadrant, ...]
    importance_threshold: float
    fsi_threshold: float


def _stacked_values(per_model: list[ShapMatrix]) -> np.ndarray:
    if not per_model:
        raise ValueError("need at least one attribution matrix")
    shape = per_model[0].values.shape
    for sm in per_model[1:]:
        if sm.values.shape != shape:
            raise ValueError("attribution matrices must share one shape")
    # canonical model order makes the result exactly permutation-invariant
    ordered = sorted(per_model, key=lambda sm: sm.model_id)
    return np.stack([sm.values for sm in ordered])


def compute_fsi(per_model: list[ShapMatrix], consensus_importance) -> FsiReport:
    """Cross-model dispersion of attributions relative to importance."""
    stacked = _stacked_values(per_model)
    consensus_importance = np.asarray(consensus_importance, dtype=np.float64)
    if consensus_importance.shape != (stacked.shape[2],):
        raise ValueError("consensus importance length does not match matrices")
    # std about the first (canonical) matrix: exactly zero for identical
    # inputs, better conditioned in general, permutation-invariant
    sigma = (stacked - stacked[0]).std(axis=0)  # population SD across models
    sigma_bar = sigma.mean(axis=0)
    fsi = sigma_bar / (consensus_importance + FSI_EPSILON)
    return FsiReport(fsi=fsi, sigma_bar=sigma_bar, importance=consensus_importance)


def assign_quadrants(importance, fsi) -> QuadrantAssignment:
    """Median-threshold quadrant labels; ties at a median go low."""
    importance = np.asarray(importance, dtype=np.float64)
    fsi = np.asarray(fsi, dtype=np.float64)
    if importance.shape != fsi.shape or importance.ndim != 1 or importance.size < 2:
        raise ValueError("need two equal-length vectors with at least 2 entries")
    med_imp = float(np.median(importance))
    med_fsi = float(np.median(fsi))
    labels = []
    for imp, f in zip(importance, fsi):
        if imp > med_imp:
            labels.append(Quadrant.COLLINEAR if f > med_fsi else Quadrant.ROBUST)
        else:
            labels.append(Quadrant.FRAGILE if f > med_fsi else Quadrant.UNIMPORTANT)
    return QuadrantAssignment(
        quadrants=tuple(labels),
        importance_threshold=med_imp,
        fsi_threshold=med_fsi,
    )


def local_disagreement(per_model: list[ShapMatrix], row: int):
    """Cross-model mean and population SD of attributions at one observation."""
    stacked = _stacked_values(per_model)
    if not 0 <= row < stacked.shape[1]:
        raise IndexError(f"row {row} out of range for {stacked.shape[1]} observations")
    at_row = stacked[:, row, :]
    center = at_row[0]
    return center + (at_row - center).mean(axis=0), (at_row - center).std(axis=0)


def highest_variance_row(per_model: list[ShapMatrix]) -> int:
    """Row with the largest total cross-model SD (ties: lowest row index)."""
    stacked = _stacked_values(per_model)
    per_row = stacked.std(axis=0).sum(axis=1)
    return int(np.argmax(per_row))


def write_is_plot_csv(path, importance, fsi, assignment: QuadrantAssignment,
                      feature_names=None) -> None:
    _write_rows(
        path,
        ["feature", "importance", "fsi", "quadrant"],
        [
            (name, repr(float(imp)), repr(float(f)), q.value)
            for name, imp, f, q in zip(
                _names(feature_names, len(importance)),
                importance, fsi, assignment.quadrants,
            )
        ],
    )


def write_fsi_csv(path, report: FsiReport, feature_names=None) -> None:
    _write_rows(
        path,
        ["feature", "sigma_bar", "importance", "fsi"],
        [
            (name, repr(float(s)), repr(float(imp)), repr(float(f)))
            for name, s, imp, f in zip(
                _names(feature_names, len(report.fsi)),
                report.sigma_bar, report.importance, report.fsi,
            )
        ],
    )


def write_disagreement_csv(path, means, sds, row_index: int, feature_names=None) -> None:
    _write_rows(
        path,
        ["feature", "mean", "sd", "row_index"],
        [
            (name, repr(float(m)), repr(float(s)), str(row_index))
            for name, m, s in zip(_names(feature_names, len(means)), means, sds)
        ],
    )


def _names(feature_names, p):
    if feature_names is None:
        return [f"x{j}" for j in range(p)]
    return list(feature_names)


def _write_rows(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
