"""Datasets, deterministic splits, and synthetic correlated-group generators.

The synthetic generator draws feature groups from a shared-factor model:
inside group ``g`` every feature is ``sqrt(rho) * u_g + sqrt(1-rho) * e_j``
with ``u_g`` and ``e_j`` i.i.d. standard normal.  Each feature is then
standard normal marginally, the population correlation of any two features
in the same group is exactly ``rho``, and features in different groups are
independent.

Targets come in two flavours.  The linear process is
``y = sum_g beta_g * zbar_g + eps`` where ``zbar_g`` is the within-group
feature mean and ``eps ~ N(0, noise_sd^2)``.  The nonlinear process keeps
the group means and replaces the first three terms with
``beta_1 * zbar_1^2 + beta_2 * zbar_1 * zbar_2 + beta_3 * sin(pi*zbar_3)``,
leaving the remaining groups linear.

All randomness is keyed by explicit 64-bit seeds through
:mod:`dashshap.seeding`, so identical inputs produce bit-identical output.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .seeding import child_seed, generator
from .storage import read_json, read_matrix, write_json, write_matrix

DEFAULT_BETAS = (2.0, 1.5, 1.0, 0.8, 0.6, 0.4, 0.3, 0.2, 0.1, 0.0)
DEFAULT_NOISE_SD = 0.5
DEFAULT_FRACTIONS = (0.56, 0.16, 0.08, 0.20)

TASK_REGRESSION = "regression"
TASK_BINARY = "binary-classification"


@dataclass(frozen=True)
class GroupStructure:
    """Partition of feature indices into disjoint correlated groups."""

    groups: tuple[tuple[int, ...], ...]
    within_rho: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.within_rho < 1.0:
            raise ValueError(
                f"within_rho must be in [0, 1), got {self.within_rho}"
            )
        flat = [j for g in self.groups for j in g]
        if sorted(flat) != list(range(len(flat))):
            raise ValueError("groups must disjointly cover 0..P-1")

    @property
    def n_features(self) -> int:
        return sum(len(g) for g in self.groups)

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @staticmethod
    def blocks(n_groups: int, group_size: int, within_rho: float = 0.0) -> "GroupStructure":
        """Contiguous equal-size groups, e.g. ``blocks(10, 5)`` for 50 features."""
        groups = tuple(
            tuple(range(g * group_size, (g + 1) * group_size))
            for g in range(n_groups)
        )
        return GroupStructure(groups=groups, within_rho=within_rho)


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    target: np.ndarray
    task: str = TASK_REGRESSION
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        tgt = np.asarray(self.target, dtype=np.float64)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "target", tgt)
        if feats.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if tgt.shape != (feats.shape[0],):
            raise ValueError("target length must match feature rows")
        if not np.isfinite(feats).all() or not np.isfinite(tgt).all():
            raise ValueError("features and target must be finite")
        if self.task not in (TASK_REGRESSION, TASK_BINARY):
            raise ValueError(f"unknown task {self.task!r}")
        if self.task == TASK_BINARY and not np.isin(tgt, (0.0, 1.0)).all():
            raise ValueError("binary-classification target must be 0/1")
        if not self.feature_names:
            object.__setattr__(
                self,
                "feature_names",
                tuple(f"x{j}" for j in range(feats.shape[1])),
            )
        elif len(self.feature_names) != feats.shape[1]:
            raise ValueError("feature_names length must match feature columns")

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class FourWaySplit:
    """Disjoint train/val/explain/test row indices covering a dataset."""

    train: np.ndarray
    val: np.ndarray
    explain: np.ndarray
    test: np.ndarray
    fractions: tuple[float, float, float, float] = DEFAULT_FRACTIONS

    def __post_init__(self):
        for name in ("train", "val", "explain", "test"):
            object.__setattr__(
                self, name, np.asarray(getattr(self, name), dtype=np.int64)
            )
        allidx = np.concatenate([self.train, self.val, self.explain, self.test])
        if len(np.unique(allidx)) != allidx.size:
            raise ValueError("split index lists must be disjoint")
        if not np.array_equal(np.sort(allidx), np.arange(allidx.size)):
            raise ValueError("split must cover 0..n-1 exactly")

    @property
    def n_rows(self) -> int:
        return self.train.size + self.val.size + self.explain.size + self.test.size


@dataclass(frozen=True)
class DgpSpec:
    """Specification for one synthetic data-generating process draw."""

    kind: str = "linear"
    betas: tuple[float, ...] = DEFAULT_BETAS
    noise_sd: float = DEFAULT_NOISE_SD
    n: int = 5000
    groups: GroupStructure = field(
        default_factory=lambda: GroupStructure.blocks(10, 5, 0.0)
    )
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("linear", "nonlinear"):
            raise ValueError(f"kind must be linear or nonlinear, got {self.kind!r}")
        if self.noise_sd <= 0:
            raise ValueError("noise_sd must be positive")
        if len(self.betas) != self.groups.n_groups:
            raise ValueError(
                f"betas has {len(self.betas)} entries for {self.groups.n_groups} groups"
            )
        if self.kind == "nonlinear" and self.groups.n_groups < 3:
            raise ValueError("nonlinear process needs at least 3 groups")


def gen_correlated_features(groups: GroupStructure, n: int, seed: int) -> np.ndarray:
    """Draw an ``n x P`` feature matrix from the shared-factor model.

    Deterministic for a given seed.  Rejects ``within_rho >= 1`` (the
    equicorrelated covariance would be degenerate); that is already
    enforced by :class:`GroupStructure`.
    """
    if n < 2:
        raise ValueError("need at least 2 rows")
    rho = groups.within_rho
    rng = generator(seed)
    shared = rng.standard_normal((n, groups.n_groups))
    noise = rng.standard_normal((n, groups.n_features))
    X = np.empty((n, groups.n_features), dtype=np.float64)
    a, b = math.sqrt(rho), math.sqrt(1.0 - rho)
    for g, members in enumerate(groups.groups):
        for j in members:
            X[:, j] = a * shared[:, g] + b * noise[:, j]
    return X


def group_means(features: np.ndarray, groups: GroupStructure) -> np.ndarray:
    """Within-group feature means, one column per group."""
    out = np.empty((features.shape[0], groups.n_groups), dtype=np.float64)
    for g, members in enumerate(groups.groups):
        out[:, g] = features[:, members].mean(axis=1)
    return out


def gen_target(features: np.ndarray, spec: DgpSpec) -> np.ndarray:
    """Generate the target for ``features`` under ``spec``.

    Noise is drawn from ``child_seed(spec.seed, 1)`` so it is independent
    of the feature draw (which :func:`make_dataset` keys at child 0).
    """
    if features.shape[1] != spec.groups.n_features:
        raise ValueError("feature count does not match group structure")
    zbar = group_means(features, spec.groups)
    betas = np.asarray(spec.betas, dtype=np.float64)
    if spec.kind == "linear":
        signal = zbar @ betas
    else:
        signal = (
            betas[0] * zbar[:, 0] ** 2
            + betas[1] * zbar[:, 0] * zbar[:, 1]
            + betas[2] * np.sin(np.pi * zbar[:, 2])
        )
        if spec.groups.n_groups > 3:
            signal = signal + zbar[:, 3:] @ betas[3:]
    eps = spec.noise_sd * generator(child_seed(spec.seed, 1)).standard_normal(
        features.shape[0]
    )
    return signal + eps


def make_dataset(spec: DgpSpec) -> Dataset:
    """Features from ``child_seed(spec.seed, 0)``, target noise from child 1."""
    X = gen_correlated_features(spec.groups, spec.n, child_seed(spec.seed, 0))
    y = gen_target(X, spec)
    return Dataset(features=X, target=y, task=TASK_REGRESSION)


def split_four_way(
    n: int,
    fractions: tuple[float, float, float, float] = DEFAULT_FRACTIONS,
    seed: int = 0,
) -> FourWaySplit:
    """Uniformly random four-way partition with floor rounding.

    The first three split sizes are ``floor(f_k * n)``; the remainder goes
    to the test split.
    """
    if n < 4:
        raise ValueError("need at least 4 rows to populate all four splits")
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 4 or any(f <= 0 for f in fractions):
        raise ValueError("fractions must be four positive reals")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)}")
    perm = generator(seed).permutation(n)
    n_train = int(math.floor(fractions[0] * n))
    n_val = int(math.floor(fractions[1] * n))
    n_explain = int(math.floor(fractions[2] * n))
    c1, c2, c3 = n_train, n_train + n_val, n_train + n_val + n_explain
    return FourWaySplit(
        train=perm[:c1],
        val=perm[c1:c2],
        explain=perm[c2:c3],
        test=perm[c3:],
        fractions=fractions,
    )


def ground_truth_importance(spec: DgpSpec) -> np.ndarray:
    """Equitable per-feature importance for the linear process.

    Every feature in group ``g`` receives ``|beta_g| / len(group_g)``.  The
    nonlinear process has no agreed uniform decomposition, so it is
    refused rather than guessed at.
    """
    if spec.kind != "linear":
        raise ValueError("ground-truth importance is defined for the linear process only")
    truth = np.empty(spec.groups.n_features, dtype=np.float64)
    for g, members in enumerate(spec.groups.groups):
        truth[list(members)] = abs(spec.betas[g]) / len(members)
    return truth


def load_csv(path, target_column: str, task: str = TASK_REGRESSION) -> Dataset:
    """Load a numeric, headered CSV into a :class:`Dataset`.

    Missing or non-numeric cells are rejected, not imputed: the benchmark
    depends on every method seeing exactly the same finite matrix.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path} is empty") from None
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path} has a header but no data rows")
    if target_column not in header:
        raise ValueError(f"target column {target_column!r} not found in {header}")
    t_idx = header.index(target_column)
    values = np.empty((len(rows), len(header)), dtype=np.float64)
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise ValueError(f"row {i + 2} has {len(row)} cells, expected {len(header)}")
        for j, cell in enumerate(row):
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise ValueError(
                    f"non-numeric cell {cell!r} at row {i + 2}, column {header[j]!r}"
                ) from None
    feat_cols = [j for j in range(len(header)) if j != t_idx]
    return Dataset(
        features=values[:, feat_cols],
        target=values[:, t_idx],
        task=task,
        feature_names=tuple(header[j] for j in feat_cols),
    )


def save_dataset(dataset: Dataset, split: FourWaySplit | None, basepath) -> Path:
    """Write a dataset (and optional split) as a manifest + binary matrices."""
    basepath = Path(basepath)
    write_matrix(basepath.with_name(basepath.name + "_features"), dataset.features)
    write_matrix(basepath.with_name(basepath.name + "_target"), dataset.target)
    manifest = {
        "format": "dashshap-dataset",
        "version": 1,
        "task": dataset.task,
        "feature_names": list(dataset.feature_names),
        "features_manifest": basepath.name + "_features.json",
        "target_manifest": basepath.name + "_target.json",
    }
    if split is not None:
        manifest["split"] = {
            "fractions": list(split.fractions),
            "train": split.train.tolist(),
            "val": split.val.tolist(),
            "explain": split.explain.tolist(),
            "test": split.test.tolist(),
        }
    manifest_path = basepath.with_suffix(".json")
    write_json(manifest_path, manifest)
    return manifest_path


def load_dataset(manifest_path) -> tuple[Dataset, FourWaySplit | None]:
    manifest_path = Path(manifest_path)
    manifest = read_json(manifest_path)
    if manifest.get("format") != "dashshap-dataset":
        raise ValueError(f"not a dataset manifest: {manifest_path}")
    feats, _ = read_matrix(manifest_path.parent / manifest["features_manifest"])
    target, _ = read_matrix(manifest_path.parent / manifest["target_manifest"])
    dataset = Dataset(
        features=feats,
        target=target[:, 0],
        task=manifest["task"],
        feature_names=tuple(manifest["feature_names"]),
    )
    split = None
    if "split" in manifest:
        s = manifest["split"]
        split = FourWaySplit(
            train=np.array(s["train"]),
            val=np.array(s["val"]),
            explain=np.array(s["explain"]),
            test=np.array(s["test"]),
            fractions=tuple(s["fractions"]),
        )
    return dataset, split
