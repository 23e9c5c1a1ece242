"""Stable SHAP-based feature importance under multicollinearity.

Gradient boosting resolves ties between correlated features arbitrarily,
and sequential residual fitting then amplifies whichever feature moved
first.  This package trains a diversified population of boosted models,
filters it for quality, selects a feature-utilization-diverse subset, and
averages exact interventional TreeSHAP attributions across it, so those
arbitrary first-mover choices cancel instead of compounding.  It ships
its own tree trainer and exact attribution kernel (with a brute-force
coalition oracle), stability diagnostics (FSI, importance-stability
quadrants, local disagreement), nine reference methods, the synthetic
correlated-group generators, and a reproducible benchmark harness with a
CLI (``dash-bench``).
"""

from .baselines import MethodResult, MethodSpec, run_method
from .data import (
    Dataset,
    DgpSpec,
    FourWaySplit,
    GroupStructure,
    gen_correlated_features,
    gen_target,
    ground_truth_importance,
    load_csv,
    make_dataset,
    split_four_way,
)
from .diagnostics import (
    FsiReport,
    Quadrant,
    QuadrantAssignment,
    assign_quadrants,
    compute_fsi,
    local_disagreement,
)
from .gbdt import (
    BoostedModel,
    Hyperparams,
    gain_importance,
    load_model,
    predict,
    predict_raw,
    sample_hyperparams,
    save_model,
    score,
    train,
)
from .metrics import accuracy, equity_cv, rmse, spearman, stability, variance_decomposition
from .pipeline import (
    DashResult,
    PipelineConfig,
    Population,
    dedup_select,
    filter_performance,
    fit_from_attributions,
    generate_population,
    maxmin_select,
    run_dash,
)
from .stats import TestResult, bca_bootstrap, cohens_d, holm_bonferroni, wilcoxon_signed_rank
from .treeshap import (
    ShapMatrix,
    brute_force_shapley,
    consensus_average,
    global_importance,
    interventional_shap,
)

__version__ = "0.1.0"
