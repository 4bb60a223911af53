"""Sparse signomial models: classification, symbolic regression, exact explanations.

Models are sums of power-law terms alpha_k * prod_j x_j^beta_kj over strictly
positive features. Training uses proximal L1 for sparse exponents; every
explanation (elasticities, counterfactual scalings, log-space attributions) is
closed-form on the fitted equation itself.
"""

from .classifier import (
    ClassifyConfig,
    EcselModel,
    FitTrace,
    Metrics,
    best_f1_threshold,
    class_weights,
    compute_metrics,
    fit,
    loss_and_grad,
    predict,
    predict_batch,
    predict_proba,
    predict_proba_batch,
    select_threshold,
)
from .data_io import (
    Dataset,
    Scaler,
    SplitSpec,
    load_csv,
    load_model,
    save_model,
    split,
)
from .errors import SignolearnError
from .explain import (
    AttributionReport,
    ElasticityVector,
    MarginSensitivity,
    attribute_exact_log,
    attribute_gradient,
    build_report,
    compare_scenarios,
    counterfactual_scale,
    default_baseline,
    elasticity,
    margin_sensitivity,
    probability_sensitivity,
    sensitivity_first_order,
)
from .regressor import (
    FitScore,
    RecoveryResult,
    SrConfig,
    TargetSpec,
    evaluate_recovery,
    fit_sr,
    generate_benchmark_data,
    score_fit,
    sr_loss_and_grad,
)
from .signomial import (
    CanonicalForm,
    ScoreBreakdown,
    Signomial,
    Term,
    canonicalize,
    equivalent,
    evaluate,
    evaluate_batch,
    gradient,
    render,
)

__version__ = "0.1.0"

__all__ = [
    "AttributionReport",
    "CanonicalForm",
    "ClassifyConfig",
    "Dataset",
    "EcselModel",
    "ElasticityVector",
    "FitScore",
    "FitTrace",
    "MarginSensitivity",
    "Metrics",
    "RecoveryResult",
    "Scaler",
    "ScoreBreakdown",
    "Signomial",
    "SignolearnError",
    "SplitSpec",
    "SrConfig",
    "TargetSpec",
    "Term",
    "attribute_exact_log",
    "attribute_gradient",
    "best_f1_threshold",
    "build_report",
    "canonicalize",
    "class_weights",
    "compare_scenarios",
    "compute_metrics",
    "counterfactual_scale",
    "default_baseline",
    "elasticity",
    "equivalent",
    "evaluate",
    "evaluate_batch",
    "evaluate_recovery",
    "fit",
    "fit_sr",
    "generate_benchmark_data",
    "gradient",
    "load_csv",
    "load_model",
    "loss_and_grad",
    "margin_sensitivity",
    "predict",
    "predict_batch",
    "predict_proba",
    "predict_proba_batch",
    "probability_sensitivity",
    "render",
    "save_model",
    "score_fit",
    "select_threshold",
    "sensitivity_first_order",
    "split",
    "sr_loss_and_grad",
]
