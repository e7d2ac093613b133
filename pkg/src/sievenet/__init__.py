"""Transformation-model estimation for interval-censored case-cohort data:
a monotone Bernstein sieve for the baseline hazard combined with a ReLU
network for the covariate effect, trained by weighted maximum likelihood."""

from .errors import CalibrationError, ConfigError, NumericalError, TrainingDivergenceError
from .gradients import ParameterVector, finite_diff_grad, flatten, loss_and_grad, unflatten
from .likelihood import ObservedRecord, ipw_weight, loglik_one, loglik_weighted, survival
from .metrics import EvalGrid, ibs, mspe, relative_error
from .model import (
    BernsteinHazard,
    CovariateNetwork,
    TransformationSpec,
    bernstein_basis,
    hazard_eval,
    network_forward,
    transform_G,
)
from .sampling import CaseCohortSample, draw_case_cohort, draw_srs, subcohort_only
from .shapley import AttributionResult, shap_base, shap_dependence, shap_exact, shap_sampled, shap_summary
from .simulate import (
    SimConfig,
    TrueModel,
    calibrate_tau,
    censor,
    draw_failure_time,
    g_true,
    gen_cohort,
    gen_covariates,
    gen_visits,
)
from .train import FitResult, Hyperparameters, center_fit, fit, fit_ltm, grid_search_cv

__version__ = "0.1.0"

__all__ = [
    "AttributionResult",
    "BernsteinHazard",
    "CalibrationError",
    "CaseCohortSample",
    "ConfigError",
    "CovariateNetwork",
    "EvalGrid",
    "FitResult",
    "Hyperparameters",
    "NumericalError",
    "ObservedRecord",
    "ParameterVector",
    "SimConfig",
    "TrainingDivergenceError",
    "TransformationSpec",
    "TrueModel",
    "bernstein_basis",
    "calibrate_tau",
    "censor",
    "center_fit",
    "draw_case_cohort",
    "draw_failure_time",
    "draw_srs",
    "finite_diff_grad",
    "fit",
    "fit_ltm",
    "flatten",
    "g_true",
    "gen_cohort",
    "gen_covariates",
    "gen_visits",
    "grid_search_cv",
    "hazard_eval",
    "ibs",
    "ipw_weight",
    "loglik_one",
    "loglik_weighted",
    "loss_and_grad",
    "mspe",
    "network_forward",
    "relative_error",
    "shap_base",
    "shap_dependence",
    "shap_exact",
    "shap_sampled",
    "shap_summary",
    "subcohort_only",
    "survival",
    "transform_G",
    "unflatten",
]
