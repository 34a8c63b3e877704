"""Likelihood bounds from the geometric mixture path between a proposal and
an unnormalized target, with exact gap identities, adaptive schedules, SNIS
reweighting, and validated gradient estimators."""

from .bounds import (
    BoundReport,
    asymptotic_rate_check,
    bound_report,
    conjugate_psi_star,
    dual_divergence_check,
    gap_decomposition_lower,
    gap_decomposition_upper,
    kl_between_path_points,
    kl_variance_integral,
    renyi_objective,
    second_order_tvo,
    snis_bound_report,
    symm_kl_rectangle,
    tvo_lower,
    tvo_upper,
)
from .gradients import (
    GradEstimate,
    ParamVector,
    covariance_coefficient,
    doubly_reparam_grad,
    finite_diff_grad,
    gauss_hermite_eps,
    generic_reparam_grad,
    lemma_checks,
    reinforce_grad,
    tvo_lower_gradient,
)
from .harness import ExperimentConfig, TrainLog, emit_integrand, run_schedule_study, run_verify, train
from .models import (
    DiscreteLatentModel,
    GaussianPath,
    LinearGaussianModel,
    MomentCurve,
    exact_eta,
    exact_psi,
    exact_var,
    gaussian_path_moments,
    load_model,
    load_model_file,
    ti_identity_check,
)
from .schedules import (
    EtaEvaluator,
    Schedule,
    coarse_grained_schedule,
    linear_schedule,
    log_uniform_schedule,
    moments_schedule,
)
from .snis import LogWeightGrid, SnisWeights, iwae_bound, snis_eta, snis_normalize, snis_var

__version__ = "0.1.0"
