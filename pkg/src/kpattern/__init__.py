"""Trainable depth-2 CNN/LCN/FCN models on local-pattern problems, with
exact population gradients, constructive solutions, closed-form bound
evaluators, hardness probes, and reproducible experiment harnesses."""

from .numerics import FourierSpectrum, Rng, finite_diff_grad, wht
from .problems import (
    Empirical,
    KPattern,
    Parity,
    Permutation,
    Uniform,
    population_expectation,
    random_kpattern,
    random_parity,
    random_permutation_fixing,
)
from .models import (
    ClippedRelu,
    CnnParams,
    FcnParams,
    Gaussian,
    LcnParams,
    Rademacher,
    Relu,
    Tanh,
    WindowScheme,
    cnn_forward,
    fcn_forward,
    forward,
    grad,
    hinge,
    hinge_subgradient,
    init_cnn_theorem,
    init_fcn_perm_invariant,
    init_lcn_theorem,
    lcn_forward,
    loss_and_grad,
)
from .training import TrainConfig, Trajectory, adadelta_step, eta_theorem, train, zero_one_accuracy
from .theory import (
    BoundReport,
    InsufficientCoverage,
    OgdTrace,
    construct_ustar,
    corollary_params,
    drift_bounds,
    loss_diff_bound,
    q_threshold,
    thm1_bound,
    thm2_bounds,
    verify_drift,
    verify_ogd_regret,
    verify_permutation_identity,
)
from .probes import grad_norm_at_init, gradient_fourier_spectrum, hardness_decay_sweep
from .estimators import ShallowNetClassifier

__version__ = "0.1.0"

__all__ = [
    "FourierSpectrum", "Rng", "finite_diff_grad", "wht",
    "Empirical", "KPattern", "Parity", "Permutation", "Uniform",
    "population_expectation", "random_kpattern", "random_parity",
    "random_permutation_fixing",
    "ClippedRelu", "CnnParams", "FcnParams", "Gaussian", "LcnParams",
    "Rademacher", "Relu", "Tanh", "WindowScheme", "cnn_forward",
    "fcn_forward", "forward", "grad", "hinge", "hinge_subgradient",
    "init_cnn_theorem", "init_fcn_perm_invariant", "init_lcn_theorem",
    "lcn_forward", "loss_and_grad",
    "TrainConfig", "Trajectory", "adadelta_step", "eta_theorem", "train",
    "zero_one_accuracy",
    "BoundReport", "InsufficientCoverage", "OgdTrace", "construct_ustar",
    "corollary_params", "drift_bounds", "loss_diff_bound", "q_threshold",
    "thm1_bound", "thm2_bounds", "verify_drift", "verify_ogd_regret",
    "verify_permutation_identity",
    "grad_norm_at_init", "gradient_fourier_spectrum", "hardness_decay_sweep",
    "ShallowNetClassifier",
]
