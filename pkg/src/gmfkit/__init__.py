"""gmfkit: penalized generalized matrix factorization for
exponential-dispersion-family data.

Fits g(mu) = X B' + Gamma Z' + U V' by block-wise adaptive SGD, diagonal
quasi-Newton, or AIRWLS, with missing-value imputation, identifiability
post-processing, and data-driven rank selection.
"""
__version__ = "0.1.0"

from .exceptions import (
    ConfigError,
    DegenerateError,
    DivergenceError,
    DomainError,
    GmfError,
    SingularSystemError,
)
from .families import (
    Bernoulli,
    FamilySpec,
    Gamma,
    Gaussian,
    Identity,
    Inverse,
    InverseGaussian,
    InverseSquared,
    LinkSpec,
    Log,
    Logit,
    NegBinomial,
    Poisson,
    canonical_link,
    ddot_d,
    dot_d,
    family,
    link,
)
from .gradients import GradientPair, Minibatch, full_gradients, minibatch_gradients
from .identify import check_constraints, project_constraints
from .initialization import InitMethod, init_glm_svd, init_ols_svd
from .metrics import EvalResult, rel_deviance, rel_log_rmse
from .model import (
    CovariateSet,
    FactorizationState,
    PenaltyConfig,
    ResponseMatrix,
    linear_predictor,
    parameter_count,
    penalized_objective,
)
from .optim import (
    FitReport,
    SgdConfig,
    bias_correction,
    fit_airwls,
    fit_asgd,
    fit_newton,
    impute_block,
    learning_rate,
    smooth_update,
    update_dispersion_stochastic,
    update_nb_shape_stochastic,
)
from .select import (
    RankSelectionReport,
    cv_rank_select,
    elbow_pick,
    holdout_mask,
    information_criteria,
    residual_scores,
    scree_eigenvalues,
)
from .simulate import SimConfig, SimTruth, generate

__all__ = [name for name in dir() if not name.startswith("_")]
