"""Gaussian models for SPD matrices under the affine-invariant metric.

Geometry of the affine-invariant metric, the normalising factor and its
tabulation, exact sampling, maximum-likelihood estimation, EM for mixtures,
and mixture-based classification.
"""

from .classifier import (
    ClusterModel,
    EvalReport,
    WishartClusterModel,
    classify_gaussian,
    classify_nn,
    classify_wishart,
    evaluate,
    train,
)
from .errors import *  # noqa: F401,F403
from .estimator import (
    GaussianParams,
    LrtResult,
    MeanSolverOptions,
    asymptotic_covariance,
    empirical_dispersion,
    fit_gaussian,
    frechet_mean,
    log_density,
    lrt_test,
)
from .manifold import (
    SpdMatrix,
    TangentVector,
    congruence,
    exp_map,
    geodesic,
    log_map,
    metric_inner,
    polar_compose,
    polar_decompose,
    rao_distance,
    tangent_basis,
    validate_spd,
)
from .mixture import EmOptions, EmResult, MixtureModel, Responsibilities, e_step, em_fit, init_model, m_step, mixture_log_likelihood
from .normalization import ZetaTable, build_table, load_table, phi, save_table, zeta_analytic_m2, zeta_mc
from .sampler import SamplerConfig, sample_gaussian, sample_gaussian_array, sample_haar_orthogonal

__version__ = "0.1.0"
