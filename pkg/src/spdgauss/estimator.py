"""Maximum-likelihood estimation for a single Riemannian Gaussian."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from .errors import (
    DimensionMismatch,
    EmptyInput,
    InvalidSigma,
    MaxItersExceeded,
    OutOfTableRange,
)
from .manifold import (
    SpdMatrix,
    as_stack,
    exp_whitened,
    log_whitened_batch,
    sq_dist_batch,
    sym,
    validate_spd,
    whiten,
    whitened_components,
)
from .normalization import phi
from .sampler import sample_gaussian_array

logger = logging.getLogger(__name__)

__all__ = [
    "GaussianParams",
    "MeanSolverOptions",
    "MeanResult",
    "LrtResult",
    "frechet_mean",
    "solve_frechet_mean",
    "least_dispersion_point",
    "empirical_dispersion",
    "fit_gaussian",
    "log_density",
    "lrt_test",
    "asymptotic_covariance",
    "tangent_components",
]

_MAX_INIT_CANDIDATES = 128
_MAX_BACKTRACKS = 60
# squared distances between numerically identical matrices are ~1e-30
_DEGENERATE_DISPERSION = 1e-24


@dataclass(frozen=True)
class GaussianParams:
    """Centre and dispersion of ``G(mean, sigma)``."""

    mean: SpdMatrix
    sigma: float

    def __post_init__(self):
        object.__setattr__(self, "mean", validate_spd(self.mean))
        sigma = float(self.sigma)
        if not (math.isfinite(sigma) and sigma > 0):
            raise InvalidSigma(f"sigma must be positive, got {self.sigma!r}")
        object.__setattr__(self, "sigma", sigma)

    @property
    def dim(self):
        return self.mean.dim


@dataclass(frozen=True)
class MeanSolverOptions:
    """Riemannian gradient descent with Armijo backtracking.

    Iterates while the weighted mean logarithm has metric norm above
    ``epsilon``. The step starts at ``step0`` and is multiplied by ``shrink``
    until the objective drops by at least ``slope * step * |grad|``-worth.
    """

    epsilon: float = 1e-8
    max_iters: int = 200
    step0: float = 1.0
    shrink: float = 0.5
    slope: float = 1e-4

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")
        if not 0 < self.slope < 0.5:
            raise ValueError("slope must lie in (0, 1/2)")
        if not self.step0 > 0:
            raise ValueError("step0 must be > 0")


@dataclass(frozen=True)
class MeanResult:
    mean: np.ndarray
    iterations: int
    grad_norm: float
    converged: bool
    objective: list = field(default_factory=list)


@dataclass(frozen=True)
class LrtResult:
    """Likelihood-ratio test of ``H0: mean = y0`` with unknown sigma.

    ``p_value`` uses the chi-squared law with ``dof`` degrees of freedom for
    ``2 * statistic``.
    """

    statistic: float
    dispersion_at_mle: float
    dispersion_at_null: float
    dof: int
    p_value: float
    sigma_mle: float
    sigma_null: float
    mle: SpdMatrix = None
    known_sigma_statistic: float = None


def _check_weights(weights, n):
    if weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.size != n:
        raise ValueError(f"expected {n} weights, got {w.size}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"weights must sum to 1 (sum is {w.sum():.12g})")
    return w


def _stack(points):
    if isinstance(points, np.ndarray):
        arr = as_stack(points)
    else:
        if len(points) == 0:
            raise EmptyInput("no points given")
        arr = as_stack(points)
    if arr.shape[0] == 0:
        raise EmptyInput("no points given")
    return arr


def least_dispersion_point(x, weights=None, max_candidates=_MAX_INIT_CANDIDATES):
    """Index of the data point with the smallest weighted dispersion to the data.

    For large inputs only an evenly spaced subset of ``max_candidates``
    points is considered as candidate centre.
    """
    n = x.shape[0]
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    cand = np.flatnonzero(w > 0)
    if cand.size > max_candidates:
        cand = cand[np.linspace(0, cand.size - 1, max_candidates).astype(int)]
    scores = [float(np.dot(w, sq_dist_batch(x[i], x))) for i in cand]
    return int(cand[int(np.argmin(scores))])


def _objective_and_logs(y, x, w):
    wv, v = np.linalg.eigh(whiten(y, x))
    lw = np.log(wv)
    f = float(np.dot(w, np.sum(lw * lw, axis=1)))
    logs = (v * lw[:, None, :]) @ np.swapaxes(v, -1, -2)
    return f, logs


def solve_frechet_mean(x, weights=None, opts=None, init=None):
    """Weighted Riemannian centre of mass of the stack ``x`` (array level).

    Minimises ``E(Y) = sum_n w_n d^2(Y, X_n)``. Each iteration forms
    ``Delta = sum_n w_n Log_Y(X_n)`` (minus half the Riemannian gradient) and
    moves to ``Exp_Y(tau Delta)`` with Armijo backtracking on ``tau``.
    Never raises on the iteration cap; check ``converged``.
    """
    opts = opts or MeanSolverOptions()
    n = x.shape[0]
    w = _check_weights(weights, n)
    if init is None:
        y = x[least_dispersion_point(x, w)].copy()
    else:
        y = sym(np.array(init, dtype=float))
        if y.shape != x.shape[1:]:
            raise DimensionMismatch("initial point has the wrong dimension")

    f, logs = _objective_and_logs(y, x, w)
    trace = [f]
    it = 0
    while True:
        delta = np.tensordot(w, logs, axes=1)  # whitened frame: |Delta|_Y = |delta|_F
        gnorm = float(np.linalg.norm(delta))
        if gnorm <= opts.epsilon:
            return MeanResult(y, it, gnorm, True, trace)
        if it >= opts.max_iters:
            return MeanResult(y, it, gnorm, False, trace)
        it += 1
        tau = opts.step0
        decrease = 2.0 * gnorm * gnorm
        resolution = 1e-14 * max(abs(f), 1.0)
        for _ in range(_MAX_BACKTRACKS):
            y_new = exp_whitened(y, tau * delta)
            f_new, logs_new = _objective_and_logs(y_new, x, w)
            if f_new <= f - opts.slope * tau * decrease:
                break
            # predicted decrease below floating-point resolution of f
            if opts.slope * tau * decrease < resolution and f_new <= f + resolution:
                break
            tau *= opts.shrink
        else:
            logger.debug("Armijo backtracking stalled at |Delta|=%.3g", gnorm)
            return MeanResult(y, it, gnorm, gnorm <= 10 * opts.epsilon, trace)
        y, f, logs = y_new, f_new, logs_new
        trace.append(f)


def frechet_mean(points, weights=None, opts=None, init=None):
    """Weighted Riemannian centre of mass (Frechet / Karcher mean).

    Parameters
    ----------
    points : sequence of SpdMatrix or ndarray, shape (N, m, m)
    weights : array_like, optional
        Nonnegative weights summing to one; uniform by default.
    opts : MeanSolverOptions, optional
    init : array_like, optional
        Starting point; defaults to the data point of least dispersion.

    Returns
    -------
    SpdMatrix

    Raises
    ------
    EmptyInput
    MaxItersExceeded
        The best iterate is available as ``exc.result``.
    """
    x = _stack(points)
    res = solve_frechet_mean(x, weights, opts, init)
    if not res.converged:
        raise MaxItersExceeded(
            f"Frechet mean did not converge in {res.iterations} iterations "
            f"(|Delta| = {res.grad_norm:.3g})",
            result=res,
        )
    return SpdMatrix._trusted(res.mean)


def empirical_dispersion(points, weights, y):
    """``sum_n w_n d^2(y, Y_n)``; ``weights=None`` means uniform."""
    x = _stack(points)
    w = _check_weights(weights, x.shape[0])
    y = validate_spd(y)
    if y.dim != x.shape[-1]:
        raise DimensionMismatch("point and data dimensions differ")
    return float(np.dot(w, sq_dist_batch(y.values, x)))


def _check_table(table, m):
    if table.dim != m:
        raise DimensionMismatch(f"zeta table is for m={table.dim}, data has m={m}")


def fit_gaussian(points, table, opts=None, init=None):
    """Maximum-likelihood ``G(mean, sigma)`` for the given samples.

    The mean is the empirical Riemannian centre of mass and ``sigma`` solves
    ``sigma^3 d log zeta / d sigma = E_N(mean)``.

    Raises
    ------
    OutOfTableRange
        The dispersion is zero (all points coincide) or outside the table.
    """
    x = _stack(points)
    _check_table(table, x.shape[-1])
    res = solve_frechet_mean(x, None, opts, init)
    if not res.converged:
        raise MaxItersExceeded(
            f"Frechet mean did not converge in {res.iterations} iterations", result=res
        )
    w = _check_weights(None, x.shape[0])
    disp = float(np.dot(w, sq_dist_batch(res.mean, x)))
    if disp < _DEGENERATE_DISPERSION:
        raise OutOfTableRange(
            f"dispersion {disp:.3g} is degenerate (all points coincide); sigma would be 0"
        )
    return GaussianParams(SpdMatrix._trusted(res.mean), phi(table, disp))


def log_density(y, params, table):
    """``log p(y | mean, sigma) = -log zeta(sigma) - d^2(y, mean) / (2 sigma^2)``.

    Only ``sigma`` is looked up in the table; the normaliser never depends on
    the centre.
    """
    y = validate_spd(y)
    _check_table(table, y.dim)
    if params.dim != y.dim:
        raise DimensionMismatch("point and parameter dimensions differ")
    d2 = float(sq_dist_batch(params.mean.values, y.values[None])[0])
    return -table.log_zeta_at(params.sigma) - d2 / (2.0 * params.sigma**2)


def lrt_test(points, y0, table, opts=None, sigma=None):
    """Log-likelihood ratio test of ``mean = y0`` against ``mean != y0``.

    With ``sigma_hat = Phi(S_1 / N)`` and ``sigma_0 = Phi(S_0 / N)``, where
    ``S_1`` and ``S_0`` are the sums of squared distances to the MLE and to
    ``y0``::

        T = N (log zeta(sigma_0) - log zeta(sigma_hat))
            + S_0 / (2 sigma_0^2) - S_1 / (2 sigma_hat^2)

    ``2T`` is referred to a chi-squared law with ``m(m+1)/2`` degrees of
    freedom. When ``sigma`` is given, the known-dispersion statistic
    ``(S_0 - S_1) / (2 sigma^2)`` is reported as well.
    """
    x = _stack(points)
    if x.shape[0] < 2:
        raise EmptyInput("the likelihood-ratio test needs at least 2 points")
    m = x.shape[-1]
    _check_table(table, m)
    y0 = validate_spd(y0)
    if y0.dim != m:
        raise DimensionMismatch("null point and data dimensions differ")
    n = x.shape[0]
    res = solve_frechet_mean(x, None, opts)
    s1 = float(np.sum(sq_dist_batch(res.mean, x)))
    s0 = float(np.sum(sq_dist_batch(y0.values, x)))
    sig1 = phi(table, s1 / n)
    sig0 = phi(table, s0 / n)
    t = (
        n * (table.log_zeta_at(sig0) - table.log_zeta_at(sig1))
        + s0 / (2.0 * sig0**2)
        - s1 / (2.0 * sig1**2)
    )
    dof = m * (m + 1) // 2
    known = None
    if sigma is not None:
        known = (s0 - s1) / (2.0 * float(sigma) ** 2)
    return LrtResult(
        statistic=float(t),
        dispersion_at_mle=s1 / n,
        dispersion_at_null=s0 / n,
        dof=dof,
        p_value=float(chi2.sf(max(2.0 * t, 0.0), dof)),
        sigma_mle=sig1,
        sigma_null=sig0,
        mle=SpdMatrix._trusted(res.mean),
        known_sigma_statistic=known,
    )


def tangent_components(base, points):
    """Coordinates ``<Log_base(Z), e_a>_base`` in the orthonormal basis of
    :func:`~spdgauss.manifold.tangent_basis`, one row per point."""
    base = validate_spd(base)
    return whitened_components(log_whitened_batch(base.values, _stack(points)))


def asymptotic_covariance(params, table, n_mc, config=None, rng=None, chunk=20000):
    """Monte-Carlo estimate of ``C_ab = 4 E[Delta_a(Z) Delta_b(Z)]``, ``Z ~ G(mean, sigma)``.

    ``Delta_a(Z)`` are the coordinates of ``Log_mean(Z)`` in an orthonormal
    tangent basis at the mean. The asymptotic covariance of
    ``sqrt(N) * Delta(mean_hat)`` is ``4 sigma^4 C^{-1}``.
    """
    m = params.dim
    if table is not None:
        _check_table(table, m)
    rng = rng if rng is not None else np.random.default_rng()
    p = m * (m + 1) // 2
    acc = np.zeros((p, p))
    done = 0
    while done < n_mc:
        k = min(chunk, n_mc - done)
        z = sample_gaussian_array(params.mean.values, params.sigma, k, config, rng)
        comp = whitened_components(log_whitened_batch(params.mean.values, z))
        acc += comp.T @ comp
        done += k
    c = 4.0 * acc / n_mc
    return 0.5 * (c + c.T)
