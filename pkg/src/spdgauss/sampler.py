"""Exact sampling from Riemannian Gaussian distributions.

Recipe: draw ``U`` Haar-distributed on ``O(m)``, draw the log-eigenvalues
``r`` from their joint density, form ``Y = U^T diag(exp r) U`` (a draw from
``G(I, sigma)``), then move it to ``G(Ybar, sigma)`` by congruence with
``Ybar^{1/2}``.

The eigenvalue density is known up to its normaliser, so a random-walk
Metropolis-Hastings chain samples it in general. For ``m = 2`` the density
factorises over ``t = r1 + r2`` and ``rho = r1 - r2`` and is sampled exactly.
All functions take an explicit :class:`numpy.random.Generator`.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidSigma
from .manifold import as_stack, sqrtm, sym, validate_spd

logger = logging.getLogger(__name__)

DEFAULT_STEP_SCALE = 1.5

__all__ = [
    "SamplerConfig",
    "MhResult",
    "sample_haar_orthogonal",
    "log_eigen_density",
    "sample_eigenvalues_mh",
    "sample_eigenvalues_m2",
    "sample_gaussian",
    "sample_gaussian_array",
]


@dataclass(frozen=True)
class SamplerConfig:
    """Metropolis-Hastings settings.

    ``mh_step=None`` means ``1.5 * sigma / sqrt(m)``, which keeps the
    acceptance rate within [0.15, 0.6] for ``m <= 10``. With ``independent_chains``
    every returned draw is the end state of its own chain (after
    ``burn_in`` steps) instead of a thinned state of one long chain.
    ``use_exact_m2`` selects the exact factorised sampler when ``m = 2``.
    """

    mh_step: float = None
    burn_in: int = 2000
    thinning: int = 5
    independent_chains: bool = False
    use_exact_m2: bool = True

    def __post_init__(self):
        if self.mh_step is not None and not self.mh_step > 0:
            raise ValueError("mh_step must be > 0")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")


@dataclass(frozen=True)
class MhResult:
    samples: np.ndarray
    acceptance_rate: float


def _check_sigma(sigma):
    if not (np.isfinite(sigma) and sigma > 0):
        raise InvalidSigma(f"sigma must be positive and finite, got {sigma!r}")


def sample_haar_orthogonal(m, rng, size=None):
    """Haar-distributed orthogonal matrices via QR of a Gaussian matrix.

    The columns of ``Q`` are multiplied by the signs of ``diag(R)``, which
    makes the factorisation unique and the law exactly uniform on ``O(m)``.
    """
    shape = (m, m) if size is None else (size, m, m)
    a = rng.standard_normal(shape)
    q, r = np.linalg.qr(a)
    d = np.sign(np.diagonal(r, axis1=-2, axis2=-1))
    d[d == 0] = 1.0
    return q * d[..., None, :]


def _log_sinh(x):
    with np.errstate(divide="ignore"):
        return x + np.log1p(-np.exp(-2.0 * x)) - math.log(2.0)


def log_eigen_density(r, sigma):
    """Unnormalised log density of the log-eigenvalues of a ``G(I, sigma)`` draw."""
    r = np.asarray(r, dtype=float)
    m = r.shape[-1]
    out = -np.sum(r * r, axis=-1) / (2.0 * sigma * sigma)
    if m > 1:
        iu = np.triu_indices(m, k=1)
        gaps = np.abs(r[..., iu[0]] - r[..., iu[1]])
        out = out + np.sum(_log_sinh(0.5 * gaps), axis=-1)
    return out


def _run_chain(r0, sigma, step, n_steps, rng):
    """Random-walk MH; returns all visited states and the acceptance count."""
    m = r0.size
    states = np.empty((n_steps, m))
    noise = rng.standard_normal((n_steps, m)) * step
    logu = np.log(rng.random(n_steps))
    r = r0.copy()
    lp = float(log_eigen_density(r, sigma))
    accepted = 0
    for k in range(n_steps):
        prop = r + noise[k]
        lp_prop = float(log_eigen_density(prop, sigma))
        if logu[k] < lp_prop - lp:
            r, lp = prop, lp_prop
            accepted += 1
        states[k] = r
    return states, accepted


def _initial_state(m, sigma):
    # distinct, symmetric about 0, roughly at the scale of the target
    return sigma * np.linspace(-1.0, 1.0, m) * math.sqrt(m) if m > 1 else np.zeros(1)


def sample_eigenvalues_mh(m, sigma, n, config=None, rng=None, return_info=False):
    """Draw ``n`` log-eigenvalue vectors by Metropolis-Hastings.

    The target is ``exp(-|r|^2 / 2 sigma^2) prod_{i<j} sinh(|r_i - r_j| / 2)``;
    acceptance is decided in the log domain, so the normaliser never enters.

    Returns
    -------
    ndarray, shape (n, m)
        Or an :class:`MhResult` when ``return_info`` is true.
    """
    _check_sigma(sigma)
    if m < 1:
        raise ValueError("m must be >= 1")
    config = config or SamplerConfig()
    rng = rng if rng is not None else np.random.default_rng()
    step = config.mh_step if config.mh_step is not None else DEFAULT_STEP_SCALE * sigma / math.sqrt(m)
    r0 = _initial_state(m, sigma)

    if n == 0:
        out, rate = np.empty((0, m)), float("nan")
    elif config.independent_chains:
        out = np.empty((n, m))
        acc = 0
        for i in range(n):
            states, a = _run_chain(r0, sigma, step, config.burn_in + 1, rng)
            out[i] = states[-1]
            acc += a
        rate = acc / (n * (config.burn_in + 1))
    else:
        total = config.burn_in + n * config.thinning
        states, acc = _run_chain(r0, sigma, step, total, rng)
        out = states[config.burn_in + config.thinning - 1 :: config.thinning][:n]
        rate = acc / total
    logger.debug("MH m=%d sigma=%g step=%g acceptance=%.3f", m, sigma, step, rate)
    if return_info:
        return MhResult(out, rate)
    return out


def sample_rho_m2(sigma, n, rng):
    """Exact draws of ``rho = r1 - r2`` for ``m = 2``.

    ``|rho|`` has density proportional to
    ``exp(-(x - sigma^2)^2 / 4 sigma^2) (1 - exp(-x))`` on ``x > 0``: propose
    ``x ~ N(sigma^2, 2 sigma^2)`` and accept with probability
    ``max(0, 1 - exp(-x))``. The sign of ``rho`` is uniform.
    """
    out = np.empty(n)
    filled = 0
    s2 = sigma * sigma
    while filled < n:
        need = n - filled
        # expected acceptance is at least ~ sigma^2 / 2 for small sigma
        batch = int(min(max(2 * need / max(min(s2, 1.0) * 0.25, 1e-6), 64), 1 << 20))
        x = rng.normal(s2, math.sqrt(2.0) * sigma, batch)
        u = rng.random(batch)
        keep = x[u < -np.expm1(-np.maximum(x, 0.0))]
        take = min(keep.size, need)
        out[filled : filled + take] = keep[:take]
        filled += take
    signs = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    return signs * out


def sample_eigenvalues_m2(sigma, n, rng):
    """Exact (non-MCMC) draws of ``(r1, r2)`` for ``m = 2``.

    ``t = r1 + r2 ~ N(0, 2 sigma^2)`` independently of ``rho``.
    """
    _check_sigma(sigma)
    t = rng.normal(0.0, math.sqrt(2.0) * sigma, n)
    rho = sample_rho_m2(sigma, n, rng)
    return np.column_stack([(t + rho) / 2.0, (t - rho) / 2.0])


def sample_gaussian_array(mean, sigma, n, config=None, rng=None):
    """Draw ``n`` matrices from ``G(mean, sigma)`` as an ``(n, m, m)`` array."""
    _check_sigma(sigma)
    config = config or SamplerConfig()
    rng = rng if rng is not None else np.random.default_rng()
    mean = as_stack([mean])[0]
    m = mean.shape[0]
    u = sample_haar_orthogonal(m, rng, size=n)
    if m == 2 and config.use_exact_m2:
        r = sample_eigenvalues_m2(sigma, n, rng)
    else:
        r = sample_eigenvalues_mh(m, sigma, n, config, rng)
    # Y(r, U) = U^T diag(e^r) U
    y = np.swapaxes(u, -1, -2) @ (np.exp(r)[..., None] * u)
    sq = sqrtm(mean)
    return sym(sq @ y @ sq)


def sample_gaussian(params, n, config=None, rng=None):
    """Draw ``n`` :class:`SpdMatrix` samples from ``G(params.mean, params.sigma)``."""
    arr = sample_gaussian_array(params.mean, params.sigma, n, config, rng)
    return [validate_spd(a) for a in arr]
