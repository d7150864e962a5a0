r"""Normalising factor :math:`\zeta(\sigma)` of the Riemannian Gaussian density.

In polar coordinates the factor reduces to an ``m``-fold integral over the
log-eigenvalues,

.. math::

    \zeta(\sigma) = \frac{\omega_m\, 8^{m(m-1)/4}}{m!\, 2^m}
        \int_{\mathbb{R}^m} e^{-|r|^2 / 2\sigma^2}
        \prod_{i<j} \sinh(|r_i - r_j| / 2)\, dr,

which is estimated here by importance sampling with an
:math:`\mathcal{N}(0, \sigma^2 I_m)` proposal. ``m = 1`` has an empty product
and is exact; ``m = 2`` has a closed form in terms of ``erf``.

Estimation of :math:`\sigma` only needs the function
:math:`g(\sigma) = \sigma^3\, d\log\zeta / d\sigma`, which is strictly
increasing; :func:`phi` inverts it.
"""

import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.special import erf, multigammaln

from .errors import (
    DimensionMismatch,
    FormatError,
    ImpreciseTable,
    InvalidSigma,
    NonMonotoneTable,
    OutOfTableRange,
)

logger = logging.getLogger(__name__)

__all__ = [
    "ZetaTable",
    "orthogonal_volume",
    "zeta_mc",
    "zeta_analytic_m2",
    "dlog_zeta_analytic_m2",
    "build_table",
    "phi",
    "save_table",
    "load_table",
]

DEFAULT_SIGMA_RANGE = (0.05, 3.0)
DEFAULT_GRID_SIZE = 64
DEFAULT_MC_SAMPLES = 1_000_000
MAX_REL_STD_ERROR = 0.02
_CHUNK = 1 << 15


def orthogonal_volume(m):
    """Total volume ``omega_m = 2^m pi^(m^2/2) / Gamma_m(m/2)`` of ``O(m)``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return math.exp(
        m * math.log(2.0) + m * m / 2.0 * math.log(math.pi) - multigammaln(m / 2.0, m)
    )


def _log_prefactor(m):
    # log of (m! 2^m)^-1 * omega_m * 8^(m(m-1)/4)
    return (
        -math.lgamma(m + 1)
        - m * math.log(2.0)
        + math.log(orthogonal_volume(m))
        + m * (m - 1) / 4.0 * math.log(8.0)
    )


def _check_sigma(sigma):
    if not (np.isfinite(sigma) and sigma > 0):
        raise InvalidSigma(f"sigma must be a positive finite number, got {sigma!r}")


def _log_sinh(x):
    # log(sinh(x)) for x >= 0; -inf at 0
    with np.errstate(divide="ignore"):
        return x + np.log1p(-np.exp(-2.0 * x)) - math.log(2.0)


def _pair_gaps(z):
    """Absolute pairwise differences ``|z_i - z_j|`` for ``i < j``, shape ``(n, P)``."""
    m = z.shape[1]
    iu = np.triu_indices(m, k=1)
    return np.abs(z[:, iu[0]] - z[:, iu[1]])


class _Accumulator:
    """Streaming, fixed-order log-domain sums of importance weights.

    Keeps ``sum w``, ``sum w^2`` and ``sum w * D`` relative to a running
    maximum of ``log w``; ``D`` is the sigma-derivative of ``log w``.
    """

    def __init__(self):
        self.shift = -np.inf
        self.s1 = 0.0
        self.s2 = 0.0
        self.sd = 0.0
        self.n = 0

    def add(self, logw, dlogw):
        self.n += logw.size
        cmax = np.max(logw)
        if cmax > self.shift:
            scale = math.exp(self.shift - cmax) if np.isfinite(self.shift) else 0.0
            self.s1 *= scale
            self.s2 *= scale * scale
            self.sd *= scale
            self.shift = cmax
        w = np.exp(logw - self.shift)
        self.s1 += float(np.sum(w))
        self.s2 += float(np.sum(w * w))
        self.sd += float(np.sum(w * dlogw))

    def log_mean(self):
        return self.shift + math.log(self.s1 / self.n)

    def rel_std_error(self):
        n = self.n
        if n < 2:
            return 0.0
        mean = self.s1 / n
        var = max(self.s2 / n - mean * mean, 0.0) * n / (n - 1)
        return math.sqrt(var / n) / mean

    def mean_dlogw(self):
        return self.sd / self.s1


def _mc_sums(m, sigmas, n_samples, rng):
    """Importance-sampling sums for each sigma using common random numbers."""
    accs = [_Accumulator() for _ in sigmas]
    remaining = n_samples
    while remaining > 0:
        size = min(_CHUNK, remaining)
        remaining -= size
        z = rng.standard_normal((size, m))
        gaps = _pair_gaps(z)
        for acc, s in zip(accs, sigmas):
            if gaps.shape[1] == 0:
                acc.add(np.zeros(size), np.zeros(size))
                continue
            x = 0.5 * s * gaps
            logw = np.sum(_log_sinh(x), axis=1)
            with np.errstate(divide="ignore", invalid="ignore"):
                d = np.where(x > 0, 0.5 * gaps / np.tanh(x), 0.0)
            acc.add(logw, np.sum(d, axis=1))
    return accs


def _log_zeta_from(acc, m, sigma):
    return _log_prefactor(m) + 0.5 * m * math.log(2.0 * math.pi * sigma * sigma) + acc.log_mean()


def zeta_mc(m, sigma, n_samples, seed=None, rng=None):
    """Monte-Carlo estimate of ``zeta(sigma)`` and its standard error.

    Parameters
    ----------
    m : int
        Matrix dimension.
    sigma : float
        Dispersion, > 0.
    n_samples : int
        Number of importance samples.
    seed : int, optional
        Seed for a fresh generator; ignored if ``rng`` is given.
    rng : numpy.random.Generator, optional

    Returns
    -------
    estimate, std_error : float
    """
    _check_sigma(sigma)
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(seed)
    (acc,) = _mc_sums(m, [sigma], n_samples, rng)
    est = math.exp(_log_zeta_from(acc, m, sigma))
    return est, est * acc.rel_std_error()


def zeta_analytic_m2(sigma):
    """Closed form ``(2 pi)^(3/2) sigma^2 exp(sigma^2/4) erf(sigma/2)`` for ``m = 2``."""
    _check_sigma(sigma)
    return (2.0 * math.pi) ** 1.5 * sigma**2 * math.exp(sigma**2 / 4.0) * float(erf(sigma / 2.0))


def _log_zeta_m2(sigma):
    sigma = np.asarray(sigma, dtype=float)
    return 1.5 * math.log(2.0 * math.pi) + 2.0 * np.log(sigma) + sigma**2 / 4.0 + np.log(erf(sigma / 2.0))


def dlog_zeta_analytic_m2(sigma):
    """``d/dsigma log zeta`` for ``m = 2``."""
    sigma = np.asarray(sigma, dtype=float)
    return 2.0 / sigma + sigma / 2.0 + np.exp(-(sigma**2) / 4.0) / (math.sqrt(math.pi) * erf(sigma / 2.0))


@dataclass(frozen=True, eq=False)
class ZetaTable:
    """Tabulated ``log zeta`` and its derivative on an ascending sigma grid.

    Between grid points ``log zeta`` is a cubic Hermite interpolant in
    ``log sigma`` that honours the tabulated derivatives; ``g`` and the
    derivative are taken from that same interpolant, so densities and
    dispersion estimates always agree with each other.
    """

    dim: int
    sigma_grid: np.ndarray
    log_zeta: np.ndarray
    dlog_zeta_dsigma: np.ndarray
    mc_samples: int = 0
    seed: int = 0
    rel_std_error: np.ndarray = None

    def __post_init__(self):
        grid = np.array(self.sigma_grid, dtype=float)
        lz = np.array(self.log_zeta, dtype=float)
        dlz = np.array(self.dlog_zeta_dsigma, dtype=float)
        if grid.ndim != 1 or grid.size < 2 or lz.shape != grid.shape or dlz.shape != grid.shape:
            raise FormatError("sigma grid and tabulated columns must be 1-d and equally long")
        if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
            raise FormatError("sigma grid must be positive and strictly ascending")
        for a in (grid, lz, dlz):
            a.setflags(write=False)
        object.__setattr__(self, "sigma_grid", grid)
        object.__setattr__(self, "log_zeta", lz)
        object.__setattr__(self, "dlog_zeta_dsigma", dlz)
        x = np.log(grid)
        spline = CubicHermiteSpline(x, lz, grid * dlz, extrapolate=False)
        object.__setattr__(self, "_spline", spline)
        object.__setattr__(self, "_dspline", spline.derivative())
        object.__setattr__(self, "_ddspline", spline.derivative(2))
        g_nodes = grid**3 * dlz
        object.__setattr__(self, "g_nodes", g_nodes)
        if np.any(np.diff(g_nodes) <= 0):
            raise NonMonotoneTable(
                "sigma^3 dlog(zeta)/dsigma is not strictly increasing on the grid; "
                "rebuild with more Monte-Carlo samples"
            )
        # also between nodes, where phi actually searches
        fine = np.exp(np.linspace(x[0], x[-1], 16 * grid.size))
        if np.any(np.diff(self.g(fine)) <= 0):
            raise NonMonotoneTable(
                "interpolated sigma^3 dlog(zeta)/dsigma is not strictly increasing; "
                "rebuild with more Monte-Carlo samples"
            )

    @property
    def sigma_min(self):
        return float(self.sigma_grid[0])

    @property
    def sigma_max(self):
        return float(self.sigma_grid[-1])

    @property
    def g_range(self):
        return float(self.g_nodes[0]), float(self.g_nodes[-1])

    def _check_range(self, sigma):
        s = np.asarray(sigma, dtype=float)
        # tiny slack for values produced by phi at the grid ends
        lo, hi = self.sigma_min * (1 - 1e-12), self.sigma_max * (1 + 1e-12)
        if np.any(~np.isfinite(s)) or np.any(s < lo) or np.any(s > hi):
            raise OutOfTableRange(
                f"sigma {sigma} outside table range [{self.sigma_min:g}, {self.sigma_max:g}]"
            )
        return np.clip(s, self.sigma_min, self.sigma_max)

    def log_zeta_at(self, sigma):
        """Interpolated ``log zeta(sigma)``."""
        s = self._check_range(sigma)
        out = self._spline(np.log(s))
        return float(out) if np.ndim(out) == 0 else out

    def dlog_zeta_at(self, sigma):
        s = self._check_range(sigma)
        out = self._dspline(np.log(s)) / s
        return float(out) if np.ndim(out) == 0 else out

    def g(self, sigma):
        """``sigma^3 d log zeta / d sigma`` from the interpolant."""
        s = self._check_range(sigma)
        out = s * s * self._dspline(np.log(s))
        return float(out) if np.ndim(out) == 0 else out

    def _g_and_slope(self, s):
        x = math.log(s)
        h1 = float(self._dspline(x))
        h2 = float(self._ddspline(x))
        return s * s * h1, 2.0 * s * h1 + s * h2


def build_table(
    m,
    sigma_range=DEFAULT_SIGMA_RANGE,
    grid_size=DEFAULT_GRID_SIZE,
    mc_samples=DEFAULT_MC_SAMPLES,
    seed=0,
    method="auto",
):
    """Tabulate ``log zeta`` and ``d log zeta / d sigma`` on a geometric grid.

    ``method="auto"`` uses the exact expressions for ``m = 1`` and ``m = 2``
    and Monte-Carlo otherwise; ``method="mc"`` forces Monte-Carlo. The
    Monte-Carlo path reuses one set of normal draws for every grid point and
    differentiates the estimator itself, so the tabulated derivative is the
    exact derivative of the tabulated (noisy) ``log zeta``.

    Grid points whose relative standard error exceeds 2 % are dropped from the
    upper end of the grid.

    Raises
    ------
    NonMonotoneTable
        Monte-Carlo noise broke monotonicity of ``g``; raise ``mc_samples``.
    ImpreciseTable
        Fewer than 8 grid points survive the precision cut.
    """
    lo, hi = float(sigma_range[0]), float(sigma_range[1])
    if m < 1:
        raise ValueError("m must be >= 1")
    if not (0 < lo < hi):
        raise InvalidSigma(f"invalid sigma range ({lo}, {hi})")
    if grid_size < 8:
        raise ValueError("grid_size must be >= 8")
    if method not in ("auto", "mc"):
        raise ValueError(f"unknown method {method!r}")
    grid = np.geomspace(lo, hi, grid_size)
    rel_err = np.zeros(grid_size)

    if method == "auto" and m == 1:
        lz = 0.5 * math.log(2.0 * math.pi) + np.log(grid)
        dlz = 1.0 / grid
        mc_samples = 0
    elif method == "auto" and m == 2:
        lz = _log_zeta_m2(grid)
        dlz = dlog_zeta_analytic_m2(grid)
        mc_samples = 0
    else:
        rng = np.random.default_rng(seed)
        accs = _mc_sums(m, grid, mc_samples, rng)
        lz = np.array([_log_zeta_from(a, m, s) for a, s in zip(accs, grid)])
        dlz = np.array([m / s + a.mean_dlogw() for a, s in zip(accs, grid)])
        rel_err = np.array([a.rel_std_error() for a in accs])
        bad = np.flatnonzero(rel_err > MAX_REL_STD_ERROR)
        if bad.size:
            keep = bad[0]
            logger.warning(
                "dropping %d grid points above sigma=%.4g (relative error %.3g > %.2g)",
                grid_size - keep, grid[keep], rel_err[keep], MAX_REL_STD_ERROR,
            )
            if keep < 8:
                raise ImpreciseTable(
                    f"only {keep} grid points reach {MAX_REL_STD_ERROR:.0%} precision; "
                    "raise mc_samples or lower sigma_max"
                )
            grid, lz, dlz, rel_err = grid[:keep], lz[:keep], dlz[:keep], rel_err[:keep]
        logger.info("zeta table m=%d: max relative std error %.3g", m, float(np.max(rel_err)))

    return ZetaTable(
        dim=m,
        sigma_grid=grid,
        log_zeta=lz,
        dlog_zeta_dsigma=dlz,
        mc_samples=int(mc_samples),
        seed=int(seed),
        rel_std_error=rel_err,
    )


def phi(table, c):
    """Inverse of ``sigma -> sigma^3 d log zeta / d sigma``.

    Finds ``sigma`` with ``|g(sigma) - c| <= 1e-12 c`` by bracketing on the
    grid followed by Newton steps that fall back to bisection whenever they
    leave the bracket.

    Raises
    ------
    OutOfTableRange
        ``c`` is not positive or lies beyond the tabulated range of ``g``.
    """
    c = float(c)
    g_lo, g_hi = table.g_range
    if not np.isfinite(c) or c <= 0:
        raise OutOfTableRange(
            f"dispersion {c!r} is degenerate (must be > 0); sigma would collapse to zero"
        )
    if c < g_lo or c > g_hi:
        raise OutOfTableRange(
            f"dispersion {c:.6g} outside tabulated range [{g_lo:.6g}, {g_hi:.6g}]; "
            "rebuild the table over a wider sigma range"
        )
    k = int(np.searchsorted(table.g_nodes, c))
    if table.g_nodes[min(k, table.g_nodes.size - 1)] == c:
        return float(table.sigma_grid[min(k, table.g_nodes.size - 1)])
    a, b = float(table.sigma_grid[k - 1]), float(table.sigma_grid[k])
    s = 0.5 * (a + b)
    for _ in range(100):
        gs, slope = table._g_and_slope(s)
        f = gs - c
        if abs(f) <= 1e-12 * c:
            break
        if f > 0:
            b = s
        else:
            a = s
        step = s - f / slope if slope > 0 else None
        s = step if step is not None and a < step < b else 0.5 * (a + b)
        if b - a <= 1e-15 * b:
            break
    return float(s)


_HEADER = re.compile(r"^# spdgauss-zeta v1 m=(\d+) mc_samples=(\d+) seed=(-?\d+)\s*$")


def save_table(table, path):
    """Write the table as CSV with a self-describing header line."""
    lines = [f"# spdgauss-zeta v1 m={table.dim} mc_samples={table.mc_samples} seed={table.seed}"]
    for s, lz, d in zip(table.sigma_grid, table.log_zeta, table.dlog_zeta_dsigma):
        lines.append(f"{s:.17g},{lz:.17g},{d:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_table(path, expected_dim=None):
    """Read a table written by :func:`save_table`."""
    text = Path(path).read_text().splitlines()
    if not text:
        raise FormatError(f"{path}: empty zeta table")
    match = _HEADER.match(text[0])
    if not match:
        raise FormatError(f"{path}: missing or malformed spdgauss-zeta header")
    m, n, seed = (int(v) for v in match.groups())
    if expected_dim is not None and m != expected_dim:
        raise DimensionMismatch(f"{path}: table is for m={m}, data has m={expected_dim}")
    rows = [line.split(",") for line in text[1:] if line.strip()]
    try:
        arr = np.array([[float(v) for v in row] for row in rows])
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise FormatError(f"{path}: expected rows 'sigma,log_zeta,dlog_zeta_dsigma'")
    return ZetaTable(
        dim=m,
        sigma_grid=arr[:, 0],
        log_zeta=arr[:, 1],
        dlog_zeta_dsigma=arr[:, 2],
        mc_samples=n,
        seed=seed,
    )
