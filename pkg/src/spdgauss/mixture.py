"""EM fitting of finite mixtures of Riemannian Gaussian distributions."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import DimensionMismatch, EmptyComponent, EmptyInput
from .estimator import (
    GaussianParams,
    MeanSolverOptions,
    least_dispersion_point,
    solve_frechet_mean,
)
from .manifold import SpdMatrix, as_stack, sq_dist_batch
from .normalization import phi

logger = logging.getLogger(__name__)

__all__ = [
    "Component",
    "MixtureModel",
    "Responsibilities",
    "EmOptions",
    "EmResult",
    "component_log_densities",
    "e_step",
    "m_step",
    "mixture_log_likelihood",
    "init_model",
    "em_fit",
]

INIT_STRATEGIES = ("farthest-point", "random")
_EMPTY_FRACTION = 1e-8


@dataclass(frozen=True)
class Component:
    weight: float
    params: GaussianParams


@dataclass(frozen=True)
class MixtureModel:
    """Weighted list of Gaussian components sharing one dimension."""

    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise EmptyInput("a mixture needs at least one component")
        w = np.array([c.weight for c in comps], dtype=float)
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("mixture weights must be positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"mixture weights sum to {w.sum():.15g}, not 1")
        if len({c.params.dim for c in comps}) != 1:
            raise DimensionMismatch("mixture components have different dimensions")
        object.__setattr__(self, "components", comps)

    @classmethod
    def from_arrays(cls, weights, means, sigmas):
        return cls(
            tuple(
                Component(float(w), GaussianParams(mu, float(s)))
                for w, mu, s in zip(weights, means, sigmas)
            )
        )

    @property
    def dim(self):
        return self.components[0].params.dim

    @property
    def n_components(self):
        return len(self.components)

    @property
    def weights(self):
        return np.array([c.weight for c in self.components])

    @property
    def sigmas(self):
        return np.array([c.params.sigma for c in self.components])

    @property
    def means(self):
        return np.stack([c.params.mean.values for c in self.components])


@dataclass(frozen=True)
class Responsibilities:
    """Posterior membership probabilities, one row per point."""

    matrix: np.ndarray

    @property
    def counts(self):
        """Effective component sizes ``N_mu`` (column sums)."""
        return self.matrix.sum(axis=0)


@dataclass(frozen=True)
class EmOptions:
    """EM settings.

    Iteration stops when the relative log-likelihood increase drops below
    ``ll_rel_tol`` or no component mean moves by more than ``mean_tol`` in
    Rao distance. Dispersions are clamped below by ``sigma_floor``.
    """

    max_iters: int = 200
    ll_rel_tol: float = 1e-6
    init: str = "farthest-point"
    seed: int = None
    mean_solver: MeanSolverOptions = field(default_factory=MeanSolverOptions)
    sigma_floor: float = 1e-3
    mean_tol: float = 1e-6

    def __post_init__(self):
        if not self.ll_rel_tol > 0:
            raise ValueError("ll_rel_tol must be > 0")
        if self.init not in INIT_STRATEGIES:
            raise ValueError(f"unknown init strategy {self.init!r}; use one of {INIT_STRATEGIES}")
        if not self.sigma_floor > 0:
            raise ValueError("sigma_floor must be > 0")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")


@dataclass(frozen=True)
class EmResult:
    """Fitted model with its log-likelihood trace.

    ``trace[0]`` is the log-likelihood of the initial model and ``trace[k]``
    the value after iteration ``k``. ``reinitialised`` lists the iterations
    at which empty components were restarted; the trace may drop across
    those steps only. Unpacks as ``(model, trace)``.
    """

    model: MixtureModel
    trace: list
    iterations: int
    converged: bool
    responsibilities: Responsibilities = None
    reinitialised: tuple = ()

    def __iter__(self):
        return iter((self.model, self.trace))


def _check_table(table, m):
    if table.dim != m:
        raise DimensionMismatch(f"zeta table is for m={table.dim}, data has m={m}")


def _stack(points):
    x = as_stack(points) if len(points) else np.empty((0, 0, 0))
    if x.shape[0] == 0:
        raise EmptyInput("no points given")
    return x


def component_log_densities(x, model, table):
    """``log w_mu + log p(Y_n | mu)`` as an ``(N, M)`` array."""
    out = np.empty((x.shape[0], model.n_components))
    for j, comp in enumerate(model.components):
        s = comp.params.sigma
        d2 = sq_dist_batch(comp.params.mean.values, x)
        out[:, j] = math.log(comp.weight) - table.log_zeta_at(s) - d2 / (2.0 * s * s)
    return out


def _normalise_rows(logp):
    r = np.exp(logp - logp.max(axis=1, keepdims=True))
    return r / r.sum(axis=1, keepdims=True)


def e_step(points, model, table):
    """Posterior component probabilities, computed in the log domain."""
    x = _stack(points)
    _check_dims(x, model, table)
    return Responsibilities(_normalise_rows(component_log_densities(x, model, table)))


def _check_dims(x, model, table):
    if x.shape[-1] != model.dim:
        raise DimensionMismatch(f"data has m={x.shape[-1]}, model has m={model.dim}")
    _check_table(table, model.dim)


def mixture_log_likelihood(points, model, table):
    """``sum_n log sum_mu w_mu p(Y_n | mu)``."""
    x = _stack(points)
    _check_dims(x, model, table)
    return float(np.sum(logsumexp(component_log_densities(x, model, table), axis=1)))


def sigma_from_dispersion(table, c, floor):
    """``Phi(c)`` clamped to ``[max(sigma_min, floor), sigma_max]``.

    Dispersions below the table range give ``sigma_min`` (the constrained
    maximiser); dispersions above it still raise.
    """
    if c <= table.g_range[0]:
        s = table.sigma_min
    else:
        s = phi(table, c)
    return max(s, floor)


def _fit_component(x, r, table, opts, init):
    mass = float(r.sum())
    w = r / mass
    res = solve_frechet_mean(x, w, opts.mean_solver, init)
    if not res.converged:
        logger.warning(
            "weighted mean solve stopped after %d iterations (|Delta|=%.3g)",
            res.iterations,
            res.grad_norm,
        )
    c = float(np.dot(w, sq_dist_batch(res.mean, x)))
    return mass, GaussianParams(SpdMatrix._trusted(res.mean), sigma_from_dispersion(table, c, opts.sigma_floor))


def _empty_components(counts, n):
    return [j for j, c in enumerate(counts) if c < _EMPTY_FRACTION * n]


def m_step(points, resp, table, opts=None, init_means=None):
    """Maximise the expected complete log-likelihood given responsibilities.

    Weights become ``N_mu / N``, centres the weighted Riemannian centres of
    mass, and dispersions ``Phi`` of the weighted dispersion about the new
    centre. ``init_means`` warm-starts the centre solves.

    Raises
    ------
    EmptyComponent
        Some ``N_mu < 1e-8 N``; the offending indices are in ``exc.components``.
    """
    opts = opts or EmOptions()
    x = _stack(points)
    _check_table(table, x.shape[-1])
    r = np.asarray(resp.matrix if isinstance(resp, Responsibilities) else resp, dtype=float)
    if r.shape[0] != x.shape[0]:
        raise DimensionMismatch("responsibilities and points disagree in length")
    n = x.shape[0]
    empty = _empty_components(r.sum(axis=0), n)
    if empty:
        raise EmptyComponent(f"components {empty} received no responsibility mass", empty)
    masses, params = [], []
    for j in range(r.shape[1]):
        init = None if init_means is None else init_means[j]
        mass, p = _fit_component(x, r[:, j], table, opts, init)
        masses.append(mass)
        params.append(p)
    w = np.array(masses) / n
    w = w / w.sum()
    return MixtureModel(tuple(Component(float(a), p) for a, p in zip(w, params)))


def _farthest_point_centres(x, m_comp):
    first = least_dispersion_point(x)
    centres = [first]
    dmin = sq_dist_batch(x[first], x)
    while len(centres) < m_comp:
        nxt = int(np.argmax(dmin))
        centres.append(nxt)
        dmin = np.minimum(dmin, sq_dist_batch(x[nxt], x))
    return centres


def init_model(points, M, strategy, table, rng=None, sigma_floor=1e-3):
    """Starting mixture for EM.

    ``"farthest-point"`` starts from the least-dispersion point and greedily
    adds the point farthest from the chosen centres; each centre gets the
    dispersion and size of its nearest-centre cell. ``"random"`` picks ``M``
    distinct data points, one global dispersion and uniform weights.
    """
    x = _stack(points)
    n = x.shape[0]
    if not 1 <= M <= n:
        raise EmptyInput(f"need 1 <= M <= N, got M={M}, N={n}")
    _check_table(table, x.shape[-1])
    if strategy == "farthest-point":
        centres = _farthest_point_centres(x, M)
        d2 = np.stack([sq_dist_batch(x[c], x) for c in centres])
        cell = np.argmin(d2, axis=0)
        counts = np.bincount(cell, minlength=M).astype(float)
        sigmas = [
            sigma_from_dispersion(table, float(d2[j, cell == j].mean()) if counts[j] else 0.0, sigma_floor)
            for j in range(M)
        ]
        weights = np.maximum(counts, 1.0)
    elif strategy == "random":
        if rng is None:
            rng = np.random.default_rng()
        centres = sorted(int(i) for i in rng.choice(n, size=M, replace=False))
        c = float(np.mean(sq_dist_batch(x[least_dispersion_point(x)], x)))
        sigmas = [sigma_from_dispersion(table, c, sigma_floor)] * M
        weights = np.ones(M)
    else:
        raise ValueError(f"unknown init strategy {strategy!r}")
    weights = weights / weights.sum()
    return MixtureModel.from_arrays(weights, [x[c] for c in centres], sigmas)


def _reinitialise(x, model, logp, empty):
    """Restart empty components at the points of lowest mixture density."""
    dens = logsumexp(logp, axis=1)
    order = np.argsort(dens, kind="stable")
    comps = list(model.components)
    for j, idx in zip(empty, order):
        logger.info("reinitialising empty component %d at point %d", j, idx)
        comps[j] = Component(1.0 / x.shape[0], GaussianParams(SpdMatrix._trusted(x[idx].copy()), comps[j].params.sigma))
    w = np.array([c.weight for c in comps])
    w = w / w.sum()
    return MixtureModel(tuple(Component(float(a), c.params) for a, c in zip(w, comps)))


def _max_mean_shift(a, b):
    return max(
        math.sqrt(float(sq_dist_batch(ca.params.mean.values, cb.params.mean.values[None])[0]))
        for ca, cb in zip(a.components, b.components)
    )


def em_fit(points, M, table, opts=None, rng=None, initial=None):
    """Fit an ``M``-component mixture by expectation-maximisation.

    Parameters
    ----------
    points : sequence of SpdMatrix or ndarray, shape (N, m, m)
    M : int
    table : ZetaTable
    opts : EmOptions, optional
    rng : numpy.random.Generator, optional
        Defaults to ``default_rng(opts.seed)``; only the random init uses it.
    initial : MixtureModel, optional
        Overrides the init strategy.

    Returns
    -------
    EmResult
    """
    opts = opts or EmOptions()
    x = _stack(points)
    n = x.shape[0]
    if not 1 <= M <= n:
        raise EmptyInput(f"need 1 <= M <= N, got M={M}, N={n}")
    _check_table(table, x.shape[-1])
    if rng is None:
        rng = np.random.default_rng(opts.seed)
    model = initial if initial is not None else init_model(x, M, opts.init, table, rng, opts.sigma_floor)
    if model.n_components != M:
        raise ValueError("initial model has the wrong number of components")

    logp = component_log_densities(x, model, table)
    ll = float(np.sum(logsumexp(logp, axis=1)))
    trace = [ll]
    restarts = []
    converged = False
    it = 0
    while it < opts.max_iters:
        it += 1
        resp = _normalise_rows(logp)
        empty = _empty_components(resp.sum(axis=0), n)
        if empty:
            model = _reinitialise(x, model, logp, empty)
            restarts.append(it)
            logp = component_log_densities(x, model, table)
            ll = float(np.sum(logsumexp(logp, axis=1)))
            trace.append(ll)
            continue
        new = m_step(x, Responsibilities(resp), table, opts, init_means=model.means)
        logp = component_log_densities(x, new, table)
        ll_new = float(np.sum(logsumexp(logp, axis=1)))
        trace.append(ll_new)
        shift = _max_mean_shift(model, new)
        gain = (ll_new - ll) / max(abs(ll), 1e-300)
        model, ll = new, ll_new
        if gain < opts.ll_rel_tol or shift < opts.mean_tol:
            converged = True
            break
    logger.info("EM stopped after %d iterations, log-likelihood %.10g", it, ll)
    return EmResult(
        model=model,
        trace=trace,
        iterations=it,
        converged=converged,
        responsibilities=Responsibilities(_normalise_rows(logp)),
        reinitialised=tuple(restarts),
    )
