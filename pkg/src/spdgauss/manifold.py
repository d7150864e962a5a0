r"""Affine-invariant (Rao-Fisher) geometry of symmetric positive definite matrices.

At a point :math:`Y` the metric is :math:`\langle v, w\rangle_Y =
\mathrm{tr}(Y^{-1} v Y^{-1} w)` and the geodesic distance is

.. math::

    d^2(Y, Z) = \sum_i \log^2 \lambda_i(Y^{-1/2} Z Y^{-1/2}).

All matrix functions (square root, powers, log, exp) are evaluated through a
symmetric eigendecomposition. The batch helpers work on raw ``(N, m, m)``
arrays and do no validation; they carry the estimation code. The typed API
below them validates its inputs.
"""

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    BaseMismatch,
    DimensionMismatch,
    NotPositiveDefinite,
    NotSquare,
    NotSymmetric,
    SingularTransform,
    ValidationError,
)

__all__ = [
    "Tolerances",
    "SpdMatrix",
    "TangentVector",
    "PolarCoordinates",
    "TangentBasis",
    "validate_spd",
    "rao_distance",
    "geodesic",
    "log_map",
    "exp_map",
    "metric_inner",
    "congruence",
    "polar_compose",
    "polar_decompose",
    "tangent_basis",
]


@dataclass(frozen=True)
class Tolerances:
    """Acceptance thresholds for manifold types.

    ``sym_tol`` is relative to the largest entry, ``pd_floor`` relative to
    the largest eigenvalue, so both survive congruence by badly conditioned
    matrices.
    """

    sym_tol: float = 1e-9
    pd_floor: float = 1e-12
    orth_tol: float = 1e-10
    singular_tol: float = 1e-300


DEFAULT_TOLERANCES = Tolerances()


# ---------------------------------------------------------------------------
# Batch helpers on raw arrays


def sym(a):
    """Symmetric part of (a stack of) square matrices."""
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def sym_fn(a, fn):
    """Apply the scalar function ``fn`` to (a stack of) symmetric matrices."""
    w, v = np.linalg.eigh(a)
    return (v * fn(w)[..., None, :]) @ np.swapaxes(v, -1, -2)


def sqrtm(a):
    return sym_fn(a, np.sqrt)


def invsqrtm(a):
    return sym_fn(a, lambda w: 1.0 / np.sqrt(w))


def logm(a):
    return sym_fn(a, np.log)


def expm(a):
    return sym_fn(a, np.exp)


def powm(a, t):
    return sym_fn(a, lambda w: w**t)


def as_stack(points):
    """Stack a sequence of matrices (or ``SpdMatrix``) into an ``(N, m, m)`` array."""
    if isinstance(points, np.ndarray):
        arr = points
    else:
        arr = np.asarray([np.asarray(p, dtype=float) for p in points], dtype=float)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[-1] != arr.shape[-2]:
        raise NotSquare(f"expected a stack of square matrices, got shape {arr.shape}")
    return np.asarray(arr, dtype=float)


def whiten(y, zs):
    """Return ``Y^{-1/2} Z Y^{-1/2}`` for each ``Z`` in ``zs``."""
    isq = invsqrtm(y)
    return sym(isq @ zs @ isq)


def sq_dist_batch(y, zs):
    """Squared Rao distances from ``y`` to every matrix in the stack ``zs``."""
    w = np.linalg.eigvalsh(whiten(y, zs))
    return np.sum(np.log(w) ** 2, axis=-1)


def log_whitened_batch(y, zs):
    """``log(Y^{-1/2} Z Y^{-1/2})`` for each ``Z``.

    This is the Riemannian logarithm expressed in the frame where ``y`` is the
    identity: ``Log_Y(Z) = Y^{1/2} L Y^{1/2}`` and ``||Log_Y(Z)||_Y = ||L||_F``.
    """
    return sym(logm(whiten(y, zs)))


def exp_whitened(y, x):
    """``Y^{1/2} exp(X) Y^{1/2}`` for a symmetric ``X`` in the whitened frame."""
    sq = sqrtm(y)
    return sym(sq @ expm(x) @ sq)


# ---------------------------------------------------------------------------
# Typed API


class SpdMatrix:
    """An immutable, validated symmetric positive definite matrix.

    Construct through :func:`validate_spd`; the eigendecomposition is computed
    once and cached.
    """

    __slots__ = ("_values", "_eig")

    def __init__(self, values, tolerances=None):
        checked = _checked_spd(values, tolerances or DEFAULT_TOLERANCES)
        self._values = checked[0]
        self._eig = checked[1]

    @classmethod
    def _trusted(cls, values):
        # Skips validation; used for results of operations that preserve SPD-ness.
        obj = cls.__new__(cls)
        arr = sym(np.array(values, dtype=float))
        arr.setflags(write=False)
        obj._values = arr
        obj._eig = None
        return obj

    @property
    def values(self):
        return self._values

    @property
    def dim(self):
        return self._values.shape[0]

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._values
        return self._values.astype(dtype)

    def __repr__(self):
        return f"SpdMatrix({self._values.tolist()!r})"

    def eigh(self):
        if self._eig is None:
            w, v = np.linalg.eigh(self._values)
            w.setflags(write=False)
            v.setflags(write=False)
            self._eig = (w, v)
        return self._eig

    def _fn(self, fn):
        w, v = self.eigh()
        return (v * fn(w)) @ v.T

    def sqrt(self):
        return self._fn(np.sqrt)

    def invsqrt(self):
        return self._fn(lambda w: 1.0 / np.sqrt(w))

    def inv(self):
        return self._fn(lambda w: 1.0 / w)

    def power(self, t):
        return self._fn(lambda w: w**t)

    def log(self):
        return self._fn(np.log)


def _checked_spd(raw, tol):
    a = np.array(raw, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NotSquare(f"matrix must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError("matrix has non-finite entries")
    scale = np.max(np.abs(a)) if a.size else 0.0
    asym = np.max(np.abs(a - a.T)) if a.size else 0.0
    if asym > tol.sym_tol * scale:
        raise NotSymmetric(f"asymmetry {asym:.3g} exceeds {tol.sym_tol:g} x max|Y|")
    a = sym(a)
    w, v = np.linalg.eigh(a)
    if w.size == 0 or w[0] <= tol.pd_floor * max(w[-1], 0.0) or w[0] <= 0.0:
        raise NotPositiveDefinite(
            f"smallest eigenvalue {w[0] if w.size else float('nan'):.3g} is not positive "
            "beyond the floor"
        )
    a.setflags(write=False)
    w.setflags(write=False)
    v.setflags(write=False)
    return a, (w, v)


def validate_spd(raw, tolerances=None):
    """Validate ``raw`` and return it as an :class:`SpdMatrix`.

    Sub-tolerance asymmetry is removed by symmetrisation.

    Raises
    ------
    NotSquare, NotSymmetric, NotPositiveDefinite
    """
    if isinstance(raw, SpdMatrix):
        return raw
    return SpdMatrix(raw, tolerances)


def _as_spd(y):
    return y if isinstance(y, SpdMatrix) else validate_spd(y)


def _same_dim(y, z):
    if y.dim != z.dim:
        raise DimensionMismatch(f"dimensions differ: {y.dim} vs {z.dim}")


@dataclass(frozen=True)
class TangentVector:
    """A symmetric matrix attached to a base point."""

    base: SpdMatrix
    value: np.ndarray = field(repr=False)

    def __post_init__(self):
        base = _as_spd(self.base)
        v = np.array(self.value, dtype=float)
        if v.shape != (base.dim, base.dim):
            raise DimensionMismatch(
                f"tangent value shape {v.shape} does not match base dimension {base.dim}"
            )
        scale = max(np.max(np.abs(v)), 1.0)
        if np.max(np.abs(v - v.T)) > DEFAULT_TOLERANCES.sym_tol * scale:
            raise NotSymmetric("tangent vector must be symmetric")
        v = sym(v)
        v.setflags(write=False)
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "value", v)

    def __array__(self, dtype=None, copy=None):
        return self.value if dtype is None else self.value.astype(dtype)


@dataclass(frozen=True)
class PolarCoordinates:
    """Log-eigenvalues ``r`` and orthogonal ``u`` with ``Y = u.T @ diag(exp(r)) @ u``."""

    r: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        r = np.array(self.r, dtype=float).reshape(-1)
        u = np.array(self.u, dtype=float)
        if u.shape != (r.size, r.size):
            raise DimensionMismatch(f"u has shape {u.shape}, expected {(r.size, r.size)}")
        err = np.max(np.abs(u.T @ u - np.eye(r.size)))
        if err > DEFAULT_TOLERANCES.orth_tol:
            raise ValidationError(f"u is not orthogonal (max deviation {err:.3g})")
        r.setflags(write=False)
        u.setflags(write=False)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "u", u)


@dataclass(frozen=True)
class TangentBasis:
    base: SpdMatrix
    vectors: tuple

    @property
    def size(self):
        return len(self.vectors)

    def components(self, v):
        """Coordinates ``<v, e_a>`` of a tangent vector in this basis."""
        return np.array([metric_inner(self.base, v, e) for e in self.vectors])


def rao_distance(y, z):
    """Rao (affine-invariant) distance between two SPD matrices."""
    y, z = _as_spd(y), _as_spd(z)
    _same_dim(y, z)
    isq = y.invsqrt()
    w = np.linalg.eigvalsh(sym(isq @ z.values @ isq))
    return float(np.sqrt(np.sum(np.log(w) ** 2)))


def geodesic(y, z, t):
    """Point at parameter ``t`` on the geodesic from ``y`` (t=0) to ``z`` (t=1)."""
    y, z = _as_spd(y), _as_spd(z)
    _same_dim(y, z)
    if t == 0:
        return y
    sq, isq = y.sqrt(), y.invsqrt()
    inner = powm(sym(isq @ z.values @ isq), t)
    return SpdMatrix._trusted(sq @ inner @ sq)


def log_map(y, z):
    """Riemannian logarithm ``Log_Y(Z)``, the initial velocity of the geodesic."""
    y, z = _as_spd(y), _as_spd(z)
    _same_dim(y, z)
    sq, isq = y.sqrt(), y.invsqrt()
    inner = logm(sym(isq @ z.values @ isq))
    return TangentVector(y, sym(sq @ inner @ sq))


def exp_map(v):
    """Riemannian exponential ``Exp_Y(v)``."""
    y = v.base
    sq, isq = y.sqrt(), y.invsqrt()
    inner = expm(sym(isq @ v.value @ isq))
    return SpdMatrix._trusted(sq @ inner @ sq)


def _same_base(a, b):
    return a is b or np.array_equal(a.values, b.values)


def metric_inner(y, v, w):
    """Rao-Fisher inner product ``tr(Y^-1 v Y^-1 w)`` of tangent vectors at ``y``."""
    y = _as_spd(y)
    if not (_same_base(v.base, y) and _same_base(w.base, y)):
        raise BaseMismatch("tangent vectors must be attached to the given base point")
    yi = y.inv()
    return float(np.sum((yi @ v.value) * (yi @ w.value).T))


def congruence(y, a):
    """Group action ``Y . A = A^T Y A``."""
    y = _as_spd(y)
    a = np.asarray(a, dtype=float)
    if a.shape != (y.dim, y.dim):
        raise DimensionMismatch(f"transform shape {a.shape} does not match dimension {y.dim}")
    if abs(np.linalg.det(a)) <= DEFAULT_TOLERANCES.singular_tol or np.linalg.cond(a) > 1e15:
        raise SingularTransform("congruence transform is singular")
    return SpdMatrix._trusted(a.T @ y.values @ a)


def polar_compose(p):
    """``Y(r, U) = U^T diag(exp r) U``."""
    return SpdMatrix._trusted((p.u.T * np.exp(p.r)) @ p.u)


def polar_decompose(y):
    """Polar coordinates of ``y``.

    Eigenvalues are returned in descending order, and each eigenvector is
    signed so that its first non-negligible entry is positive (the row
    ``u[i]`` is the i-th eigenvector).
    """
    y = _as_spd(y)
    w, v = y.eigh()
    order = np.argsort(w)[::-1]
    w, v = w[order], v[:, order].copy()
    for j in range(v.shape[1]):
        col = v[:, j]
        k = np.flatnonzero(np.abs(col) > 1e-12)[0]
        if col[k] < 0:
            v[:, j] = -col
    return PolarCoordinates(np.log(w), v.T)


def identity_basis(m):
    """Orthonormal basis of symmetric matrices for the trace inner product."""
    basis = []
    for i in range(m):
        e = np.zeros((m, m))
        e[i, i] = 1.0
        basis.append(e)
    for i in range(m):
        for j in range(i + 1, m):
            e = np.zeros((m, m))
            e[i, j] = e[j, i] = 1.0 / np.sqrt(2.0)
            basis.append(e)
    return np.array(basis)


def tangent_basis(y):
    """Orthonormal basis of the tangent space at ``y`` (``p = m(m+1)/2`` vectors).

    Obtained by transporting the trace-orthonormal basis at the identity with
    ``E -> Y^{1/2} E Y^{1/2}``.
    """
    y = _as_spd(y)
    sq = y.sqrt()
    vecs = tuple(TangentVector(y, sq @ e @ sq) for e in identity_basis(y.dim))
    return TangentBasis(y, vecs)


def whitened_components(lw):
    """Basis coordinates of whitened logarithms ``L`` (shape ``(..., m, m)``).

    For ``L = log(Y^{-1/2} Z Y^{-1/2})`` these equal ``<Log_Y(Z), e_a>_Y`` in
    the basis returned by :func:`tangent_basis`.
    """
    m = lw.shape[-1]
    iu = np.triu_indices(m, k=1)
    diag = np.diagonal(lw, axis1=-2, axis2=-1)
    off = np.sqrt(2.0) * lw[..., iu[0], iu[1]]
    return np.concatenate([diag, off], axis=-1)


def points_dim(points: Sequence) -> int:
    return as_stack(points).shape[-1]
