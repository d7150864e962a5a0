"""Supervised classification of SPD data with per-class Gaussian mixtures."""

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DimensionMismatch, EmptyInput, UnknownLabel
from .estimator import GaussianParams
from .manifold import as_stack, sq_dist_batch, validate_spd
from .mixture import EmOptions, em_fit

logger = logging.getLogger(__name__)

__all__ = [
    "Cluster",
    "ClusterModel",
    "WishartCluster",
    "WishartClusterModel",
    "Decision",
    "EvalReport",
    "RULES",
    "train",
    "gaussian_scores",
    "nn_scores",
    "wishart_scores",
    "classify_gaussian",
    "classify_nn",
    "classify_wishart",
    "predict",
    "evaluate",
]

RULES = ("gaussian", "nn", "wishart")


@dataclass(frozen=True)
class Cluster:
    label: str
    weight: float
    params: GaussianParams


def _unique_labels(clusters):
    seen = {}
    for c in clusters:
        seen.setdefault(c.label, None)
    return tuple(seen)


@dataclass(frozen=True)
class ClusterModel:
    """Clusters of all classes with global prior weights summing to one."""

    clusters: tuple

    def __post_init__(self):
        cl = tuple(self.clusters)
        if not cl:
            raise EmptyInput("a cluster model needs at least one cluster")
        w = np.array([c.weight for c in cl], dtype=float)
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("cluster weights must be positive")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"cluster weights sum to {w.sum():.12g}, not 1")
        if len({c.params.dim for c in cl}) != 1:
            raise DimensionMismatch("clusters have different dimensions")
        object.__setattr__(self, "clusters", cl)

    @property
    def dim(self):
        return self.clusters[0].params.dim

    @property
    def labels(self):
        """Distinct class labels in order of first appearance."""
        return _unique_labels(self.clusters)

    @property
    def weights(self):
        return np.array([c.weight for c in self.clusters])

    @property
    def sigmas(self):
        return np.array([c.params.sigma for c in self.clusters])

    @property
    def means(self):
        return np.stack([c.params.mean.values for c in self.clusters])


@dataclass(frozen=True)
class WishartCluster:
    label: str
    weight: float
    scale: object
    dof: float

    def __post_init__(self):
        object.__setattr__(self, "scale", validate_spd(self.scale))
        if not (math.isfinite(self.weight) and self.weight > 0):
            raise ValueError("Wishart cluster weight must be positive")
        if not (math.isfinite(self.dof) and self.dof > 0):
            raise ValueError("Wishart degrees of freedom must be positive")


@dataclass(frozen=True)
class WishartClusterModel:
    """Wishart clusters with caller-supplied scales and degrees of freedom."""

    clusters: tuple

    def __post_init__(self):
        cl = tuple(self.clusters)
        if not cl:
            raise EmptyInput("a cluster model needs at least one cluster")
        if len({c.scale.dim for c in cl}) != 1:
            raise DimensionMismatch("clusters have different dimensions")
        object.__setattr__(self, "clusters", cl)

    @property
    def dim(self):
        return self.clusters[0].scale.dim

    @property
    def labels(self):
        return _unique_labels(self.clusters)


class Decision(NamedTuple):
    label: str
    index: int
    scores: np.ndarray


@dataclass(frozen=True)
class EvalReport:
    """Confusion counts (rows: true class, columns: predicted class)."""

    labels: tuple
    confusion: np.ndarray
    overall_accuracy: float

    @property
    def total(self):
        return int(self.confusion.sum())


def train(classes, m_per_class, table, opts=None, rng=None):
    """Fit one mixture per class and pool the clusters.

    Parameters
    ----------
    classes : mapping label -> sequence of SPD matrices
    m_per_class : int or mapping label -> int
    table : ZetaTable
    opts : EmOptions, optional
    rng : numpy.random.Generator, optional
        Shared by the per-class fits, which run in the mapping's order.

    Returns
    -------
    ClusterModel
        Cluster weight = within-class mixture weight * class size / total size.
    """
    opts = opts or EmOptions()
    if rng is None:
        rng = np.random.default_rng(opts.seed)
    if not classes:
        raise EmptyInput("no classes given")
    sizes = {}
    fits = {}
    for label, pts in classes.items():
        x = as_stack(pts) if len(pts) else np.empty((0, 0, 0))
        if x.shape[0] == 0:
            raise EmptyInput(f"class {label!r} has no training points")
        k = m_per_class[label] if isinstance(m_per_class, dict) else int(m_per_class)
        if k < 1:
            raise ValueError("m_per_class must be >= 1")
        res = em_fit(x, k, table, opts, rng)
        logger.info("class %r: %d clusters, %d EM iterations", label, k, res.iterations)
        sizes[label] = x.shape[0]
        fits[label] = res.model
    total = sum(sizes.values())
    raw = []
    for label, model in fits.items():
        for comp in model.components:
            raw.append((str(label), comp.weight * sizes[label] / total, comp.params))
    wsum = sum(r[1] for r in raw)
    return ClusterModel(tuple(Cluster(lab, w / wsum, p) for lab, w, p in raw))


def _points(y, m):
    x = as_stack([y] if not isinstance(y, np.ndarray) or np.ndim(y) == 2 else y)
    if x.shape[-1] != m:
        raise DimensionMismatch(f"point has m={x.shape[-1]}, model has m={m}")
    return x


def gaussian_scores(x, model, table):
    """``-log w + log zeta(sigma) + d^2 / (2 sigma^2)`` for each point and cluster."""
    if table.dim != model.dim:
        raise DimensionMismatch(f"zeta table is for m={table.dim}, model has m={model.dim}")
    out = np.empty((x.shape[0], len(model.clusters)))
    for k, c in enumerate(model.clusters):
        s = c.params.sigma
        d2 = sq_dist_batch(c.params.mean.values, x)
        out[:, k] = -math.log(c.weight) + table.log_zeta_at(s) + d2 / (2.0 * s * s)
    return out


def nn_scores(x, model):
    """Rao distance from each point to each cluster centre."""
    return np.sqrt(np.stack([sq_dist_batch(c.params.mean.values, x) for c in model.clusters], axis=1))


def wishart_scores(x, model):
    """``-2 log w - n (log det(S^-1 Y) - tr(S^-1 Y))`` for each point and cluster."""
    _, logdet_y = np.linalg.slogdet(x)
    out = np.empty((x.shape[0], len(model.clusters)))
    for k, c in enumerate(model.clusters):
        s = c.scale.values
        _, logdet_s = np.linalg.slogdet(s)
        tr = np.trace(np.linalg.solve(s, x), axis1=-2, axis2=-1)
        out[:, k] = -2.0 * math.log(c.weight) - c.dof * ((logdet_y - logdet_s) - tr)
    return out


def _decide(model, scores):
    k = int(np.argmin(scores))  # first minimum: lowest index wins ties
    return Decision(model.clusters[k].label, k, scores)


def classify_gaussian(y, model, table):
    """Bayes rule for the pooled Gaussian mixture: minimum score wins."""
    return _decide(model, gaussian_scores(_points(y, model.dim), model, table)[0])


def classify_nn(y, model):
    """Nearest cluster centre in Rao distance; weights and dispersions are ignored."""
    return _decide(model, nn_scores(_points(y, model.dim), model)[0])


def classify_wishart(y, model):
    """Bayes rule for a mixture of Wishart clusters."""
    return _decide(model, wishart_scores(_points(y, model.dim), model)[0])


def predict(points, rule, model, table=None):
    """Cluster indices chosen by ``rule`` for a stack of points."""
    if rule not in RULES:
        raise ValueError(f"unknown rule {rule!r}; use one of {RULES}")
    x = _points(points, model.dim)
    if rule == "wishart":
        if not isinstance(model, WishartClusterModel):
            raise TypeError("the wishart rule needs a WishartClusterModel")
        scores = wishart_scores(x, model)
    elif isinstance(model, WishartClusterModel):
        raise TypeError(f"the {rule} rule needs a ClusterModel")
    elif rule == "gaussian":
        if table is None:
            raise ValueError("the gaussian rule needs a zeta table")
        scores = gaussian_scores(x, model, table)
    else:
        scores = nn_scores(x, model)
    return np.argmin(scores, axis=1)


def evaluate(test, rule, model, table=None):
    """Confusion matrix and overall accuracy of ``rule`` on labelled data.

    Parameters
    ----------
    test : sequence of (matrix, label) pairs
    rule : {"gaussian", "nn", "wishart"}

    Raises
    ------
    UnknownLabel
        A true label does not occur in the model.
    """
    labels = model.labels
    index = {lab: i for i, lab in enumerate(labels)}
    test = list(test)
    true = []
    for _, lab in test:
        if lab not in index:
            raise UnknownLabel(f"test label {lab!r} does not occur in the model (labels: {list(labels)})")
        true.append(index[lab])
    conf = np.zeros((len(labels), len(labels)), dtype=int)
    if test:
        clusters = predict(np.stack([np.asarray(validate_spd(y).values) for y, _ in test]), rule, model, table)
        pred = [index[model.clusters[k].label] for k in clusters]
        np.add.at(conf, (np.array(true), np.array(pred)), 1)
    total = conf.sum()
    acc = float(np.trace(conf) / total) if total else float("nan")
    return EvalReport(labels, conf, acc)
