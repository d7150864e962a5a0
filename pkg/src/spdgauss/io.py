"""File formats: JSON-lines datasets and JSON model documents.

Every file carries a format tag, a version and the matrix dimension ``m``;
readers check these before any record is used. Floats are written with
``repr`` precision so reloading is bit-exact.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .classifier import Cluster, ClusterModel, WishartCluster, WishartClusterModel
from .errors import DimensionMismatch, FormatError, SpdGaussError
from .estimator import GaussianParams
from .manifold import validate_spd
from .mixture import Component, MixtureModel

__all__ = [
    "Dataset",
    "write_dataset",
    "read_dataset",
    "mixture_to_dict",
    "mixture_from_dict",
    "clusters_to_dict",
    "clusters_from_dict",
    "wishart_to_dict",
    "wishart_from_dict",
    "report_to_dict",
    "write_json",
    "read_json",
    "read_model",
]

DATASET_FORMAT = "spdgauss-dataset"
MIXTURE_FORMAT = "spdgauss-mixture"
CLUSTERS_FORMAT = "spdgauss-clusters"
WISHART_FORMAT = "spdgauss-wishart"
VERSION = 1


@dataclass
class Dataset:
    m: int
    matrices: np.ndarray
    labels: list
    header: dict = field(default_factory=dict)

    def __len__(self):
        return self.matrices.shape[0]

    def by_label(self):
        """Matrices grouped by label, in order of first appearance."""
        groups = {}
        for y, lab in zip(self.matrices, self.labels):
            groups.setdefault(lab, []).append(y)
        return {k: np.stack(v) for k, v in groups.items()}


def _matrix_list(a):
    return [[float(v) for v in row] for row in np.asarray(a, dtype=float)]


def write_dataset(path, matrices, labels=None, m=None, **meta):
    """Write a JSON-lines dataset; ``meta`` entries (e.g. ``seed``) go in the header."""
    mats = np.asarray(matrices, dtype=float)
    if mats.size == 0:
        if m is None:
            raise ValueError("m is required for an empty dataset")
        mats = np.empty((0, m, m))
    m = mats.shape[-1] if m is None else int(m)
    if mats.shape[1:] != (m, m):
        raise DimensionMismatch(f"matrices have shape {mats.shape[1:]}, expected ({m}, {m})")
    if labels is not None and len(labels) != mats.shape[0]:
        raise ValueError("labels and matrices differ in length")
    header = {"format": DATASET_FORMAT, "version": VERSION, "m": m}
    header.update({k: v for k, v in meta.items() if v is not None})
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for i, y in enumerate(mats):
            rec = {"matrix": _matrix_list(y)}
            if labels is not None and labels[i] is not None:
                rec["label"] = str(labels[i])
            fh.write(json.dumps(rec) + "\n")


def _check_header(obj, fmt, where):
    if not isinstance(obj, dict) or obj.get("format") != fmt:
        raise FormatError(f"{where}: expected a {fmt!r} document")
    if obj.get("version") != VERSION:
        raise FormatError(f"{where}: unsupported version {obj.get('version')!r}")
    m = obj.get("m")
    if not isinstance(m, int) or m < 1:
        raise FormatError(f"{where}: header field 'm' must be a positive integer")
    return m


def _check_m(m, expected_m, where):
    if expected_m is not None and m != expected_m:
        raise DimensionMismatch(f"{where}: file has m={m}, expected m={expected_m}")


def read_dataset(path, expected_m=None):
    """Load and validate a dataset.

    Raises
    ------
    FormatError
        Malformed header or record.
    DimensionMismatch
        Header ``m`` differs from ``expected_m``.
    ValidationError
        A matrix is not symmetric positive definite.
    """
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"{path}: empty file, missing dataset header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}:1: invalid JSON ({exc.msg})") from None
    m = _check_header(header, DATASET_FORMAT, str(path))
    _check_m(m, expected_m, str(path))
    mats = np.empty((len(lines) - 1, m, m))
    labels = []
    for i, line in enumerate(lines[1:]):
        where = f"{path}:{i + 2}"
        try:
            rec = json.loads(line)
            a = np.array(rec["matrix"], dtype=float)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{where}: malformed record ({exc})") from None
        if a.shape != (m, m):
            raise FormatError(f"{where}: matrix has shape {a.shape}, header says m={m}")
        try:
            mats[i] = validate_spd(a).values
        except SpdGaussError as exc:
            raise type(exc)(f"{where}: {exc}") from None
        lab = rec.get("label")
        labels.append(None if lab is None else str(lab))
    return Dataset(m, mats, labels, header)


def mixture_to_dict(model, **meta):
    d = {"format": MIXTURE_FORMAT, "version": VERSION, "m": model.dim}
    d.update({k: v for k, v in meta.items() if v is not None})
    d["components"] = [
        {"weight": c.weight, "mean": _matrix_list(c.params.mean.values), "sigma": c.params.sigma}
        for c in model.components
    ]
    return d


def _component_fields(c, where):
    try:
        return float(c["weight"]), np.array(c["mean"], dtype=float), float(c["sigma"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{where}: malformed component ({exc})") from None


def _check_mean(mean, m, where):
    if mean.shape != (m, m):
        raise FormatError(f"{where}: mean has shape {mean.shape}, header says m={m}")


def mixture_from_dict(d, expected_m=None):
    m = _check_header(d, MIXTURE_FORMAT, "mixture model")
    _check_m(m, expected_m, "mixture model")
    comps = []
    for i, c in enumerate(d.get("components") or []):
        w, mean, s = _component_fields(c, f"component {i}")
        _check_mean(mean, m, f"component {i}")
        comps.append(Component(w, GaussianParams(mean, s)))
    return MixtureModel(tuple(comps))


def clusters_to_dict(model, **meta):
    d = {"format": CLUSTERS_FORMAT, "version": VERSION, "m": model.dim}
    d.update({k: v for k, v in meta.items() if v is not None})
    d["components"] = [
        {
            "label": c.label,
            "weight": c.weight,
            "mean": _matrix_list(c.params.mean.values),
            "sigma": c.params.sigma,
        }
        for c in model.clusters
    ]
    return d


def clusters_from_dict(d, expected_m=None):
    m = _check_header(d, CLUSTERS_FORMAT, "cluster model")
    _check_m(m, expected_m, "cluster model")
    out = []
    for i, c in enumerate(d.get("components") or []):
        w, mean, s = _component_fields(c, f"cluster {i}")
        _check_mean(mean, m, f"cluster {i}")
        if "label" not in c:
            raise FormatError(f"cluster {i}: missing label")
        out.append(Cluster(str(c["label"]), w, GaussianParams(mean, s)))
    return ClusterModel(tuple(out))


def wishart_to_dict(model):
    return {
        "format": WISHART_FORMAT,
        "version": VERSION,
        "m": model.dim,
        "clusters": [
            {"label": c.label, "weight": c.weight, "scale": _matrix_list(c.scale.values), "dof": c.dof}
            for c in model.clusters
        ],
    }


def wishart_from_dict(d, expected_m=None):
    """Wishart model; ``format``, ``version`` and ``m`` are optional here."""
    if not isinstance(d, dict) or not isinstance(d.get("clusters"), list):
        raise FormatError("Wishart model: missing 'clusters' list")
    out = []
    for i, c in enumerate(d["clusters"]):
        try:
            out.append(
                WishartCluster(str(c["label"]), float(c["weight"]), np.array(c["scale"], dtype=float), float(c["dof"]))
            )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"Wishart cluster {i}: malformed ({exc})") from None
    model = WishartClusterModel(tuple(out))
    if "m" in d and d["m"] != model.dim:
        raise FormatError(f"Wishart model: header m={d['m']} but scales have m={model.dim}")
    _check_m(model.dim, expected_m, "Wishart model")
    return model


def report_to_dict(report, rule):
    return {
        "rule": rule,
        "labels": list(report.labels),
        "confusion": report.confusion.tolist(),
        "total": report.total,
        "overall_accuracy": report.overall_accuracy,
    }


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(obj, indent=2) + "\n")


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc.msg})") from None


def read_model(path, expected_m=None):
    """Load any model document, dispatching on its ``format`` tag."""
    d = read_json(path)
    fmt = d.get("format") if isinstance(d, dict) else None
    if fmt == MIXTURE_FORMAT:
        return mixture_from_dict(d, expected_m)
    if fmt == CLUSTERS_FORMAT:
        return clusters_from_dict(d, expected_m)
    if fmt == WISHART_FORMAT or (fmt is None and isinstance(d, dict) and "clusters" in d):
        return wishart_from_dict(d, expected_m)
    raise FormatError(f"{path}: unknown model format {fmt!r}")
