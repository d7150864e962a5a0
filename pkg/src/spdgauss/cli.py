"""Command-line interface."""

import functools
import json
import logging
import sys

import click
import numpy as np

from . import io
from .classifier import ClusterModel, WishartClusterModel, evaluate, predict, train
from .errors import NonMonotoneTable, ImpreciseTable, SpdGaussError
from .estimator import MeanSolverOptions, fit_gaussian
from .manifold import validate_spd
from .mixture import INIT_STRATEGIES, EmOptions, MixtureModel, em_fit
from .normalization import DEFAULT_GRID_SIZE, DEFAULT_MC_SAMPLES, build_table, load_table, save_table
from .sampler import SamplerConfig, sample_gaussian_array

logger = logging.getLogger("spdgauss")

DEFAULT_SEED = 0

EXIT_CODES = """\b
Exit codes:
   0  success
   1  unexpected error
   2  usage error (bad flag or argument)
   3  invalid matrix or parameter (not SPD, sigma <= 0, ...)
   4  dimension mismatch between files
   5  dispersion outside the zeta table (or degenerate)
   6  zeta table not monotone or too imprecise
   7  iteration cap reached
   8  empty input
   9  empty mixture component
  10  unknown class label
  11  malformed file
"""


class _Settings:
    def __init__(self, seed=None, zeta_table=None, out=None, quiet=False):
        self.seed = seed
        self.zeta_table = zeta_table
        self.out = out
        self.quiet = quiet

    def merged(self, seed, zeta_table, out, quiet):
        return _Settings(
            seed if seed is not None else self.seed,
            zeta_table if zeta_table is not None else self.zeta_table,
            out if out is not None else self.out,
            quiet or self.quiet,
        )


def _global_options(f):
    f = click.option("--quiet", "-q", is_flag=True, default=False, help="Suppress the human-readable summary.")(f)
    f = click.option("--out", "-o", type=click.Path(dir_okay=False), default=None, help="Output file.")(f)
    f = click.option(
        "--zeta-table",
        type=click.Path(exists=True, dir_okay=False),
        default=None,
        help="Normalising-factor table (built on the fly if omitted).",
    )(f)
    f = click.option("--seed", type=int, default=None, help=f"RNG seed (default {DEFAULT_SEED}).")(f)
    return f


def _command(name, **kw):
    """Subcommand decorator: merges global flags and maps errors to exit codes."""

    def deco(f):
        @cli.command(name, epilog=EXIT_CODES, **kw)
        @_global_options
        @click.pass_obj
        @functools.wraps(f)
        def wrapper(settings, seed, zeta_table, out, quiet, **kwargs):
            s = (settings or _Settings()).merged(seed, zeta_table, out, quiet)
            if s.seed is None:
                s.seed = DEFAULT_SEED
            logging.basicConfig(level=logging.WARNING if s.quiet else logging.INFO, format="%(message)s")
            try:
                f(s, **kwargs)
            except (NonMonotoneTable, ImpreciseTable) as exc:
                click.echo(f"error: {exc}", err=True)
                click.echo("hint: increase --mc or narrow --sigma", err=True)
                sys.exit(exc.exit_code)
            except SpdGaussError as exc:
                click.echo(f"error: {exc}", err=True)
                sys.exit(exc.exit_code)

        return wrapper

    return deco


@click.group(epilog=EXIT_CODES)
@_global_options
@click.pass_context
def cli(ctx, seed, zeta_table, out, quiet):
    """Sample, fit, cluster and classify SPD matrices with affine-invariant Gaussian models."""
    ctx.obj = _Settings(seed, zeta_table, out, quiet)


def _summary(s, text):
    if not s.quiet:
        click.echo(text, err=s.out is None)


def _emit_json(s, obj):
    if s.out is None:
        click.echo(json.dumps(obj, indent=2))
    else:
        io.write_json(s.out, obj)


def _table_for(s, m):
    if s.zeta_table is not None:
        return load_table(s.zeta_table, expected_dim=m)
    logger.info("no --zeta-table given, building one for m=%d (seed %d)", m, s.seed)
    return build_table(m, seed=s.seed)


def _parse_range(text):
    try:
        a, b = (float(v) for v in text.split(":"))
    except ValueError:
        raise click.BadParameter("expected 'min:max', e.g. 0.05:3.0") from None
    if not 0 < a < b:
        raise click.BadParameter("need 0 < min < max")
    return a, b


def _parse_matrix(text):
    try:
        a = np.array(json.loads(text), dtype=float)
    except (json.JSONDecodeError, ValueError, TypeError):
        raise click.BadParameter("expected a JSON nested list, e.g. [[1,0],[0,1]]") from None
    return validate_spd(a).values


def _load_points(paths, expected_m=None):
    sets = []
    m = expected_m
    for p in paths:
        ds = io.read_dataset(p, expected_m=m)
        m = ds.m
        sets.append(ds)
    mats = np.concatenate([d.matrices for d in sets]) if sets else np.empty((0, m or 0, m or 0))
    labels = [lab for d in sets for lab in d.labels]
    return m, mats, labels


def _em_options(s, max_iters, tol, init, sigma_floor):
    return EmOptions(
        max_iters=max_iters,
        ll_rel_tol=tol,
        init=init,
        seed=s.seed,
        mean_solver=MeanSolverOptions(),
        sigma_floor=sigma_floor,
    )


def _em_flags(f):
    f = click.option("--sigma-floor", type=float, default=1e-3, show_default=True)(f)
    f = click.option("--init", type=click.Choice(INIT_STRATEGIES), default="farthest-point", show_default=True)(f)
    f = click.option("--tol", type=float, default=1e-6, show_default=True, help="Relative log-likelihood tolerance.")(f)
    f = click.option("--max-iters", type=click.IntRange(min=0), default=200, show_default=True)(f)
    return f


@_command("zeta-table")
@click.option("--m", "m", type=click.IntRange(min=1), required=True, help="Matrix dimension.")
@click.option("--sigma", "sigma_range", default="0.05:3.0", show_default=True, help="Range min:max.")
@click.option("--grid", type=click.IntRange(min=4), default=DEFAULT_GRID_SIZE, show_default=True)
@click.option("--mc", "mc", type=click.IntRange(min=1), default=DEFAULT_MC_SAMPLES, show_default=True)
@click.option(
    "--method",
    type=click.Choice(["auto", "mc"]),
    default="auto",
    show_default=True,
    help="'auto' uses closed forms for m <= 2.",
)
def zeta_table_cmd(s, m, sigma_range, grid, mc, method):
    """Tabulate log zeta(sigma) and its derivative."""
    lo, hi = _parse_range(sigma_range)
    if s.out is None:
        raise click.UsageError("zeta-table needs --out")
    table = build_table(m, (lo, hi), grid, mc, s.seed, method=method)
    save_table(table, s.out)
    err = float(np.max(table.rel_std_error)) if table.rel_std_error is not None else 0.0
    _summary(
        s,
        f"m={m}: {table.sigma_grid.size} grid points on [{table.sigma_min:g}, {table.sigma_max:g}], "
        f"max relative std error {err:.3g}",
    )


def _sample_from_model(model, n, config, rng):
    """Component draws in index order after a multinomial split of ``n``."""
    if isinstance(model, MixtureModel):
        parts = [(None, c.weight, c.params) for c in model.components]
    else:
        parts = [(c.label, c.weight, c.params) for c in model.clusters]
    counts = rng.multinomial(n, [p[1] for p in parts])
    mats, labels = [], []
    for (lab, _, params), k in zip(parts, counts):
        mats.append(sample_gaussian_array(params.mean.values, params.sigma, int(k), config, rng))
        labels += [lab] * int(k)
    return np.concatenate(mats), labels


@_command("sample")
@click.option("--n", "n", type=click.IntRange(min=0), required=True, help="Number of draws.")
@click.option("--mean", "mean", default=None, help="Centre as JSON, e.g. '[[1,0],[0,1]]'.")
@click.option("--sigma", type=float, default=None)
@click.option("--params", "params_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Mixture or cluster model file to sample from instead of --mean/--sigma.")
@click.option("--label", default=None, help="Label attached to every record.")
@click.option("--mh-step", type=float, default=None)
@click.option("--burn-in", type=click.IntRange(min=0), default=2000, show_default=True)
@click.option("--thinning", type=click.IntRange(min=1), default=5, show_default=True)
def sample_cmd(s, n, mean, sigma, params_path, label, mh_step, burn_in, thinning):
    """Draw a JSON-lines dataset from G(mean, sigma) or from a model file."""
    if s.out is None:
        raise click.UsageError("sample needs --out")
    config = SamplerConfig(mh_step=mh_step, burn_in=burn_in, thinning=thinning)
    rng = np.random.default_rng(s.seed)
    if params_path is not None:
        if mean is not None or sigma is not None:
            raise click.UsageError("use either --params or --mean/--sigma")
        model = io.read_model(params_path)
        if isinstance(model, WishartClusterModel):
            raise click.UsageError("cannot sample from a Wishart model")
        m = model.dim
        mats, labels = _sample_from_model(model, n, config, rng)
        if label is not None:
            labels = [label] * n
    else:
        if mean is None or sigma is None:
            raise click.UsageError("give --mean and --sigma, or --params")
        mu = _parse_matrix(mean)
        m = mu.shape[0]
        mats = sample_gaussian_array(mu, sigma, n, config, rng)
        labels = [label] * n
    io.write_dataset(s.out, mats, labels, m=m, seed=s.seed)
    _summary(s, f"wrote {n} samples (m={m}) to {s.out}")


def _model_summary(model):
    lines = []
    for i, c in enumerate(model.components):
        lines.append(f"  component {i}: weight {c.weight:.4f}  sigma {c.params.sigma:.5g}")
    return "\n".join(lines)


@_command("fit")
@click.argument("dataset", type=click.Path(exists=True, dir_okay=False))
def fit_cmd(s, dataset):
    """Maximum-likelihood fit of a single Gaussian (one-component mixture file)."""
    m, x, _ = _load_points([dataset])
    table = _table_for(s, m)
    params = fit_gaussian(x, table)
    model = MixtureModel.from_arrays([1.0], [params.mean.values], [params.sigma])
    _emit_json(s, io.mixture_to_dict(model, seed=s.seed))
    _summary(s, f"fit {len(x)} points (m={m})\n" + _model_summary(model))


@_command("em")
@click.argument("dataset", type=click.Path(exists=True, dir_okay=False))
@click.option("--components", "-k", type=click.IntRange(min=1), required=True)
@_em_flags
def em_cmd(s, dataset, components, max_iters, tol, init, sigma_floor):
    """Fit a mixture by expectation-maximisation."""
    m, x, _ = _load_points([dataset])
    table = _table_for(s, m)
    res = em_fit(x, components, table, _em_options(s, max_iters, tol, init, sigma_floor))
    _emit_json(s, io.mixture_to_dict(res.model, seed=s.seed))
    _summary(
        s,
        f"EM: {res.iterations} iterations, converged={res.converged}, "
        f"log-likelihood {res.trace[-1]:.10g}\n" + _model_summary(res.model),
    )


@_command("train")
@click.argument("datasets", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--components", "-k", type=click.IntRange(min=1), required=True, help="Clusters per class.")
@_em_flags
def train_cmd(s, datasets, components, max_iters, tol, init, sigma_floor):
    """Train a per-class mixture classifier from labelled datasets."""
    m, x, labels = _load_points(datasets)
    if any(lab is None for lab in labels):
        raise click.UsageError("every training record needs a label")
    table = _table_for(s, m)
    classes = {}
    for y, lab in zip(x, labels):
        classes.setdefault(lab, []).append(y)
    classes = {k: np.stack(v) for k, v in classes.items()}
    model = train(classes, components, table, _em_options(s, max_iters, tol, init, sigma_floor))
    _emit_json(s, io.clusters_to_dict(model, seed=s.seed))
    _summary(s, f"trained {len(model.clusters)} clusters over classes {list(model.labels)}")


def _classification_inputs(s, model_path, dataset, rule):
    model = io.read_model(model_path)
    if isinstance(model, MixtureModel):
        raise click.UsageError("classification needs a cluster or Wishart model")
    if rule == "wishart" and not isinstance(model, WishartClusterModel):
        raise click.UsageError("--rule wishart needs a Wishart model file")
    if rule != "wishart" and not isinstance(model, ClusterModel):
        raise click.UsageError(f"--rule {rule} needs a cluster model file")
    m, x, labels = _load_points([dataset], expected_m=model.dim)
    table = _table_for(s, m) if rule == "gaussian" else None
    return model, x, labels, table


_rule_option = click.option(
    "--rule", type=click.Choice(["gaussian", "nn", "wishart"]), default="gaussian", show_default=True
)


@_command("classify")
@click.argument("model_path", metavar="MODEL", type=click.Path(exists=True, dir_okay=False))
@click.argument("dataset", type=click.Path(exists=True, dir_okay=False))
@_rule_option
def classify_cmd(s, model_path, dataset, rule):
    """Assign each record of DATASET to a cluster and class."""
    model, x, _, table = _classification_inputs(s, model_path, dataset, rule)
    idx = predict(x, rule, model, table) if len(x) else []
    preds = [{"index": i, "label": model.clusters[k].label, "cluster": int(k)} for i, k in enumerate(idx)]
    _emit_json(s, {"rule": rule, "m": model.dim, "predictions": preds})
    _summary(s, f"classified {len(preds)} points with the {rule} rule")


@_command("eval")
@click.argument("model_path", metavar="MODEL", type=click.Path(exists=True, dir_okay=False))
@click.argument("dataset", type=click.Path(exists=True, dir_okay=False))
@_rule_option
def eval_cmd(s, model_path, dataset, rule):
    """Confusion matrix and overall accuracy on a labelled dataset."""
    model, x, labels, table = _classification_inputs(s, model_path, dataset, rule)
    report = evaluate(list(zip(x, labels)), rule, model, table)
    _emit_json(s, io.report_to_dict(report, rule))
    _summary(s, f"overall accuracy ({rule}): {report.overall_accuracy:.4f} on {report.total} points")


def main():
    cli(prog_name="spdgauss")


if __name__ == "__main__":
    main()
