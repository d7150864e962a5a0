import json
import math

import numpy as np
import pytest
from click.testing import CliRunner

from spdgauss.cli import cli
from spdgauss.io import read_dataset, write_dataset
from spdgauss.normalization import build_table, load_table, zeta_analytic_m2


def run(args, code=0):
    res = CliRunner().invoke(cli, [str(a) for a in args])
    assert res.exit_code == code, res.output
    return res


@pytest.fixture(scope="module")
def tables(tmp_path_factory):
    d = tmp_path_factory.mktemp("tables")
    for m in (2, 3):
        run(["--seed", 1, "zeta-table", "--m", m, "--mc", 100_000, "--out", d / f"z{m}.csv"])
    return d


def test_help_lists_exit_codes():
    out = run(["--help"]).output
    assert "Exit codes" in out and "dispersion outside the zeta table" in out
    assert "Exit codes" in run(["em", "--help"]).output


def test_zeta_table_is_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        run(["zeta-table", "--m", 3, "--mc", 20_000, "--grid", 16, "--seed", 4, "--out", p])
    assert a.read_bytes() == b.read_bytes()
    assert "seed=4" in a.read_text().splitlines()[0]


def test_zeta_table_m2(tmp_path, tables):
    t = load_table(tables / "z2.csv", expected_dim=2)
    np.testing.assert_allclose(np.exp(t.log_zeta), [zeta_analytic_m2(s) for s in t.sigma_grid], rtol=1e-12)
    # the Monte Carlo route estimates the general integral, sqrt(pi) times the closed form
    p = tmp_path / "mc.csv"
    run(["zeta-table", "--m", 2, "--mc", 100_000, "--grid", 12, "--method", "mc", "--out", p])
    mc = load_table(p)
    ref = build_table(2, grid_size=12, mc_samples=100_000, seed=0, method="mc")
    assert np.array_equal(mc.log_zeta, ref.log_zeta)
    expected = [math.sqrt(math.pi) * zeta_analytic_m2(s) for s in mc.sigma_grid]
    rel = np.abs(np.exp(mc.log_zeta) / expected - 1)
    assert np.all(rel <= 3 * ref.rel_std_error)


def test_usage_errors(tmp_path):
    run(["zeta-table", "--m", 0, "--out", tmp_path / "z.csv"], code=2)
    run(["zeta-table", "--m", 2, "--sigma", "3:1", "--out", tmp_path / "z.csv"], code=2)
    run(["zeta-table", "--m", 2], code=2)
    run(["sample", "--n", 5, "--out", tmp_path / "d.jsonl"], code=2)


def test_invalid_mean_exit_code(tmp_path):
    run(["sample", "--n", 3, "--mean", "[[1,2],[2,1]]", "--sigma", 0.5, "--out", tmp_path / "d.jsonl"], code=3)


def test_sample_zero_draws(tmp_path):
    p = tmp_path / "d.jsonl"
    run(["sample", "--n", 0, "--mean", "[[1,0],[0,1]]", "--sigma", 0.5, "--out", p])
    ds = read_dataset(p)
    assert len(ds) == 0 and ds.header["m"] == 2 and ds.header["seed"] == 0


def test_sample_is_reproducible(tmp_path):
    a, b, c = tmp_path / "a.jsonl", tmp_path / "b.jsonl", tmp_path / "c.jsonl"
    for p, seed in ((a, 5), (b, 5), (c, 6)):
        run(["--seed", seed, "sample", "--n", 50, "--mean", "[[2,0.3],[0.3,1]]", "--sigma", 0.4, "--out", p])
    assert a.read_bytes() == b.read_bytes() != c.read_bytes()


def test_sample_log_det_variance(tmp_path):
    p = tmp_path / "d.jsonl"
    run(["--seed", 2, "sample", "--n", 4000, "--mean", "[[1,0,0],[0,1,0],[0,0,1]]", "--sigma", 0.4, "--out", p])
    t = np.linalg.slogdet(read_dataset(p).matrices)[1]
    assert t.var(ddof=1) == pytest.approx(3 * 0.4**2, rel=0.1)


def test_fit_and_em_single_component_agree(tmp_path, tables):
    d = tmp_path / "d.jsonl"
    run(["--seed", 3, "sample", "--n", 300, "--mean", "[[2,0.3],[0.3,1]]", "--sigma", 0.5, "--out", d])
    z = tables / "z2.csv"
    fit = run(["--zeta-table", z, "fit", d, "-q"]).output
    em = run(["--zeta-table", z, "em", d, "-k", 1, "-q"]).output
    assert fit == em
    model = json.loads(fit)
    assert model["format"] == "spdgauss-mixture" and model["seed"] == 0
    assert model["components"][0]["sigma"] == pytest.approx(0.5, rel=0.1)


def test_fit_identical_matrices_is_degenerate(tmp_path, tables):
    d = tmp_path / "d.jsonl"
    write_dataset(d, np.stack([np.eye(2)] * 5))
    res = run(["--zeta-table", tables / "z2.csv", "fit", d], code=5)
    assert "degenerate" in res.output


def test_dimension_mismatch_exit_code(tmp_path, tables):
    d = tmp_path / "d.jsonl"
    write_dataset(d, np.stack([np.eye(3), 2 * np.eye(3)]))
    run(["--zeta-table", tables / "z2.csv", "fit", d], code=4)


def test_malformed_file_exit_code(tmp_path):
    d = tmp_path / "d.jsonl"
    d.write_text("garbage\n")
    run(["fit", d], code=11)


def planted_dataset(path, seed):
    rng = np.random.default_rng(seed)
    far = np.diag([math.e**2, math.e**-2])
    from spdgauss.sampler import sample_gaussian_array

    a = sample_gaussian_array(np.eye(2), 0.3, 150, rng=rng)
    b = sample_gaussian_array(far, 0.3, 150, rng=rng)
    write_dataset(path, np.concatenate([a, b]), ["a"] * 150 + ["b"] * 150, seed=seed)


def test_train_eval_classify_end_to_end(tmp_path, tables):
    train, test = tmp_path / "train.jsonl", tmp_path / "test.jsonl"
    planted_dataset(train, 10)
    planted_dataset(test, 11)
    model = tmp_path / "model.json"
    z = ["--zeta-table", tables / "z2.csv"]
    run([*z, "train", train, "-k", 1, "--out", model, "-q"])
    for rule in ("gaussian", "nn"):
        report = json.loads(run([*z, "eval", model, test, "--rule", rule, "-q"]).output)
        assert report["overall_accuracy"] >= 0.9
        assert report["total"] == 300
    preds = json.loads(run([*z, "classify", model, test, "-q"]).output)["predictions"]
    assert len(preds) == 300 and {p["label"] for p in preds} == {"a", "b"}
    run([*z, "eval", model, test, "--rule", "wishart"], code=2)


def test_eval_unknown_label(tmp_path, tables):
    train, test = tmp_path / "train.jsonl", tmp_path / "test.jsonl"
    planted_dataset(train, 12)
    write_dataset(test, np.eye(2)[None], ["zzz"])
    model = tmp_path / "model.json"
    z = ["--zeta-table", tables / "z2.csv"]
    run([*z, "train", train, "-k", 1, "--out", model, "-q"])
    run([*z, "eval", model, test], code=10)


def test_sample_from_model_file(tmp_path, tables):
    train = tmp_path / "train.jsonl"
    planted_dataset(train, 13)
    model = tmp_path / "model.json"
    run(["--zeta-table", tables / "z2.csv", "train", train, "-k", 1, "--out", model, "-q"])
    d = tmp_path / "d.jsonl"
    run(["sample", "--n", 100, "--params", model, "--out", d])
    ds = read_dataset(d)
    assert len(ds) == 100 and set(ds.labels) <= {"a", "b"}


def test_em_is_reproducible(tmp_path, tables):
    d = tmp_path / "d.jsonl"
    planted_dataset(d, 14)
    z = ["--zeta-table", tables / "z2.csv"]
    a = run([*z, "--seed", 9, "em", d, "-k", 2, "--init", "random", "-q"]).output
    b = run([*z, "--seed", 9, "em", d, "-k", 2, "--init", "random", "-q"]).output
    assert a == b
    assert len(json.loads(a)["components"]) == 2


def test_subcommand_level_global_flags(tmp_path, tables):
    d = tmp_path / "d.jsonl"
    planted_dataset(d, 15)
    a = run(["--zeta-table", tables / "z2.csv", "--seed", 2, "fit", d, "-q"]).output
    b = run(["fit", d, "--zeta-table", tables / "z2.csv", "--seed", 2, "-q"]).output
    assert a == b
