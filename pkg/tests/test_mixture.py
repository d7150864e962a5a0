import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_invertible, random_spd
from spdgauss.errors import EmptyComponent, EmptyInput
from spdgauss.estimator import GaussianParams, fit_gaussian, least_dispersion_point, log_density
from spdgauss.manifold import congruence, rao_distance
from spdgauss.mixture import (
    Component,
    EmOptions,
    MixtureModel,
    Responsibilities,
    e_step,
    em_fit,
    init_model,
    m_step,
    mixture_log_likelihood,
)
from spdgauss.sampler import sample_gaussian_array

FAR = np.diag([math.e**3, math.e**-3])


def planted(seed, n=1000, sigma=0.3):
    rng = np.random.default_rng(seed)
    k = rng.binomial(n, 0.5)
    a = sample_gaussian_array(np.eye(2), sigma, k, rng=rng)
    b = sample_gaussian_array(FAR, sigma, n - k, rng=rng)
    return np.concatenate([a, b]), k


def two_component(w=(0.5, 0.5), sigmas=(0.3, 0.3)):
    return MixtureModel.from_arrays(w, [np.eye(2), FAR], sigmas)


# model type


def test_model_invariants():
    with pytest.raises(ValueError):
        MixtureModel.from_arrays([0.6, 0.6], [np.eye(2), np.eye(2)], [1.0, 1.0])
    with pytest.raises(ValueError):
        MixtureModel.from_arrays([1.0, 0.0], [np.eye(2), np.eye(2)], [1.0, 1.0])
    with pytest.raises(Exception):
        MixtureModel.from_arrays([0.5, 0.5], [np.eye(2), np.eye(3)], [1.0, 1.0])
    with pytest.raises(ValueError):
        EmOptions(ll_rel_tol=0.0)
    with pytest.raises(ValueError):
        EmOptions(init="kmeans")


# E-step


def test_e_step_single_component(table2):
    x, _ = planted(0, 50)
    r = e_step(x, MixtureModel.from_arrays([1.0], [np.eye(2)], [0.5]), table2)
    assert np.all(r.matrix == 1.0)


def test_e_step_identical_components(table2):
    x, _ = planted(1, 50)
    model = MixtureModel.from_arrays([0.3, 0.7], [np.eye(2), np.eye(2)], [0.5, 0.5])
    r = e_step(x, model, table2)
    np.testing.assert_allclose(r.matrix, np.tile([0.3, 0.7], (50, 1)), atol=1e-12)


def test_e_step_separated_point(table2):
    model = two_component()
    r = e_step(np.eye(2)[None], model, table2).matrix[0]
    # bound from the parameters: log-odds = d^2 / (2 sigma^2) with equal weights and sigmas
    d = rao_distance(np.eye(2), FAR)
    bound = 1.0 / (1.0 + math.exp(-(d * d) / (2 * 0.3**2)))
    assert r[0] >= 0.999 and r[0] == pytest.approx(bound, abs=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_responsibility_rows_sum_to_one(seed):
    from spdgauss.normalization import build_table

    rng = np.random.default_rng(seed)
    table = build_table(2)
    x = sample_gaussian_array(random_spd(rng, 2), 1.5, 40, rng=rng)
    w = rng.dirichlet(np.ones(3))
    model = MixtureModel.from_arrays(w / w.sum(), [random_spd(rng, 2) for _ in range(3)], rng.uniform(0.06, 2.0, 3))
    r = e_step(x, model, table).matrix
    assert np.all(np.isfinite(r))
    np.testing.assert_allclose(r.sum(axis=1), 1.0, atol=1e-12)
    assert r.sum() == pytest.approx(40, abs=1e-9)


# M-step


def test_m_step_single_component_is_mle(table2):
    x, _ = planted(2, 200)
    x = x[:120]
    model = m_step(x, Responsibilities(np.ones((120, 1))), table2)
    p = fit_gaussian(x, table2)
    assert np.array_equal(model.means[0], p.mean.values)
    assert model.sigmas[0] == p.sigma
    assert model.weights[0] == 1.0


def test_m_step_hard_assignments(table2):
    x, k = planted(3, 300)
    r = np.zeros((300, 2))
    r[:k, 0] = 1.0
    r[k:, 1] = 1.0
    model = m_step(x, Responsibilities(r), table2)
    for j, part in enumerate([x[:k], x[k:]]):
        p = fit_gaussian(part, table2)
        assert rao_distance(model.means[j], p.mean) <= 1e-9
        assert model.sigmas[j] == pytest.approx(p.sigma, rel=1e-9)
    assert model.weights == pytest.approx([k / 300, 1 - k / 300], abs=1e-15)
    assert abs(model.weights.sum() - 1.0) <= 1e-15


def test_m_step_empty_component(table2):
    x, _ = planted(4, 50)
    r = np.zeros((50, 2))
    r[:, 0] = 1.0
    with pytest.raises(EmptyComponent) as info:
        m_step(x, Responsibilities(r), table2)
    assert info.value.components == (1,)


def test_m_step_sigma_floor_and_table_clamp(table2):
    # nearly coincident points: dispersion below the table, sigma clamps to the table minimum
    y = np.eye(2)
    x = np.stack([y, y * (1 + 1e-6), y * (1 - 1e-6)])
    model = m_step(x, Responsibilities(np.ones((3, 1))), table2, EmOptions(sigma_floor=1e-3))
    assert model.sigmas[0] == table2.sigma_min
    model = m_step(x, Responsibilities(np.ones((3, 1))), table2, EmOptions(sigma_floor=0.2))
    assert model.sigmas[0] == 0.2


# likelihood


def test_log_likelihood_single_component(table2):
    x, _ = planted(5, 30)
    p = GaussianParams(np.eye(2), 0.8)
    ll = mixture_log_likelihood(x, MixtureModel((Component(1.0, p),)), table2)
    assert ll == pytest.approx(sum(log_density(xi, p, table2) for xi in x), rel=1e-12)


def test_log_likelihood_duplicate_component(table2):
    x, _ = planted(6, 100)
    a = two_component((0.4, 0.6), (0.3, 0.5))
    c0, c1 = a.components
    b = MixtureModel((Component(0.2, c0.params), Component(0.2, c0.params), c1))
    assert mixture_log_likelihood(x, b, table2) == pytest.approx(mixture_log_likelihood(x, a, table2), abs=1e-10)


def test_log_likelihood_prefers_planted_model(table2):
    x, _ = planted(7, 2000)
    good = mixture_log_likelihood(x, two_component(), table2)
    bad = mixture_log_likelihood(x, two_component(sigmas=(0.6, 0.6)), table2)
    assert good > bad


# initialisation


def test_init_single_component(table2):
    x, _ = planted(8, 60)
    model = init_model(x, 1, "farthest-point", table2)
    assert model.weights[0] == 1.0
    np.testing.assert_array_equal(model.means[0], x[least_dispersion_point(x)])


def test_init_saturation(table2):
    x, _ = planted(9, 12)
    model = init_model(x, 12, "farthest-point", table2)
    assert sorted(map(tuple, model.means.reshape(12, -1))) == sorted(map(tuple, x.reshape(12, -1)))


def test_init_farthest_point_separates_clusters(table2):
    x, _ = planted(10, 400)
    model = init_model(x, 2, "farthest-point", table2)
    near = sorted(min(rao_distance(mu, c) for c in (np.eye(2), FAR)) for mu in model.means)
    assert near[-1] < 1.5
    assert rao_distance(model.means[0], model.means[1]) > 3.0


def test_init_random_is_seeded(table2):
    x, _ = planted(11, 100)
    a = init_model(x, 3, "random", table2, np.random.default_rng(1))
    b = init_model(x, 3, "random", table2, np.random.default_rng(1))
    np.testing.assert_array_equal(a.means, b.means)
    np.testing.assert_allclose(a.weights, 1 / 3)


def test_init_errors(table2):
    x, _ = planted(12, 5)
    with pytest.raises(EmptyInput):
        init_model(x, 6, "farthest-point", table2)
    with pytest.raises(EmptyInput):
        em_fit(x[:0], 1, table2)


# EM


def test_em_recovers_planted_mixture(table2):
    x, k = planted(13)
    res = em_fit(x, 2, table2)
    order = np.argsort([rao_distance(mu, np.eye(2)) for mu in res.model.means])
    w, s, mu = res.model.weights[order], res.model.sigmas[order], res.model.means[order]
    assert w == pytest.approx([0.5, 0.5], abs=0.05)
    assert rao_distance(mu[0], np.eye(2)) <= 0.15 and rao_distance(mu[1], FAR) <= 0.15
    assert s == pytest.approx([0.3, 0.3], rel=0.2)
    assert res.converged


def test_em_single_component_equals_fit(table2):
    x, _ = planted(14, 300)
    res = em_fit(x, 1, table2)
    p = fit_gaussian(x, table2)
    assert np.array_equal(res.model.means[0], p.mean.values)
    assert res.model.sigmas[0] == p.sigma
    model, trace = res
    assert trace[-1] == trace[-2]


@settings(max_examples=15)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["farthest-point", "random"]), st.integers(2, 4))
def test_em_trace_monotone(seed, init, M):
    from spdgauss.normalization import build_table

    table = build_table(2)
    rng = np.random.default_rng(seed)
    x = np.concatenate([sample_gaussian_array(random_spd(rng, 2), 0.5, 60, rng=rng) for _ in range(3)])
    res = em_fit(x, M, table, EmOptions(init=init, seed=seed))
    steps = np.diff(res.trace)
    skip = set(res.reinitialised)
    assert all(d >= -1e-9 for i, d in enumerate(steps, start=1) if i not in skip)
    assert abs(res.model.weights.sum() - 1.0) <= 1e-12
    assert np.all((res.model.weights > 0) & (res.model.weights < 1))


def test_em_reinitialises_empty_component(table2):
    x, _ = planted(15, 200)
    lost = np.diag([1e4, 1e-4])
    start = MixtureModel.from_arrays([0.5, 0.49, 0.01], [np.eye(2), FAR, lost], [0.3, 0.3, 0.06])
    res = em_fit(x, 3, table2, initial=start)
    assert res.reinitialised and res.reinitialised[0] == 1
    assert res.model.n_components == 3
    assert all(rao_distance(mu, lost) > 5 for mu in res.model.means)


def test_em_label_permutation(table2):
    x, _ = planted(16, 300)
    start = init_model(x, 2, "farthest-point", table2)
    flipped = MixtureModel(start.components[::-1])
    a = em_fit(x, 2, table2, initial=start).model
    b = em_fit(x, 2, table2, initial=flipped).model
    np.testing.assert_allclose(a.weights, b.weights[::-1], rtol=1e-9)
    np.testing.assert_allclose(a.sigmas, b.sigmas[::-1], rtol=1e-9)
    for i in range(2):
        assert rao_distance(a.means[i], b.means[1 - i]) <= 1e-8


def test_em_congruence_equivariance(table2):
    rng = np.random.default_rng(17)
    x, _ = planted(17, 300)
    a = random_invertible(rng, 2)
    xa = np.stack([congruence(xi, a).values for xi in x])
    start = init_model(x, 2, "farthest-point", table2)
    start_a = MixtureModel.from_arrays(start.weights, [congruence(mu, a).values for mu in start.means], start.sigmas)
    r = em_fit(x, 2, table2, initial=start).model
    ra = em_fit(xa, 2, table2, initial=start_a).model
    np.testing.assert_allclose(ra.weights, r.weights, atol=1e-6)
    np.testing.assert_allclose(ra.sigmas, r.sigmas, atol=1e-6)
    for mu, mua in zip(r.means, ra.means):
        assert rao_distance(congruence(mu, a), mua) <= 1e-6
