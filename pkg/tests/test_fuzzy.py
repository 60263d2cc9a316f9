import math

import numpy as np
import pytest

from terraclass.errors import DataError
from terraclass.fuzzy import (
    FuzzyConfig,
    fit_fuzzy,
    fuzzy_cardinality,
    fuzzy_classify,
    fuzzy_covariance,
    fuzzy_mean,
    membership_grades,
)
from terraclass.mlc import GaussianClassModel, classify, fit_models
from terraclass.raster import RasterHeader, SceneClass, TrainingSet, generate_synthetic_scene

from conftest import dense_logpdf, random_spd


def weighted_mean_oracle(X, mu, m):
    num = [0.0] * len(X[0])
    den = 0.0
    for x, u in zip(X, mu):
        w = u**m
        den += w
        for j, v in enumerate(x):
            num[j] += w * v
    return np.array(num) / den


def weighted_scatter_oracle(X, mu, V, m):
    d = len(V)
    out = np.zeros((d, d))
    den = 0.0
    for x, u in zip(X, mu):
        w = u**m
        den += w
        e = np.asarray(x) - V
        for i in range(d):
            for j in range(d):
                out[i, j] += w * e[i] * e[j]
    return out / den


def pdf_ratio_oracle(models, x):
    p = [m.prior * math.exp(dense_logpdf(x, m.mean, m.covariance)) for m in models]
    s = sum(p)
    return np.array([v / s for v in p])


# --- fuzzy mean / covariance -----------------------------------------------------


def test_crisp_mean_is_arithmetic_mean(rng):
    X = rng.normal(size=(20, 3))
    np.testing.assert_allclose(fuzzy_mean(X, np.ones(20)), X.mean(axis=0), rtol=1e-12)


def test_indicator_selects_pixel(rng):
    X = rng.normal(size=(6, 2))
    mu = np.zeros(6)
    mu[0] = 1
    np.testing.assert_array_equal(fuzzy_mean(X, mu), X[0])


def test_fuzzy_mean_oracle(rng):
    for _ in range(100):
        X = rng.normal(size=(int(rng.integers(1, 25)), 3))
        mu = rng.uniform(0, 1, len(X))
        m = float(rng.choice([1.0, 1.5, 2.0]))
        np.testing.assert_allclose(fuzzy_mean(X, mu, m), weighted_mean_oracle(X, mu, m), rtol=1e-12, atol=1e-15)


def test_crisp_covariance_is_scatter(rng):
    X = rng.normal(size=(15, 3))
    D = X - X.mean(axis=0)
    V = fuzzy_mean(X, np.ones(15))
    np.testing.assert_allclose(fuzzy_covariance(X, np.ones(15), V), D.T @ D / 15, rtol=1e-12)


def test_single_pixel_scatter_is_zero():
    X = np.array([[1.0, 2.0]])
    assert np.all(fuzzy_covariance(X, [1.0], X[0], regularize=False) == 0)
    reg = fuzzy_covariance(X, [1.0], X[0])
    np.testing.assert_array_equal(reg, 1e-10 * np.eye(2))


def test_fuzzy_covariance_oracle(rng):
    for _ in range(100):
        X = rng.normal(size=(int(rng.integers(5, 25)), 3))
        mu = rng.uniform(0, 1, len(X))
        m = float(rng.choice([1.0, 2.0]))
        V = fuzzy_mean(X, mu, m)
        np.testing.assert_allclose(
            fuzzy_covariance(X, mu, V, m), weighted_scatter_oracle(X, mu, V, m), rtol=1e-12, atol=1e-14
        )


@pytest.mark.parametrize(
    "X,mu",
    [([[1.0], [2.0]], [0.0, 0.0]), ([[1.0], [2.0]], [1.0]), ([[1.0]], [1.5])],
)
def test_weight_errors(X, mu):
    with pytest.raises(DataError):
        fuzzy_mean(X, mu)


def test_partial_membership_contributes(rng):
    X = rng.normal(size=(10, 2))
    mu = np.ones(10)
    mu[3] = 0.5
    base = fuzzy_mean(X, mu)
    X2 = X.copy()
    X2[3] += 1.0
    assert np.all(np.abs(fuzzy_mean(X2, mu) - base) > 0)


# --- membership grades --------------------------------------------------------


def test_single_class_grade_is_one(rng):
    m = GaussianClassModel("a", [0, 0], np.eye(2))
    assert membership_grades([m], rng.normal(size=2)).tolist() == [1.0]


def test_identical_models_split_evenly(rng):
    cov = random_spd(rng, 2)
    a = GaussianClassModel("a", [1, 1], cov, 0.5)
    b = GaussianClassModel("b", [1, 1], cov, 0.5)
    for _ in range(10):
        np.testing.assert_array_equal(membership_grades([a, b], rng.normal(size=2) * 5), [0.5, 0.5])


def test_grades_match_pdf_ratio(rng):
    for _ in range(100):
        models = [
            GaussianClassModel(str(k), rng.normal(size=3), random_spd(rng, 3), rng.uniform(0.1, 1.0)) for k in range(3)
        ]
        x = rng.normal(size=3)
        np.testing.assert_allclose(membership_grades(models, x), pdf_ratio_oracle(models, x), rtol=1e-10, atol=1e-12)


def test_grades_stable_far_from_all_classes():
    a = GaussianClassModel("a", [0.0], [[1e-4]])
    b = GaussianClassModel("b", [1.0], [[1e-4]])
    g = membership_grades([a, b], [1e4])
    assert np.all(np.isfinite(g)) and g.sum() == pytest.approx(1.0)


# --- cardinality ---------------------------------------------------------------


def test_cardinality():
    crisp = np.array([[1, 0], [0, 1], [1, 0]], float)
    assert fuzzy_cardinality(crisp[:, 0]) == 2
    uniform = np.full((12, 3), 1 / 3)
    assert fuzzy_cardinality(uniform[:, 1]) == pytest.approx(4.0)


def test_cardinality_oracle(rng):
    U = rng.dirichlet(np.ones(4), size=200)
    total = 0.0
    for k in range(4):
        s = 0.0
        for v in U[:, k]:
            s += v
        assert fuzzy_cardinality(U[:, k]) == pytest.approx(s, rel=1e-12)
        total += fuzzy_cardinality(U[:, k])
    assert total == pytest.approx(200, rel=1e-12)


# --- fitting and classification ---------------------------------------------------


def scene(means, covs, size=32, seed=7, masks=None):
    h = RasterHeader(size, size, len(means[0]))
    if masks is None:
        left = np.zeros((size, size), bool)
        left[:, : size // 2] = True
        masks = [left, ~left]
    return generate_synthetic_scene(
        [SceneClass(f"c{k}", m, c, mask) for k, (m, c, mask) in enumerate(zip(means, covs, masks))], h, seed
    )


def test_config_validation():
    for kw in ({"m_exponent": 0.5}, {"epsilon": 0}, {"max_iterations": 0}, {"estimation_set": "all"}):
        with pytest.raises(DataError):
            FuzzyConfig(**kw)


def test_well_separated_converges_to_crisp():
    raster, ts, _ = scene([[0.0, 0.0], [10.0, 10.0]], [np.eye(2), np.eye(2)])
    crisp = fit_models(raster, ts)
    fit = fit_fuzzy(raster, ts, FuzzyConfig())
    assert fit.converged
    for a, b in zip(fit.models, crisp):
        np.testing.assert_allclose(a.mean, b.mean, rtol=1e-3, atol=1e-3)
    mmap, _ = fuzzy_classify(raster, fit.models)
    assert np.all((mmap.grades > 1 - 1e-6) | (mmap.grades < 1e-6))


def test_one_class_converges_immediately():
    h = RasterHeader(8, 8, 2)
    raster, ts, _ = generate_synthetic_scene([SceneClass("a", [1, 2], np.eye(2), np.ones((8, 8), bool))], h, 1)
    fit = fit_fuzzy(raster, ts)
    assert fit.converged and fit.iterations == 1
    assert fit.models[0].prior == 1.0
    mmap, _ = fuzzy_classify(raster, fit.models)
    assert np.all(mmap.grades == 1.0)


def test_mixed_boundary_strip():
    size = 48
    a = np.zeros((size, size), bool)
    a[:, :20] = True
    strip = np.zeros_like(a)
    strip[:, 20:28] = True
    b = ~(a | strip)
    raster, full, _ = scene(
        [[0.0, 0.0], [10.0, 10.0], [5.0, 5.0]],
        [np.eye(2), np.eye(2), 1e-4 * np.eye(2)],
        size=size,
        masks=[a, b, strip],
    )
    # train only on the two pure classes
    ts = TrainingSet(full.classes[:2])
    fit = fit_fuzzy(raster, ts, FuzzyConfig(estimation_set="training"))
    mmap, _ = fuzzy_classify(raster, fit.models)
    top = mmap.grades.max(axis=0)
    assert np.all(top[strip] < 0.99)
    assert np.all(top[a | b] > 0.99)


def test_scene_estimation_set_runs():
    raster, ts, _ = scene([[0.0, 0.0], [2.0, 1.0]], [np.eye(2), np.eye(2)])
    fit = fit_fuzzy(raster, ts, FuzzyConfig(estimation_set="scene", max_iterations=3))
    assert 1 <= fit.iterations <= 3
    assert sum(m.prior for m in fit.models) == pytest.approx(1.0)
    if fit.converged:
        assert fit.max_change < 1e-4


def test_non_convergence_is_reported_not_raised():
    raster, ts, _ = scene([[0.0, 0.0], [1.0, 0.5]], [np.eye(2), np.eye(2)])
    fit = fit_fuzzy(raster, ts, FuzzyConfig(max_iterations=1, epsilon=1e-15, estimation_set="scene"))
    assert not fit.converged and fit.iterations == 1


def test_m_exponent_changes_estimates():
    raster, ts, _ = scene([[0.0, 0.0], [1.5, 1.0]], [np.eye(2), np.eye(2)])
    f1 = fit_fuzzy(raster, ts, FuzzyConfig(m_exponent=1.0, max_iterations=2))
    f2 = fit_fuzzy(raster, ts, FuzzyConfig(m_exponent=2.0, max_iterations=2))
    assert not np.allclose(f1.models[0].mean, f2.models[0].mean)


def test_hardened_equals_crisp_labels(rng):
    raster, ts, _ = scene([[0.0, 0.0], [1.0, 1.0]], [np.eye(2), random_spd(rng, 2)])
    models = fit_models(raster, ts)
    mmap, res = fuzzy_classify(raster, models)
    np.testing.assert_array_equal(res.labels, classify(raster, models).labels)
    np.testing.assert_allclose(mmap.grades.sum(axis=0), 1.0, atol=1e-9)


def test_grades_every_pixel_16x16(rng):
    means = [[0.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 2.0]]
    covs = [random_spd(rng, 3) for _ in means]
    h = RasterHeader(16, 16, 3)
    masks = [np.zeros((16, 16), bool) for _ in means]
    masks[0][:, :5] = True
    masks[1][:, 5:11] = True
    masks[2][:, 11:] = True
    raster, ts, _ = generate_synthetic_scene(
        [SceneClass(str(k), m, c, mk) for k, (m, c, mk) in enumerate(zip(means, covs, masks))], h, 4
    )
    models = fit_models(raster, ts, priors=[0.2, 0.3, 0.5])
    mmap, _ = fuzzy_classify(raster, models)
    for r in range(16):
        for c in range(16):
            x = raster.samples[:, r, c].astype(float)
            np.testing.assert_allclose(mmap.grades[:, r, c], pdf_ratio_oracle(models, x), rtol=1e-10, atol=1e-12)
