import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from terraclass.errors import DataError, NumericalError
from terraclass.mlc import (
    GaussianClassModel,
    classify,
    discriminant,
    discriminants,
    estimate_class_stats,
    load_models,
    log_likelihood,
    posteriors,
    regularize_covariance,
    save_models,
)
from terraclass.raster import RasterHeader, SceneClass, generate_synthetic_scene

from conftest import dense_logpdf, make_raster, random_spd


def two_pass_stats(rows):
    """Mean then (N - 1) covariance by explicit loops."""
    n = len(rows)
    d = len(rows[0])
    mean = [sum(r[j] for r in rows) / n for j in range(d)]
    cov = [[sum((r[i] - mean[i]) * (r[j] - mean[j]) for r in rows) / (n - 1) for j in range(d)] for i in range(d)]
    return np.array(mean), np.array(cov)


def raster_from_pixels(pixels):
    X = np.asarray(pixels, dtype=np.float32)
    return make_raster(X.T.reshape(X.shape[1], 1, X.shape[0]))


# --- estimate_class_stats ----------------------------------------------------


def test_hand_listed_pixels():
    px = [[1.0, 2.0], [3.0, 1.0], [2.0, 5.0], [0.5, 4.0]]
    r = raster_from_pixels(px)
    mean, cov, ridge = estimate_class_stats(r, [(0, c) for c in range(4)])
    om, oc = two_pass_stats(px)
    np.testing.assert_allclose(mean, om, rtol=1e-12)
    np.testing.assert_allclose(cov, oc, rtol=1e-12)
    assert ridge == 0.0


def test_identical_pixels_give_ridge_floor():
    r = raster_from_pixels([[3.0, 7.0]] * 5)
    mean, cov, ridge = estimate_class_stats(r, [(0, c) for c in range(5)])
    np.testing.assert_array_equal(mean, [3.0, 7.0])
    assert ridge == 1e-10
    np.testing.assert_array_equal(cov, ridge * np.eye(2))


def test_too_few_pixels():
    r = raster_from_pixels([[0.0, 1.0], [2.0, 0.5]])
    with pytest.raises(DataError):
        estimate_class_stats(r, [(0, 0), (0, 1)])


def test_regularization_steps():
    singular = np.array([[1.0, 1.0], [1.0, 1.0]])
    cov, lam = regularize_covariance(singular)
    assert lam in (1e-10, 1e-8, 1e-6, 1e-4)
    np.linalg.cholesky(cov)
    with pytest.raises(NumericalError):
        regularize_covariance(np.array([[1.0, 0.0], [0.0, -5.0]]))


def test_random_stats_match_oracle(rng):
    for _ in range(100):
        nb = int(rng.integers(1, 5))
        n = int(rng.integers(nb + 1, 30))
        px = rng.normal(size=(n, nb)).astype(np.float32).astype(float)
        mean, cov, _ = estimate_class_stats(raster_from_pixels(px), [(0, c) for c in range(n)])
        om, oc = two_pass_stats(px.tolist())
        np.testing.assert_allclose(mean, om, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(cov, oc, rtol=1e-10, atol=1e-13)


# --- model invariants ---------------------------------------------------------


def test_model_caches_log_det(rng):
    cov = random_spd(rng, 4)
    m = GaussianClassModel("a", np.zeros(4), cov, 0.3)
    assert m.log_det == pytest.approx(np.log(np.linalg.det(cov)), rel=1e-9)


@pytest.mark.parametrize(
    "cov,prior,exc",
    [
        ([[1.0, 0.5], [0.4, 1.0]], 0.5, DataError),
        ([[1.0, 0.0], [0.0, -1.0]], 0.5, NumericalError),
        ([[1.0, 0.0], [0.0, 1.0]], 0.0, DataError),
        ([[1.0, 0.0], [0.0, 1.0]], 1.5, DataError),
    ],
)
def test_model_validation(cov, prior, exc):
    with pytest.raises(exc):
        GaussianClassModel("a", [0, 0], cov, prior)


# --- log_likelihood -------------------------------------------------------------


def test_log_likelihood_at_mean_identity():
    m = GaussianClassModel("a", [1.0, 2.0], np.eye(2))
    assert log_likelihood(m, [[1.0, 2.0]]) == pytest.approx(-1.837877, abs=1e-6)
    assert log_likelihood(m, [[1.0, 2.0]]) == pytest.approx(-math.log(2 * math.pi), rel=1e-15)


def test_log_likelihood_dense_oracle(rng):
    for _ in range(100):
        nb = int(rng.integers(1, 5))
        mean = rng.normal(size=nb)
        cov = random_spd(rng, nb)
        X = rng.normal(size=(10, nb)) * 2 + mean
        m = GaussianClassModel("a", mean, cov)
        oracle = sum(dense_logpdf(x, mean, cov) for x in X)
        assert log_likelihood(m, X) == pytest.approx(oracle, rel=1e-8)


def test_log_likelihood_additive(rng):
    m = GaussianClassModel("a", [0.0, 1.0], random_spd(rng, 2))
    x1, x2 = rng.normal(size=2), rng.normal(size=2)
    assert log_likelihood(m, [x1, x2]) == pytest.approx(log_likelihood(m, [x1]) + log_likelihood(m, [x2]), rel=1e-14)


def test_log_likelihood_dimension_mismatch():
    m = GaussianClassModel("a", [0.0, 1.0], np.eye(2))
    with pytest.raises(DataError):
        log_likelihood(m, [[1.0, 2.0, 3.0]])


# --- discriminant -------------------------------------------------------------


def test_discriminant_at_mean():
    m = GaussianClassModel("a", [4.0, -1.0], np.eye(2), 0.5)
    assert discriminant(m, [4.0, -1.0]) == pytest.approx(-0.693147, abs=1e-6)


def test_discriminant_density_offset(rng):
    for _ in range(100):
        cov = random_spd(rng, 2)
        mean = rng.normal(size=2)
        prior = rng.uniform(0.05, 1.0)
        x = rng.normal(size=2) * 2
        m = GaussianClassModel("a", mean, cov, prior)
        pdf = math.exp(dense_logpdf(x, mean, cov))
        oracle = math.log(prior * pdf) + (2 / 2) * math.log(2 * math.pi)
        assert discriminant(m, x) == pytest.approx(oracle, abs=1e-9)


def test_doubling_prior_adds_ln2(rng):
    cov = random_spd(rng, 3)
    x = rng.normal(size=3)
    a = GaussianClassModel("a", np.zeros(3), cov, 0.2)
    b = a.with_prior(0.4)
    assert discriminant(b, x) - discriminant(a, x) == pytest.approx(math.log(2), abs=1e-14)


@pytest.mark.parametrize("cond", [1e2, 1e4, 1e6])
def test_discriminant_ill_conditioned(rng, cond):
    for _ in range(20):
        nb = 4
        cov = random_spd(rng, nb, cond=cond)
        mean = rng.normal(size=nb)
        m = GaussianClassModel("a", mean, cov, 0.5)
        x = mean + rng.normal(size=nb)
        d = x - mean
        oracle = math.log(0.5) - 0.5 * math.log(np.linalg.det(cov)) - 0.5 * d @ np.linalg.inv(cov) @ d
        assert discriminant(m, x) == pytest.approx(oracle, rel=1e-8)


def test_discriminant_rejects_bad_input():
    m = GaussianClassModel("a", [0.0, 0.0], np.eye(2))
    with pytest.raises(DataError):
        discriminant(m, [0.0, 0.0, 0.0])
    with pytest.raises(DataError):
        discriminant(m, [np.nan, 0.0])


# --- classify ---------------------------------------------------------------


def test_single_class_labels_everything():
    r = make_raster(np.random.default_rng(0).normal(size=(2, 5, 6)))
    res = classify(r, [GaussianClassModel("only", [0, 0], np.eye(2))])
    assert np.all(res.labels == 1)
    assert res.class_table == ["only"]


def test_equidistant_pixel_threshold():
    a = GaussianClassModel("a", [-1.0, 0.0], np.eye(2), 0.5)
    b = GaussianClassModel("b", [1.0, 0.0], np.eye(2), 0.5)
    r = make_raster(np.array([[[0.0]], [[0.0]]]))
    np.testing.assert_allclose(posteriors([a, b], [[0.0, 0.0]]), [[0.5, 0.5]])
    assert classify(r, [a, b]).labels[0, 0] == 1  # tie -> lowest index
    assert classify(r, [a, b], threshold=0.6).labels[0, 0] == 0


def test_classify_errors():
    r = make_raster(np.zeros((3, 2, 2)))
    with pytest.raises(DataError):
        classify(r, [])
    with pytest.raises(DataError):
        classify(r, [GaussianClassModel("a", [0, 0], np.eye(2))])
    with pytest.raises(DataError):
        classify(r, [GaussianClassModel("a", [0, 0, 0], np.eye(3))], threshold=1.5)


def two_class_scene(seed=3, size=48):
    h = RasterHeader(size, size, 2)
    left = np.zeros((size, size), bool)
    left[:, : size // 2] = True
    layout = [
        SceneClass("a", [0.0, 0.0], [[1.0, 0.3], [0.3, 1.0]], left),
        SceneClass("b", [1.5, 1.0], [[1.5, -0.2], [-0.2, 0.8]], ~left),
    ]
    return generate_synthetic_scene(layout, h, seed)


def brute_posterior_labels(raster, models, threshold=None):
    h = raster.header
    out = np.zeros((h.nrows, h.ncols), dtype=int)
    for r in range(h.nrows):
        for c in range(h.ncols):
            x = raster.samples[:, r, c].astype(float)
            p = np.array([m.prior * math.exp(dense_logpdf(x, m.mean, m.covariance)) for m in models])
            post = p / p.sum()
            k = int(np.argmax(post))
            out[r, c] = 0 if threshold is not None and post[k] < threshold else k + 1
    return out


def test_classify_matches_brute_force_oracle():
    raster, ts, _ = two_class_scene()
    models = [
        GaussianClassModel(n, *estimate_class_stats(raster, px)[:2], 0.5) for n, px in ts.classes
    ]
    np.testing.assert_array_equal(classify(raster, models).labels, brute_posterior_labels(raster, models))
    np.testing.assert_array_equal(
        classify(raster, models, threshold=0.8).labels, brute_posterior_labels(raster, models, 0.8)
    )


def test_classify_independent_of_threads():
    raster, ts, _ = two_class_scene(size=160)
    models = [GaussianClassModel(n, *estimate_class_stats(raster, px)[:2], 0.5) for n, px in ts.classes]
    a = classify(raster, models, threshold=0.7, threads=1).labels
    b = classify(raster, models, threshold=0.7, threads=4).labels
    np.testing.assert_array_equal(a, b)


# --- properties ---------------------------------------------------------------


def test_posteriors_normalized(rng):
    models = [GaussianClassModel(str(k), rng.normal(size=3) * 3, random_spd(rng, 3), rng.uniform(0.1, 1)) for k in range(4)]
    X = rng.normal(size=(5000, 3)) * 10
    np.testing.assert_allclose(posteriors(models, X).sum(axis=1), 1.0, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_affine_shift_invariance(seed, c0, c1):
    rng = np.random.default_rng(seed)
    shift = np.array([c0, c1])
    X = [rng.normal(size=(12, 2)) * rng.uniform(0.5, 2) + rng.normal(size=2) * 3 for _ in range(3)]
    x = rng.normal(size=2) * 3

    def fit(samples):
        out = []
        for k, s in enumerate(samples):
            r = raster_from_pixels(s)
            mean, cov, _ = estimate_class_stats(r, [(0, i) for i in range(len(s))])
            out.append((GaussianClassModel(str(k), mean, cov, 1 / 3), r))
        return out

    base = fit(X)
    moved = fit([s + shift for s in X])
    for (a, ra), (b, rb) in zip(base, moved):
        np.testing.assert_allclose(b.mean, a.mean + shift, rtol=1e-6, atol=1e-3)
    ga = discriminants([m for m, _ in base], x)
    gb = discriminants([m for m, _ in moved], x + shift)
    assert np.argmax(ga) == np.argmax(gb)
    # float32 storage of shifted pixels limits agreement at large offsets
    np.testing.assert_allclose(np.diff(gb), np.diff(ga), rtol=1e-2, atol=1e-2 * (1 + abs(c0) + abs(c1)))


def test_affine_shift_exact_in_float64(rng):
    for _ in range(50):
        models = [GaussianClassModel(str(k), rng.normal(size=3), random_spd(rng, 3), 0.25) for k in range(3)]
        shift = rng.normal(size=3) * 100
        moved = [GaussianClassModel(m.class_name, m.mean + shift, m.covariance, m.prior) for m in models]
        x = rng.normal(size=3)
        np.testing.assert_allclose(discriminants(moved, x + shift), discriminants(models, x), rtol=1e-9, atol=1e-9)


def test_estimate_is_local_mle(rng):
    for _ in range(30):
        nb = 3
        px = rng.normal(size=(40, nb)) @ np.linalg.cholesky(random_spd(rng, nb)).T
        r = raster_from_pixels(px)
        mean, cov, _ = estimate_class_stats(r, [(0, i) for i in range(40)])
        X = r.pixels_at([(0, i) for i in range(40)])
        best = log_likelihood(GaussianClassModel("a", mean, cov), X)
        for _ in range(10):
            delta = rng.normal(size=nb) * 10 ** rng.uniform(-4, 0)
            assert log_likelihood(GaussianClassModel("a", mean + delta, cov), X) <= best


def test_models_round_trip(tmp_path, rng):
    models = [GaussianClassModel(f"c{k}", rng.normal(size=3), random_spd(rng, 3), 0.25, 1e-8 * k) for k in range(3)]
    save_models(tmp_path / "m.json", models)
    back = load_models(tmp_path / "m.json")
    for a, b in zip(models, back):
        assert a.class_name == b.class_name and a.prior == b.prior and a.ridge_used == b.ridge_used
        np.testing.assert_array_equal(a.mean, b.mean)
        np.testing.assert_array_equal(a.covariance, b.covariance)
