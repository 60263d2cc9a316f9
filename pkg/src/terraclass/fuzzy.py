"""
Fuzzy maximum-likelihood classification.

Membership grades are class posteriors: each class's prior-weighted density
at a pixel divided by the sum over all classes. Class statistics are then
re-estimated as membership-weighted means and covariances, and the two steps
alternate from a crisp start until the grades stop moving.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .errors import DataError
from .mlc import (
    ClassificationResult,
    GaussianClassModel,
    discriminants,
    fit_models,
    map_row_blocks,
    normalize_log,
    regularize_covariance,
    _check_models,
)
from .raster import Raster, TrainingSet


@dataclass(frozen=True)
class FuzzyConfig:
    m_exponent: float = 1.0
    max_iterations: int = 10
    epsilon: float = 1e-4
    estimation_set: Literal["training", "scene"] = "training"

    def __post_init__(self):
        if not self.m_exponent >= 1.0:
            raise DataError(f"m exponent must be >= 1, got {self.m_exponent}")
        if not self.epsilon > 0:
            raise DataError(f"epsilon must be positive, got {self.epsilon}")
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise DataError(f"max_iterations must be a positive integer, got {self.max_iterations}")
        if self.estimation_set not in ("training", "scene"):
            raise DataError(f"estimation_set must be 'training' or 'scene', got {self.estimation_set!r}")


@dataclass
class MembershipMap:
    """Per-class grades as a ``(nclasses, nrows, ncols)`` array."""

    grades: np.ndarray
    class_table: list[str]

    def hardened(self) -> np.ndarray:
        return np.argmax(self.grades, axis=0) + 1


@dataclass
class FuzzyFit:
    models: list[GaussianClassModel]
    iterations: int
    converged: bool
    max_change: float


def _weights(pixels, memberships, m):
    X = np.asarray(pixels, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    mu = np.asarray(memberships, dtype=np.float64).reshape(-1)
    if X.shape[0] != mu.size:
        raise DataError(f"{X.shape[0]} pixels but {mu.size} memberships")
    if X.shape[0] == 0:
        raise DataError("no pixels given")
    if np.any(mu < 0) or np.any(mu > 1):
        raise DataError("memberships must lie in [0, 1]")
    w = mu if m == 1 else mu**m
    total = w.sum()
    if not total > 0:
        raise DataError("all memberships are zero")
    return X, w, total


def fuzzy_mean(pixels, memberships, m: float = 1.0) -> np.ndarray:
    """Membership-weighted mean ``sum mu^m x / sum mu^m``."""
    X, w, total = _weights(pixels, memberships, m)
    return (w @ X) / total


def fuzzy_covariance(pixels, memberships, mean, m: float = 1.0, regularize: bool = True):
    """
    Membership-weighted scatter about ``mean``, normalised by ``sum mu^m``.

    With crisp memberships this is the 1/N scatter matrix, not the unbiased
    sample covariance. ``regularize`` applies the same ridge fallback as
    crisp estimation; the raw scatter is returned when it is False.
    """
    X, w, total = _weights(pixels, memberships, m)
    D = X - np.asarray(mean, dtype=np.float64)
    cov = (D.T * w) @ D / total
    cov = 0.5 * (cov + cov.T)
    if regularize:
        cov, _ = regularize_covariance(cov)
    return cov


def membership_grades(models: Sequence[GaussianClassModel], x) -> np.ndarray:
    """
    Normalised class probabilities for a pixel (vector) or pixels (rows).

    Evaluated in log space with the per-pixel maximum subtracted, so grades
    stay finite even when every density underflows.
    """
    x = np.asarray(x, dtype=np.float64)
    g = discriminants(models, x)
    grades = normalize_log(g)
    return grades[0] if x.ndim == 1 else grades


def fuzzy_cardinality(memberships) -> float:
    """Sum of one class's grades over pixels: its fuzzy pixel count."""
    return float(np.sum(np.asarray(memberships, dtype=np.float64)))


def _reestimate(X, grades, names, m):
    n = X.shape[0]
    models = []
    for k, name in enumerate(names):
        mu = grades[:, k]
        mean = fuzzy_mean(X, mu, m)
        raw = fuzzy_covariance(X, mu, mean, m, regularize=False)
        cov, ridge = regularize_covariance(raw)
        prior = fuzzy_cardinality(mu) / n
        # grades can underflow to exactly zero for a class far from every pixel
        prior = min(max(prior, np.finfo(float).tiny), 1.0)
        models.append(GaussianClassModel(name, mean, cov, prior, ridge))
    return models


def fit_fuzzy(raster: Raster, training: TrainingSet, config: FuzzyConfig = FuzzyConfig()) -> FuzzyFit:
    """
    Alternate grade evaluation and fuzzy re-estimation from crisp ROI models.

    The estimation set is every training pixel (``"training"``) or the whole
    scene (``"scene"``). Iteration stops when the largest per-pixel grade
    change drops below ``epsilon`` or after ``max_iterations``; running out
    of iterations is reported through :attr:`FuzzyFit.converged`, not
    raised. Final priors are the fuzzy cardinalities divided by the number
    of estimation pixels.
    """
    models = fit_models(raster, training)
    names = [m.class_name for m in models]
    if config.estimation_set == "scene":
        X = raster.pixel_matrix()
    else:
        X = raster.pixels_at(training.all_pixels())

    grades = membership_grades(models, X)
    change = np.inf
    iteration = 0
    for iteration in range(1, config.max_iterations + 1):
        models = _reestimate(X, grades, names, config.m_exponent)
        updated = membership_grades(models, X)
        change = float(np.max(np.abs(updated - grades)))
        grades = updated
        if change < config.epsilon:
            return FuzzyFit(models, iteration, True, change)
    return FuzzyFit(models, iteration, False, change)


def fuzzy_classify(
    raster: Raster,
    models: Sequence[GaussianClassModel],
    config: FuzzyConfig | None = None,
    threads: int | None = None,
) -> tuple[MembershipMap, ClassificationResult]:
    """Scene-wide membership map plus hardened labels (argmax grade, 1-based)."""
    _check_models(raster, models)

    def block(X):
        g = discriminants(models, X)
        grades = normalize_log(g)
        # argmax on g, not on grades: exp can round distinct g to equal grades
        return grades, np.argmax(g, axis=1) + 1

    parts = map_row_blocks(raster, block, threads)
    h = raster.header
    grades = np.concatenate([p[0] for p in parts]).T.reshape(len(models), h.nrows, h.ncols)
    labels = np.concatenate([p[1] for p in parts]).reshape(h.nrows, h.ncols)
    names = [m.class_name for m in models]
    return MembershipMap(grades, names), ClassificationResult(labels.astype(np.int64), names)
