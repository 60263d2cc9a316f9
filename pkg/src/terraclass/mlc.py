"""
Per-class Gaussian models and maximum-likelihood classification.

Each class is summarised by a mean vector, a covariance matrix and a prior.
A pixel ``x`` is scored with the discriminant

    g(x) = ln prior - 1/2 ln|cov| - 1/2 (x - mean)^T cov^-1 (x - mean)

which is the class log-density shifted by the constant ``(n/2) ln 2 pi``.
The label is the argmax over classes; an optional threshold on the
normalised posterior leaves low-confidence pixels unclassified (label 0).
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .errors import DataError, NumericalError
from .raster import Raster, TrainingSet, atomic_write

LOG_2PI = np.log(2.0 * np.pi)
RIDGE_STEPS = (1e-10, 1e-8, 1e-6, 1e-4)
UNCLASSIFIED = 0

# rows per work unit in classify(); fixed so results never depend on threads
BLOCK_ROWS = 64


def _cholesky(cov):
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return None


def regularize_covariance(cov: np.ndarray) -> tuple[np.ndarray, float]:
    """
    Symmetrise ``cov`` and add a ridge until it is positive definite.

    The ridge is ``lam * trace(cov) / n * I`` with ``lam`` stepping through
    ``RIDGE_STEPS``; a zero-trace matrix uses a unit scale. Returns the
    matrix and the ``lam`` used (0.0 when none was needed).
    """
    cov = np.asarray(cov, dtype=np.float64)
    cov = 0.5 * (cov + cov.T)
    if not np.all(np.isfinite(cov)):
        raise NumericalError("covariance has non-finite entries")
    if _cholesky(cov) is not None:
        return cov, 0.0
    n = cov.shape[0]
    scale = np.trace(cov) / n
    if not scale > 0:
        scale = 1.0
    for lam in RIDGE_STEPS:
        trial = cov + lam * scale * np.eye(n)
        if _cholesky(trial) is not None:
            return trial, lam
    raise NumericalError(
        f"covariance is not positive definite even with ridge {RIDGE_STEPS[-1]:g}"
    )


@dataclass(frozen=True)
class GaussianClassModel:
    """Mean, covariance and prior of one class, with a cached Cholesky factor."""

    class_name: str
    mean: np.ndarray
    covariance: np.ndarray
    prior: float = 1.0
    ridge_used: float = 0.0
    chol: np.ndarray = field(init=False, repr=False, compare=False)
    log_det: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64).reshape(-1)
        cov = np.array(self.covariance, dtype=np.float64)
        n = mean.size
        if cov.shape != (n, n):
            raise DataError(
                f"class {self.class_name!r}: covariance shape {cov.shape} does not match mean length {n}"
            )
        scale = max(np.abs(cov).max(), np.finfo(float).tiny)
        if np.abs(cov - cov.T).max() > 1e-12 * scale:
            raise DataError(f"class {self.class_name!r}: covariance is not symmetric")
        if not 0.0 < self.prior <= 1.0:
            raise DataError(f"class {self.class_name!r}: prior {self.prior} outside (0, 1]")
        chol = _cholesky(cov)
        if chol is None:
            raise NumericalError(f"class {self.class_name!r}: covariance is not positive definite")
        for arr in (mean, cov, chol):
            arr.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "prior", float(self.prior))
        object.__setattr__(self, "chol", chol)
        object.__setattr__(self, "log_det", float(2.0 * np.sum(np.log(np.diag(chol)))))

    @property
    def nbands(self) -> int:
        return self.mean.size

    def with_prior(self, prior: float) -> "GaussianClassModel":
        return GaussianClassModel(self.class_name, self.mean, self.covariance, prior, self.ridge_used)

    def mahalanobis_sq(self, X: np.ndarray) -> np.ndarray:
        """Squared Mahalanobis distances of the rows of ``X`` from the mean."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.nbands:
            raise DataError(
                f"pixel dimension {X.shape[1]} does not match model dimension {self.nbands}"
            )
        z = solve_triangular(self.chol, (X - self.mean).T, lower=True, check_finite=False)
        return np.einsum("ij,ij->j", z, z)

    def log_density(self, X: np.ndarray) -> np.ndarray:
        """Per-row multivariate normal log-density (prior excluded)."""
        return -0.5 * (self.nbands * LOG_2PI + self.log_det + self.mahalanobis_sq(X))


@dataclass
class ClassificationResult:
    labels: np.ndarray
    class_table: list[str]

    def __post_init__(self):
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() > len(self.class_table)):
            raise DataError("labels reference classes outside the class table")


def estimate_class_stats(raster: Raster, pixels) -> tuple[np.ndarray, np.ndarray, float]:
    """
    Sample mean and (N - 1)-normalised covariance of the given pixels.

    Returns ``(mean, covariance, ridge_used)``; see
    :func:`regularize_covariance` for the ridge.
    """
    X = raster.pixels_at(pixels)
    return sample_stats(X)


def sample_stats(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    X = np.asarray(X, dtype=np.float64)
    n, nb = X.shape
    if n < nb + 1:
        raise DataError(
            f"{n} pixels cannot give a full-rank covariance in {nb} bands (need {nb + 1})"
        )
    mean = X.mean(axis=0)
    D = X - mean
    cov, ridge = regularize_covariance(D.T @ D / (n - 1))
    return mean, cov, ridge


def fit_models(raster: Raster, training: TrainingSet, priors: Sequence[float] | None = None):
    """Crisp per-class models from training pixels; equal priors by default."""
    training.validate(raster.header)
    k = len(training.classes)
    if priors is None:
        priors = [1.0 / k] * k
    models = []
    for (name, px), prior in zip(training.classes, priors):
        mean, cov, ridge = estimate_class_stats(raster, px)
        models.append(GaussianClassModel(name, mean, cov, prior, ridge))
    return models


def log_likelihood(model: GaussianClassModel, pixels) -> float:
    """Sum of per-pixel Gaussian log-densities, the log of the i.i.d. likelihood."""
    X = np.asarray(pixels, dtype=np.float64)
    if X.ndim == 1:
        X = X[None]
    return float(np.sum(model.log_density(X)))


def discriminant(model: GaussianClassModel, x) -> float | np.ndarray:
    """
    Discriminant value(s) of pixel ``x`` (a vector) or rows of ``x``.

    Drops the ``-(n/2) ln 2 pi`` term of the log-density, which is common
    to every class.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DataError("pixel values must be finite")
    g = np.log(model.prior) - 0.5 * model.log_det - 0.5 * model.mahalanobis_sq(x)
    return float(g[0]) if x.ndim == 1 else g


def discriminants(models: Sequence[GaussianClassModel], X: np.ndarray) -> np.ndarray:
    """``(npixels, nclasses)`` matrix of discriminant values."""
    if not models:
        raise DataError("at least one class model is required")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return np.column_stack([discriminant(m, X) for m in models])


def normalize_log(g: np.ndarray) -> np.ndarray:
    """Row-wise ``exp(g) / sum(exp(g))`` with the row maximum subtracted first."""
    e = np.exp(g - g.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def posteriors(models, X) -> np.ndarray:
    """Normalised class posteriors ``exp(g_i) / sum_k exp(g_k)`` per row of ``X``."""
    return normalize_log(discriminants(models, X))


def _check_models(raster: Raster, models):
    if not models:
        raise DataError("at least one class model is required")
    nb = raster.header.nbands
    for m in models:
        if m.nbands != nb:
            raise DataError(
                f"model {m.class_name!r} has {m.nbands} bands, raster has {nb}"
            )


def map_row_blocks(raster: Raster, fn, threads: int | None = None) -> list:
    """Apply ``fn`` to fixed row blocks of pixels, in order."""
    h = raster.header
    X = raster.pixel_matrix()
    step = BLOCK_ROWS * h.ncols
    blocks = [X[i : i + step] for i in range(0, X.shape[0], step)]
    if threads is None or threads <= 1 or len(blocks) == 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, blocks))


def classify(
    raster: Raster,
    models: Sequence[GaussianClassModel],
    threshold: float | None = None,
    threads: int | None = None,
) -> ClassificationResult:
    """
    Label every pixel with the class of largest discriminant (1-based).

    Ties go to the lowest class index. With a ``threshold`` in (0, 1), a
    pixel whose winning posterior falls below it is labelled 0.
    """
    _check_models(raster, models)
    if threshold is not None and not 0.0 < threshold < 1.0:
        raise DataError(f"threshold must lie in (0, 1), got {threshold}")

    def block(X):
        g = discriminants(models, X)
        win = np.argmax(g, axis=1)
        labels = win + 1
        if threshold is not None:
            post = np.exp(g[np.arange(len(win)), win] - logsumexp(g, axis=1))
            labels[post < threshold] = UNCLASSIFIED
        return labels

    labels = np.concatenate(map_row_blocks(raster, block, threads))
    h = raster.header
    return ClassificationResult(
        labels.reshape(h.nrows, h.ncols).astype(np.int64), [m.class_name for m in models]
    )


# ---------------------------------------------------------------------------
# model documents


def models_to_document(models: Sequence[GaussianClassModel]) -> dict:
    return {
        "classes": [
            {
                "name": m.class_name,
                "prior": m.prior,
                "mean": m.mean.tolist(),
                "covariance": m.covariance.tolist(),
                "ridge_used": m.ridge_used,
            }
            for m in models
        ]
    }


def models_from_document(doc) -> list[GaussianClassModel]:
    try:
        entries = doc["classes"]
        models = [
            GaussianClassModel(
                str(e["name"]), e["mean"], e["covariance"], float(e["prior"]), float(e.get("ridge_used", 0.0))
            )
            for e in entries
        ]
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"malformed model document: {exc}")
    if not models:
        raise DataError("model document lists no classes")
    return models


def save_models(path, models) -> None:
    atomic_write(path, json.dumps(models_to_document(models), indent=2) + "\n")


def load_models(path) -> list[GaussianClassModel]:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise DataError(f"model document not found: {path}")
    except json.JSONDecodeError as exc:
        raise DataError(f"model document {path} is not valid JSON: {exc}")
    return models_from_document(doc)
