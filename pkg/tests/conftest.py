import numpy as np
import pytest

from terraclass.raster import Raster, RasterHeader


def random_spd(rng, n, cond=None):
    """Random symmetric positive definite matrix, optionally with a set condition number."""
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    if cond is None:
        eig = rng.uniform(0.2, 3.0, n)
    else:
        eig = np.geomspace(1.0, cond, n)
    m = (q * eig) @ q.T
    return 0.5 * (m + m.T)


def dense_logpdf(x, mean, cov):
    """Gaussian log-density from an explicit inverse and determinant."""
    d = np.asarray(x, float) - mean
    inv = np.linalg.inv(cov)
    det = np.linalg.det(cov)
    n = len(mean)
    return -0.5 * (n * np.log(2 * np.pi) + np.log(det) + d @ inv @ d)


def make_raster(samples, pixel_size=30.0, wavelengths=None):
    samples = np.asarray(samples, dtype=np.float32)
    if samples.ndim == 2:
        samples = samples[None]
    nb, nr, nc = samples.shape
    return Raster(RasterHeader(nc, nr, nb, pixel_size, wavelengths), samples)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, echoed again in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
