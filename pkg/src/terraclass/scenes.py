"""Built-in synthetic scene used by ``terraclass synth`` and seeded pipeline runs."""

from __future__ import annotations

import numpy as np

from .raster import RasterHeader, SceneClass, TrainingSet, generate_synthetic_scene, rasterize_roi

# Table-style band centres in micrometres for the three visible bands
VISIBLE_WAVELENGTHS = (0.4850, 0.5600, 0.6600)


def _mask(header, pixels):
    m = np.zeros((header.nrows, header.ncols), dtype=bool)
    if pixels:
        idx = np.asarray(pixels)
        m[idx[:, 0], idx[:, 1]] = True
    return m


def demo_classes(header: RasterHeader) -> list[SceneClass]:
    """Four land-cover classes: a lake, a forest block, an urban wedge and soil."""
    if header.nbands != 3:
        raise ValueError("the demo scene is defined for 3 bands")
    H, W = header.nrows, header.ncols
    rr, cc = np.mgrid[0:H, 0:W]
    water = (rr + 0.5 - 0.3 * H) ** 2 + (cc + 0.5 - 0.3 * W) ** 2 < (0.18 * H) ** 2
    forest = _mask(header, rasterize_roi([(0.55 * H, 0.1 * W), (0.55 * H, 0.6 * W), (0.9 * H, 0.6 * W), (0.9 * H, 0.1 * W)], header))
    urban = _mask(header, rasterize_roi([(0.1 * H, 0.65 * W), (0.5 * H, 0.95 * W), (0.45 * H, 0.55 * W)], header))
    forest &= ~water
    urban &= ~(water | forest)
    soil = ~(water | forest | urban)
    return [
        SceneClass("water", [0.6, 0.8, 0.5], [[0.04, 0.02, 0.01], [0.02, 0.05, 0.01], [0.01, 0.01, 0.03]], water),
        SceneClass("forest", [1.2, 1.9, 1.0], [[0.06, 0.03, 0.02], [0.03, 0.09, 0.02], [0.02, 0.02, 0.05]], forest),
        SceneClass("urban", [2.6, 2.5, 2.7], [[0.12, 0.08, 0.07], [0.08, 0.12, 0.07], [0.07, 0.07, 0.12]], urban),
        SceneClass("soil", [1.9, 1.7, 2.1], [[0.08, 0.03, 0.03], [0.03, 0.07, 0.03], [0.03, 0.03, 0.08]], soil),
    ]


def demo_scene(seed: int, size: int = 128, pixel_size: float = 30.0, roi_stride: int = 4):
    """
    Generate the demo scene and a sparse ROI set.

    Training pixels are the region pixels on a ``roi_stride`` lattice, so
    classifiers are fitted on a subsample and evaluated on the full scene.
    Returns ``(raster, roi_training, truth)``.
    """
    header = RasterHeader(
        ncols=size,
        nrows=size,
        nbands=3,
        pixel_size=pixel_size,
        wavelengths=VISIBLE_WAVELENGTHS,
        band_names=("Band 1", "Band 2", "Band 3"),
    )
    raster, full, truth = generate_synthetic_scene(demo_classes(header), header, seed)
    roi = tuple(
        (name, tuple(p for p in px if p[0] % roi_stride == 0 and p[1] % roi_stride == 0))
        for name, px in full.classes
    )
    return raster, TrainingSet(roi), truth
