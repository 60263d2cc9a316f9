"""Per-region spectral, texture and spatial attributes."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DataError
from .raster import Raster, atomic_write
from .segmentation import SegmentMap

INTRINSIC_MOMENT = 1.0 / 12.0


@dataclass(frozen=True)
class RegionAttributes:
    region_id: int
    pixel_count: int
    area: float
    avgband: tuple[float, ...]
    tx_mean: float
    majaxislen: float

    def value(self, name: str) -> float:
        """Look up an attribute by rule name, e.g. ``avgband_1`` (1-based band)."""
        if name.startswith("avgband_"):
            try:
                k = int(name[len("avgband_") :])
            except ValueError:
                raise DataError(f"unknown attribute {name!r}")
            if not 1 <= k <= len(self.avgband):
                raise DataError(f"attribute {name!r} refers to a band outside 1..{len(self.avgband)}")
            return self.avgband[k - 1]
        if name in ("pixel_count", "area", "tx_mean", "majaxislen"):
            return float(getattr(self, name))
        raise DataError(f"unknown attribute {name!r}")


def _check(raster: Raster, seg: SegmentMap):
    h = raster.header
    if seg.labels.shape != (h.nrows, h.ncols):
        raise DataError(
            f"segment map is {seg.labels.shape}, raster is {(h.nrows, h.ncols)}"
        )


def _check_region(seg: SegmentMap, region_id: int):
    if not 1 <= region_id <= seg.region_count:
        raise DataError(f"region {region_id} not in 1..{seg.region_count}")


def compute_avgband(raster: Raster, seg: SegmentMap, region_id: int, band: int) -> float:
    _check(raster, seg)
    _check_region(seg, region_id)
    return float(raster.band(band)[seg.labels == region_id].mean())


def mean_filter(band: np.ndarray, kernel: int) -> np.ndarray:
    """``kernel`` x ``kernel`` moving average with replicated edges."""
    if int(kernel) != kernel or kernel < 1 or kernel % 2 == 0:
        raise DataError(f"texture kernel must be an odd positive integer, got {kernel}")
    return ndimage.uniform_filter(np.asarray(band, dtype=np.float64), size=int(kernel), mode="nearest")


def compute_tx_mean(raster: Raster, seg: SegmentMap, region_id: int, kernel: int = 3, band: int = 0) -> float:
    """Region average of the locally mean-filtered band."""
    _check(raster, seg)
    _check_region(seg, region_id)
    filtered = mean_filter(raster.band(band), kernel)
    return float(filtered[seg.labels == region_id].mean())


def _major_axis(n, sr, sc, srr, scc, src, pixel_size):
    mr, mc = sr / n, sc / n
    vrr = srr / n - mr * mr + INTRINSIC_MOMENT
    vcc = scc / n - mc * mc + INTRINSIC_MOMENT
    vrc = src / n - mr * mc
    # largest eigenvalue of [[vrr, vrc], [vrc, vcc]]
    half = 0.5 * (vrr + vcc)
    lam = half + np.sqrt(0.25 * (vrr - vcc) ** 2 + vrc**2)
    return 4.0 * np.sqrt(lam) * pixel_size


def compute_majaxislen(seg: SegmentMap, region_id: int, pixel_size: float) -> float:
    """
    Major axis of the region's moment ellipse, in map units.

    Four times the square root of the largest eigenvalue of the pixel-center
    second-moment matrix, each pixel contributing its own 1/12 uniform-square
    moment on both axes.
    """
    _check_region(seg, region_id)
    rows, cols = np.nonzero(seg.labels == region_id)
    # centre coordinates first: raw sums of squares lose precision far from the origin
    r = rows - rows.mean()
    c = cols - cols.mean()
    n = r.size
    return float(_major_axis(n, 0.0, 0.0, r @ r, c @ c, r @ c, pixel_size))


def compute_all(raster: Raster, seg: SegmentMap, kernel: int = 3, texture_band: int = 0) -> list[RegionAttributes]:
    """Attributes of every region, in ascending id order."""
    _check(raster, seg)
    k = seg.region_count
    ps = raster.header.pixel_size
    flat = seg.labels.ravel()
    n = np.bincount(flat, minlength=k + 1)[1:].astype(np.float64)
    if np.any(n == 0):
        raise DataError("segment map ids are not dense")

    def region_sum(values):
        return np.bincount(flat, weights=np.ravel(values), minlength=k + 1)[1:]

    avg = np.stack([region_sum(raster.band(b)) / n for b in range(raster.header.nbands)], axis=1)
    tx = region_sum(mean_filter(raster.band(texture_band), kernel)) / n

    rows, cols = np.indices(seg.labels.shape, dtype=np.float64)
    mr = region_sum(rows) / n
    mc = region_sum(cols) / n
    # per-region centred moments (two passes, for accuracy on large grids)
    dr = rows.ravel() - np.concatenate([[0.0], mr])[flat]
    dc = cols.ravel() - np.concatenate([[0.0], mc])[flat]
    axis = _major_axis(n, 0.0, 0.0, region_sum(dr * dr), region_sum(dc * dc), region_sum(dr * dc), ps)

    return [
        RegionAttributes(
            region_id=i + 1,
            pixel_count=int(n[i]),
            area=int(n[i]) * ps * ps,
            avgband=tuple(float(v) for v in avg[i]),
            tx_mean=float(tx[i]),
            majaxislen=float(axis[i]),
        )
        for i in range(k)
    ]


# ---------------------------------------------------------------------------
# attribute table


def attribute_columns(nbands: int) -> list[str]:
    return ["region_id", "pixel_count", "area"] + [f"avgband_{b}" for b in range(1, nbands + 1)] + [
        "tx_mean",
        "majaxislen",
    ]


def attributes_to_tsv(attrs: list[RegionAttributes]) -> str:
    nbands = len(attrs[0].avgband) if attrs else 0
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter="\t", lineterminator="\n")
    writer.writerow(attribute_columns(nbands))
    for a in attrs:
        writer.writerow(
            [a.region_id, a.pixel_count, repr(a.area)]
            + [repr(v) for v in a.avgband]
            + [repr(a.tx_mean), repr(a.majaxislen)]
        )
    return buf.getvalue()


def save_attributes(path, attrs: list[RegionAttributes]) -> None:
    atomic_write(path, attributes_to_tsv(attrs))


def load_attributes(path) -> list[RegionAttributes]:
    try:
        text = open(path, newline="").read()
    except FileNotFoundError:
        raise DataError(f"attribute table not found: {path}")
    rows = list(csv.reader(io.StringIO(text), delimiter="\t"))
    if not rows:
        raise DataError(f"attribute table {path} is empty")
    head = rows[0]
    nbands = sum(1 for h in head if h.startswith("avgband_"))
    if head != attribute_columns(nbands):
        raise DataError(f"unexpected attribute table columns: {head}")
    out = []
    for line in rows[1:]:
        if len(line) != len(head):
            raise DataError(f"attribute row has {len(line)} fields, expected {len(head)}")
        try:
            out.append(
                RegionAttributes(
                    region_id=int(line[0]),
                    pixel_count=int(line[1]),
                    area=float(line[2]),
                    avgband=tuple(float(v) for v in line[3 : 3 + nbands]),
                    tx_mean=float(line[3 + nbands]),
                    majaxislen=float(line[4 + nbands]),
                )
            )
        except ValueError as exc:
            raise DataError(f"bad attribute value: {exc}")
    return out
