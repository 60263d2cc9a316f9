"""
Raster data model, sidecar-header I/O, training ROIs and synthetic scenes.

A raster on disk is a flat band-sequential body (all of band 1 in row-major
order, then band 2, ...) next to a plain-text ``key = value`` header with the
same stem and a ``.hdr`` suffix. Values in the header are JSON literals so
lists and strings survive a round trip unchanged.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError

DEFAULT_PIXEL_SIZE = 30.0

# on-disk sample types; the body is always little-endian
DTYPES = {
    "float32": np.dtype("<f4"),
    "float64": np.dtype("<f8"),
    "uint16": np.dtype("<u2"),
    "uint32": np.dtype("<u4"),
}


@dataclass(frozen=True)
class RasterHeader:
    ncols: int
    nrows: int
    nbands: int
    pixel_size: float = DEFAULT_PIXEL_SIZE
    wavelengths: tuple[float, ...] | None = None
    band_names: tuple[str, ...] | None = None

    def __post_init__(self):
        for key in ("ncols", "nrows", "nbands"):
            value = getattr(self, key)
            if int(value) != value or value < 1:
                raise DataError(f"header field {key} must be a positive integer, got {value!r}")
            object.__setattr__(self, key, int(value))
        if not (np.isfinite(self.pixel_size) and self.pixel_size > 0):
            raise DataError(f"pixel_size must be positive, got {self.pixel_size!r}")
        object.__setattr__(self, "pixel_size", float(self.pixel_size))
        if self.wavelengths is not None:
            wl = tuple(float(w) for w in self.wavelengths)
            if len(wl) != self.nbands:
                raise DataError(
                    f"header lists {len(wl)} wavelengths for {self.nbands} bands"
                )
            if not all(np.isfinite(w) and w > 0 for w in wl):
                raise DataError("wavelengths must be positive")
            object.__setattr__(self, "wavelengths", wl)
        if self.band_names is not None:
            names = tuple(str(n) for n in self.band_names)
            if len(names) != self.nbands:
                raise DataError(
                    f"header lists {len(names)} band names for {self.nbands} bands"
                )
            object.__setattr__(self, "band_names", names)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nbands, self.nrows, self.ncols)

    def contains(self, row, col) -> bool:
        return 0 <= row < self.nrows and 0 <= col < self.ncols


class Raster:
    """
    A multiband image held as a ``(nbands, nrows, ncols)`` float32 array.

    Samples are stored at the on-disk precision so that a save/load round
    trip is bit-exact; numerical code promotes to float64 via
    :meth:`pixel_matrix`. Instances are treated as immutable.
    """

    def __init__(self, header: RasterHeader, samples):
        samples = np.asarray(samples, dtype=np.float32)
        if samples.ndim == 2 and header.nbands == 1:
            samples = samples[None]
        if samples.shape != header.shape:
            raise DataError(
                f"size mismatch: samples have shape {samples.shape}, header declares {header.shape}"
            )
        if not np.all(np.isfinite(samples)):
            raise DataError("raster contains non-finite samples")
        samples = samples.copy()
        samples.setflags(write=False)
        self.header = header
        self.samples = samples

    def __repr__(self):
        h = self.header
        return f"Raster(nbands={h.nbands}, nrows={h.nrows}, ncols={h.ncols})"

    @property
    def shape(self):
        return self.header.shape

    def sample(self, band: int, row: int, col: int) -> float:
        return float(self.samples[band, row, col])

    def pixel_matrix(self) -> np.ndarray:
        """All pixels as an ``(nrows * ncols, nbands)`` float64 matrix, row-major."""
        nb = self.header.nbands
        return self.samples.reshape(nb, -1).T.astype(np.float64)

    def pixels_at(self, coords) -> np.ndarray:
        """Pixel vectors ``(len(coords), nbands)`` for a list of (row, col)."""
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
        return self.samples[:, coords[:, 0], coords[:, 1]].T.astype(np.float64)

    def band(self, index: int) -> np.ndarray:
        if not 0 <= index < self.header.nbands:
            raise DataError(f"band index {index} out of range for {self.header.nbands} bands")
        return self.samples[index].astype(np.float64)


@dataclass(frozen=True)
class TrainingSet:
    """Ordered training classes, each a name and its (row, col) pixels."""

    classes: tuple[tuple[str, tuple[tuple[int, int], ...]], ...]

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.classes]

    def pixels(self, name: str) -> list[tuple[int, int]]:
        for n, px in self.classes:
            if n == name:
                return list(px)
        raise KeyError(name)

    def validate(self, header: RasterHeader) -> None:
        names = self.names
        if not names:
            raise DataError("training set has no classes")
        if len(set(names)) != len(names):
            raise DataError(f"duplicate class names in training set: {names}")
        for name, px in self.classes:
            if len(px) < header.nbands + 1:
                raise DataError(
                    f"class {name!r} has {len(px)} pixels; at least nbands + 1 = "
                    f"{header.nbands + 1} are needed for a full-rank covariance"
                )
            for r, c in px:
                if not header.contains(r, c):
                    raise DataError(f"class {name!r} references pixel ({r}, {c}) outside the raster")

    def all_pixels(self) -> list[tuple[int, int]]:
        """Union of every class's pixels, first occurrence order."""
        seen = {}
        for _, px in self.classes:
            for p in px:
                seen.setdefault(p, None)
        return list(seen)


# ---------------------------------------------------------------------------
# header and body I/O


def header_path(path) -> Path:
    return Path(path).with_suffix(".hdr")


def _format_header(header: RasterHeader, data_type: str) -> str:
    lines = [
        f"ncols = {header.ncols}",
        f"nrows = {header.nrows}",
        f"nbands = {header.nbands}",
        f"pixel_size = {json.dumps(header.pixel_size)}",
        f"data_type = {data_type}",
        "byte_order = little",
        "interleave = bsq",
    ]
    if header.wavelengths is not None:
        lines.append(f"wavelengths = {json.dumps(list(header.wavelengths))}")
    if header.band_names is not None:
        lines.append(f"band_names = {json.dumps(list(header.band_names))}")
    return "\n".join(lines) + "\n"


def parse_header(text: str) -> tuple[RasterHeader, str]:
    """Parse header text into a :class:`RasterHeader` and the body data type."""
    fields = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"header line {lineno} is not 'key = value': {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in fields:
            raise DataError(f"header key {key!r} given twice")
        fields[key] = value

    missing = [k for k in ("ncols", "nrows", "nbands") if k not in fields]
    if missing:
        raise DataError(f"header is missing {', '.join(missing)}")

    def literal(key):
        try:
            return json.loads(fields[key])
        except json.JSONDecodeError:
            raise DataError(f"header value for {key!r} is not a valid literal: {fields[key]!r}")

    data_type = fields.get("data_type", "float32")
    if data_type not in DTYPES:
        raise DataError(f"unsupported data_type {data_type!r}")
    if fields.get("byte_order", "little") != "little":
        raise DataError("only little-endian bodies are supported")
    if fields.get("interleave", "bsq") != "bsq":
        raise DataError("only band-sequential bodies are supported")

    header = RasterHeader(
        ncols=literal("ncols"),
        nrows=literal("nrows"),
        nbands=literal("nbands"),
        pixel_size=literal("pixel_size") if "pixel_size" in fields else DEFAULT_PIXEL_SIZE,
        wavelengths=literal("wavelengths") if "wavelengths" in fields else None,
        band_names=literal("band_names") if "band_names" in fields else None,
    )
    return header, data_type


def atomic_write(path, data: bytes | str) -> None:
    """Write ``data`` to ``path`` through a temporary file and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_grid(path, array, header: RasterHeader, data_type="float32") -> None:
    """Write a ``(nbands, nrows, ncols)`` array and its header."""
    array = np.asarray(array)
    if array.ndim == 2:
        array = array[None]
    if array.shape != header.shape:
        raise DataError(f"array shape {array.shape} does not match header {header.shape}")
    body = np.ascontiguousarray(array, dtype=DTYPES[data_type]).tobytes()
    atomic_write(path, body)
    atomic_write(header_path(path), _format_header(header, data_type))


def load_grid(path) -> tuple[RasterHeader, np.ndarray]:
    path = Path(path)
    if path.suffix == ".hdr":
        raise DataError(f"pass the body file, not the header: {path}")
    hdr = header_path(path)
    if not hdr.exists():
        raise DataError(f"missing header file {hdr}")
    if not path.exists():
        raise DataError(f"missing raster body {path}")
    header, data_type = parse_header(hdr.read_text())
    dtype = DTYPES[data_type]
    raw = path.read_bytes()
    expected = header.nbands * header.nrows * header.ncols
    if len(raw) != expected * dtype.itemsize:
        raise DataError(
            f"size mismatch: body holds {len(raw) / dtype.itemsize:g} samples, "
            f"header declares {expected}"
        )
    return header, np.frombuffer(raw, dtype=dtype).reshape(header.shape)


def save_raster(path, raster: Raster) -> None:
    save_grid(path, raster.samples, raster.header, "float32")


def load_raster(path) -> Raster:
    """Load a band-sequential raster body and its ``.hdr`` sidecar."""
    header, samples = load_grid(path)
    if not np.all(np.isfinite(samples)):
        raise DataError(f"non-finite sample in {path}")
    return Raster(header, samples)


# ---------------------------------------------------------------------------
# ROIs


def _polygon_area(vertices: np.ndarray) -> float:
    r, c = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.sum(r * np.roll(c, -1) - np.roll(r, -1) * c))


def rasterize_roi(polygon, header: RasterHeader) -> list[tuple[int, int]]:
    """
    Pixels whose centers fall inside ``polygon`` by the even-odd rule.

    Vertices are ``(row, col)`` in pixel-corner coordinates, so pixel
    ``(r, c)`` has its center at ``(r + 0.5, c + 0.5)``. Centers lying exactly
    on an edge follow a half-open convention: they belong to the polygon when
    the edge bounds it on the low-row / low-col side. Two polygons sharing an
    edge therefore never claim the same pixel.
    """
    verts = np.asarray(polygon, dtype=np.float64)
    if verts.ndim != 2 or verts.shape[1] != 2 or len(verts) < 3:
        raise DataError("polygon needs at least 3 (row, col) vertices")
    if not np.all(np.isfinite(verts)):
        raise DataError("polygon vertices must be finite")
    if _polygon_area(verts) == 0.0:
        raise DataError("degenerate polygon (zero area)")

    r0 = max(int(np.floor(verts[:, 0].min() - 0.5)), 0)
    r1 = min(int(np.ceil(verts[:, 0].max() - 0.5)), header.nrows - 1)
    c0 = max(int(np.floor(verts[:, 1].min() - 0.5)), 0)
    c1 = min(int(np.ceil(verts[:, 1].max() - 0.5)), header.ncols - 1)
    if r0 > r1 or c0 > c1:
        return []

    rows, cols = np.mgrid[r0 : r1 + 1, c0 : c1 + 1]
    pr = rows.ravel() + 0.5
    pc = cols.ravel() + 0.5
    inside = np.zeros(pr.shape, dtype=bool)
    for a, b in zip(verts, np.roll(verts, -1, axis=0)):
        # orient every edge low-row first so a shared edge is evaluated
        # identically from both neighbouring polygons
        if a[0] > b[0]:
            a, b = b, a
        if a[0] == b[0]:
            continue
        spans = (pr >= a[0]) & (pr < b[0])
        t = (pr[spans] - a[0]) / (b[0] - a[0])
        c_at = a[1] + t * (b[1] - a[1])
        hit = np.zeros_like(inside)
        hit[spans] = pc[spans] < c_at
        inside ^= hit
    # ray is cast toward +col: a center on a left edge is counted (c < c_at
    # holds for the right edge), one on a right edge is not
    return [(int(r), int(c)) for r, c in zip(rows.ravel()[inside], cols.ravel()[inside])]


def load_roi(path, header: RasterHeader) -> TrainingSet:
    """
    Read a JSON ROI document and resolve it against ``header``.

    The document is ``{"classes": [{"name": ..., "pixels": [[r, c], ...]}
    | {"name": ..., "polygon": [[r, c], ...]}, ...]}``. A class may also give
    a list of polygons under ``"polygons"``.
    """
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise DataError(f"ROI document not found: {path}")
    except json.JSONDecodeError as exc:
        raise DataError(f"ROI document {path} is not valid JSON: {exc}")
    return training_from_document(doc, header)


def training_from_document(doc, header: RasterHeader) -> TrainingSet:
    if not isinstance(doc, dict) or not isinstance(doc.get("classes"), list):
        raise DataError("ROI document must contain a 'classes' list")
    classes = []
    for entry in doc["classes"]:
        try:
            name = str(entry["name"])
        except (KeyError, TypeError):
            raise DataError(f"ROI class entry without a name: {entry!r}")
        pixels: dict[tuple[int, int], None] = {}
        if "pixels" in entry:
            for rc in entry["pixels"]:
                if len(rc) != 2:
                    raise DataError(f"class {name!r}: pixel {rc!r} is not a (row, col) pair")
                pixels.setdefault((int(rc[0]), int(rc[1])), None)
        polygons = list(entry.get("polygons", []))
        if "polygon" in entry:
            polygons.append(entry["polygon"])
        for poly in polygons:
            for p in rasterize_roi(poly, header):
                pixels.setdefault(p, None)
        if "pixels" not in entry and not polygons:
            raise DataError(f"class {name!r} gives neither 'pixels' nor 'polygon'")
        classes.append((name, tuple(pixels)))
    training = TrainingSet(tuple(classes))
    training.validate(header)
    return training


def training_to_document(training: TrainingSet) -> dict:
    return {
        "classes": [
            {"name": name, "pixels": [list(p) for p in px]} for name, px in training.classes
        ]
    }


# ---------------------------------------------------------------------------
# synthetic scenes


@dataclass
class SceneClass:
    """One class of a synthetic scene.

    ``region`` is either a boolean ``(nrows, ncols)`` mask or a polygon of
    ``(row, col)`` corner coordinates rasterized with :func:`rasterize_roi`.
    """

    name: str
    mean: Sequence[float]
    covariance: Sequence[Sequence[float]]
    region: object = field(repr=False)


def _region_mask(region, header: RasterHeader) -> np.ndarray:
    arr = np.asarray(region)
    if arr.dtype == bool:
        if arr.shape != (header.nrows, header.ncols):
            raise DataError(f"region mask shape {arr.shape} does not match the grid")
        return arr
    mask = np.zeros((header.nrows, header.ncols), dtype=bool)
    px = rasterize_roi(region, header)
    if px:
        idx = np.asarray(px)
        mask[idx[:, 0], idx[:, 1]] = True
    return mask


def generate_synthetic_scene(classes: Sequence[SceneClass], header: RasterHeader, seed: int):
    """
    Draw a scene whose pixels follow per-region multivariate normals.

    Returns ``(raster, training, truth)`` where ``training`` lists every
    pixel of each region and ``truth`` is an ``(nrows, ncols)`` grid of
    1-based class indices. The same seed always yields the same raster.
    """
    rng = np.random.default_rng(seed)
    nb = header.nbands
    truth = np.zeros((header.nrows, header.ncols), dtype=np.int64)
    out = np.zeros((header.nrows * header.ncols, nb), dtype=np.float64)
    training = []
    for k, cls in enumerate(classes, 1):
        mean = np.asarray(cls.mean, dtype=np.float64)
        cov = np.asarray(cls.covariance, dtype=np.float64)
        if mean.shape != (nb,) or cov.shape != (nb, nb):
            raise DataError(f"class {cls.name!r}: mean/covariance do not match {nb} bands")
        if not np.allclose(cov, cov.T, rtol=1e-12, atol=0):
            raise DataError(f"class {cls.name!r}: covariance is not symmetric")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise DataError(f"class {cls.name!r}: covariance is not positive definite")
        mask = _region_mask(cls.region, header)
        if np.any(truth[mask]):
            raise DataError(f"class {cls.name!r}: region overlaps an earlier class")
        truth[mask] = k
        flat = np.flatnonzero(mask.ravel())
        z = rng.standard_normal((flat.size, nb))
        out[flat] = mean + z @ chol.T
        rows, cols = np.divmod(flat, header.ncols)
        training.append((cls.name, tuple(zip(rows.tolist(), cols.tolist()))))
    if np.any(truth == 0):
        raise DataError("class regions do not cover the whole grid")
    samples = out.T.reshape(header.shape)
    return Raster(header, samples), TrainingSet(tuple(training)), truth
