"""
Scene segmentation into 4-connected regions.

The driver band's gradient magnitude is quantized to 256 levels, levels up
to the ``scale_level`` percentile are flattened to zero, and every regional
minimum of the result seeds a basin that is grown by priority flooding.
Adjacent regions are then merged greedily by spectral distance
(``merge_level``) and regions below the smoothing size are absorbed by their
most similar neighbour.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DataError
from .raster import Raster, RasterHeader, atomic_write

LEVELS = 256
FOUR = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass(frozen=True)
class SegmentParams:
    band_index: int = 0
    scale_level: float = 50.0
    merge_level: float = 0.0
    smoothing_threshold: int = 1
    refine_range: tuple[float, float] | None = None

    def __post_init__(self):
        if not 0.0 <= self.scale_level <= 100.0:
            raise DataError(f"scale level must lie in [0, 100], got {self.scale_level}")
        if not 0.0 <= self.merge_level <= 100.0:
            raise DataError(f"merge level must lie in [0, 100], got {self.merge_level}")
        if int(self.smoothing_threshold) != self.smoothing_threshold or self.smoothing_threshold < 0:
            raise DataError(f"smoothing threshold must be a non-negative integer, got {self.smoothing_threshold}")
        if self.band_index < 0:
            raise DataError(f"band index must be non-negative, got {self.band_index}")


@dataclass
class SegmentMap:
    labels: np.ndarray
    region_count: int

    def sizes(self) -> np.ndarray:
        """Pixel count per region, indexed by ``region_id - 1``."""
        return np.bincount(self.labels.ravel(), minlength=self.region_count + 1)[1:]


def relabel_dense(labels: np.ndarray) -> SegmentMap:
    """Renumber ids 1..K in order of first appearance in a raster scan."""
    flat = labels.ravel()
    uniq, first = np.unique(flat, return_index=True)
    order = uniq[np.argsort(first)]
    lut = np.zeros(int(uniq.max()) + 1, dtype=np.int64)
    lut[order] = np.arange(1, order.size + 1)
    return SegmentMap(lut[labels].astype(np.int64), int(order.size))


def check_partition(seg: SegmentMap) -> None:
    """Raise ``AssertionError`` unless ``seg`` is a dense 4-connected partition."""
    labels = seg.labels
    assert labels.min() >= 1 and labels.max() == seg.region_count, "ids out of range"
    assert np.all(seg.sizes() > 0), "region ids are not dense"
    for rid, sl in enumerate(ndimage.find_objects(labels), 1):
        _, n = ndimage.label(labels[sl] == rid, structure=FOUR)
        assert n == 1, f"region {rid} is not 4-connected"


def gradient_magnitude(band: np.ndarray) -> np.ndarray:
    """Central-difference gradient magnitude with replicated edges."""
    p = np.pad(np.asarray(band, dtype=np.float64), 1, mode="edge")
    gy = (p[2:, 1:-1] - p[:-2, 1:-1]) / 2.0
    gx = (p[1:-1, 2:] - p[1:-1, :-2]) / 2.0
    return np.hypot(gx, gy)


def quantize(grad: np.ndarray) -> np.ndarray:
    top = grad.max()
    if not top > 0:
        return np.zeros(grad.shape, dtype=np.int64)
    return np.minimum((grad / top * (LEVELS - 1)).astype(np.int64), LEVELS - 1)


def suppressed_levels(band: np.ndarray, scale_level: float) -> np.ndarray:
    """Quantized gradient with every level up to the scale percentile set to 0."""
    grad = gradient_magnitude(band)
    q = quantize(grad)
    top = grad.max()
    if top > 0:
        cut = np.percentile(grad, scale_level)
        cut_level = min(int(cut / top * (LEVELS - 1)), LEVELS - 1)
        q[q <= cut_level] = 0
    return q


def regional_minima(levels: np.ndarray) -> tuple[np.ndarray, int]:
    """Label the 4-connected plateaus that have no strictly lower neighbour."""
    nrows, ncols = levels.shape
    zones = np.zeros(levels.shape, dtype=np.int64)
    count = 0
    for v in np.unique(levels):
        lab, n = ndimage.label(levels == v, structure=FOUR)
        zones[lab > 0] = lab[lab > 0] + count
        count += n
    lower = np.zeros(levels.shape, dtype=bool)
    lower[1:, :] |= levels[:-1, :] < levels[1:, :]
    lower[:-1, :] |= levels[1:, :] < levels[:-1, :]
    lower[:, 1:] |= levels[:, :-1] < levels[:, 1:]
    lower[:, :-1] |= levels[:, 1:] < levels[:, :-1]
    not_min = np.bincount(zones.ravel(), weights=lower.ravel(), minlength=count + 1) > 0
    keep = ~not_min
    keep[0] = False
    lut = np.zeros(count + 1, dtype=np.int64)
    lut[keep] = np.arange(1, keep.sum() + 1)
    return lut[zones], int(keep.sum())


def flood(levels: np.ndarray, markers: np.ndarray) -> np.ndarray:
    """
    Grow marker labels over unlabelled pixels in order of increasing level.

    Ties are resolved first-in first-out, so the result is deterministic.
    """
    nrows, ncols = levels.shape
    labels = markers.copy().ravel()
    lv = levels.ravel()
    heap: list[tuple[int, int, int, int]] = []
    counter = 0

    def neighbours(i):
        r, c = divmod(i, ncols)
        if r > 0:
            yield i - ncols
        if c > 0:
            yield i - 1
        if c < ncols - 1:
            yield i + 1
        if r < nrows - 1:
            yield i + ncols

    queued = labels > 0

    def push(i):
        nonlocal counter
        for j in neighbours(i):
            if not queued[j]:
                queued[j] = True
                # the pusher's label travels with the entry
                heapq.heappush(heap, (int(lv[j]), counter, j, labels[i]))
                counter += 1

    for i in np.flatnonzero(labels).tolist():
        push(i)
    while heap:
        _, _, i, lab = heapq.heappop(heap)
        labels[i] = lab
        push(i)
    return labels.reshape(nrows, ncols)


def segment(raster: Raster, params: SegmentParams) -> SegmentMap:
    """Initial segmentation by flooding the scale-suppressed gradient."""
    if params.band_index >= raster.header.nbands:
        raise DataError(
            f"band index {params.band_index} out of range for {raster.header.nbands} bands"
        )
    levels = suppressed_levels(raster.band(params.band_index), params.scale_level)
    markers, _ = regional_minima(levels)
    return relabel_dense(flood(levels, markers))


class _RegionGraph:
    """Region sums, sizes and adjacency for greedy merging."""

    def __init__(self, raster: Raster, seg: SegmentMap):
        k = seg.region_count
        flat = seg.labels.ravel()
        X = raster.pixel_matrix()
        self.size = np.bincount(flat, minlength=k + 1).astype(np.float64)
        self.sums = np.stack(
            [np.bincount(flat, weights=X[:, b], minlength=k + 1) for b in range(X.shape[1])], axis=1
        )
        with np.errstate(invalid="ignore"):
            self.means = self.sums / self.size[:, None]
        self.parent = np.arange(k + 1)
        self.adj: dict[int, set[int]] = {i: set() for i in range(1, k + 1)}
        lab = seg.labels
        pairs = np.concatenate(
            [
                np.stack([lab[:, :-1].ravel(), lab[:, 1:].ravel()], axis=1),
                np.stack([lab[:-1, :].ravel(), lab[1:, :].ravel()], axis=1),
            ]
        )
        pairs = pairs[pairs[:, 0] != pairs[:, 1]]
        pairs = np.unique(np.sort(pairs, axis=1), axis=0)
        for a, b in pairs.tolist():
            self.adj[a].add(b)
            self.adj[b].add(a)
        self.alive = set(range(1, k + 1))

    def costs(self, a, others: np.ndarray) -> np.ndarray:
        """Euclidean distances between the mean of ``a`` and each of ``others``."""
        d = self.means[others] - self.means[a]
        return np.sqrt(np.einsum("ij,ij->i", d, d))

    def edges(self):
        return [(a, b) for a in sorted(self.adj) for b in sorted(self.adj[a]) if a < b]

    def merge(self, a, b) -> int:
        """Fold the higher id into the lower one; return the survivor."""
        keep, gone = min(a, b), max(a, b)
        self.size[keep] += self.size[gone]
        self.sums[keep] += self.sums[gone]
        self.means[keep] = self.sums[keep] / self.size[keep]
        self.parent[gone] = keep
        for n in self.adj.pop(gone):
            self.adj[n].discard(gone)
            if n != keep:
                self.adj[n].add(keep)
                self.adj[keep].add(n)
        self.alive.discard(gone)
        return keep

    def resolve(self, labels: np.ndarray) -> SegmentMap:
        root = self.parent.copy()
        # parents always point to lower ids, so one ascending pass resolves chains
        for i in range(1, root.size):
            root[i] = root[root[i]]
        return relabel_dense(root[labels])


def merge_regions(raster: Raster, seg: SegmentMap, merge_level: float) -> SegmentMap:
    """
    Greedily merge the closest adjacent pair of regions by mean spectrum.

    Merging continues while the cheapest pair costs no more than the
    ``merge_level`` percentile of the initial adjacent-pair costs. Level 0
    returns the input unchanged. Because every level runs the same greedy
    sequence and only stops at a different cost, region count never
    increases with the level.
    """
    if not 0.0 <= merge_level <= 100.0:
        raise DataError(f"merge level must lie in [0, 100], got {merge_level}")
    if merge_level == 0 or seg.region_count < 2:
        return SegmentMap(seg.labels.copy(), seg.region_count)
    graph = _RegionGraph(raster, seg)
    edges = graph.edges()
    if not edges:
        return SegmentMap(seg.labels.copy(), seg.region_count)
    pairs = np.array(edges)
    d = graph.means[pairs[:, 0]] - graph.means[pairs[:, 1]]
    limit = float(np.percentile(np.sqrt(np.einsum("ij,ij->i", d, d)), merge_level))

    # Each region keeps one heap entry keyed (cost, lo, hi) on its cheapest
    # edge, ties to the smaller partner id. An entry may go inexact when a
    # neighbour's mean moves; it then stays a lower bound on that region's
    # other edges, and is recomputed only once it reaches the top. Edges of
    # the merged region are covered by its own fresh entry, so the pop order
    # matches a plain heap over all edges.
    k = seg.region_count
    best_nb = np.full(k + 1, -1, dtype=np.int64)
    exact = np.zeros(k + 1, dtype=bool)
    stamp = np.zeros(k + 1, dtype=np.int64)
    heap = []

    def refresh(r):
        stamp[r] += 1
        exact[r] = True
        if not graph.adj[r]:
            best_nb[r] = -1
            return None
        ns = np.fromiter(graph.adj[r], dtype=np.int64, count=len(graph.adj[r]))
        c = graph.costs(r, ns)
        cmin = c.min()
        n = int(ns[c == cmin].min())
        best_nb[r] = n
        heapq.heappush(heap, (float(cmin), min(r, n), max(r, n), r, int(stamp[r])))
        return ns

    for r in range(1, k + 1):
        refresh(r)
    while heap:
        cost, lo, hi, r, st = heapq.heappop(heap)
        if r not in graph.alive or stamp[r] != st:
            continue
        if not exact[r]:
            refresh(r)
            continue
        if cost > limit:
            break
        gone = max(lo, hi)
        keep = graph.merge(lo, hi)
        ns = refresh(keep)
        if ns is not None:
            hit = ns[(best_nb[ns] == keep) | (best_nb[ns] == gone)]
            exact[hit] = False
    return graph.resolve(seg.labels)


def smooth(seg: SegmentMap, raster: Raster, threshold: int) -> SegmentMap:
    """
    Absorb every region smaller than ``threshold`` pixels into a neighbour.

    The smallest region (lowest id on ties) goes first, into the adjacent
    region with the closest mean spectrum (lowest id on ties). A region with
    no neighbours, i.e. the whole scene, is left as is.
    """
    if int(threshold) != threshold or threshold < 0:
        raise DataError(f"smoothing threshold must be a non-negative integer, got {threshold}")
    if threshold <= 1 or seg.region_count < 2:
        return SegmentMap(seg.labels.copy(), seg.region_count)
    graph = _RegionGraph(raster, seg)
    heap = [(graph.size[r], r) for r in graph.alive if graph.size[r] < threshold]
    heapq.heapify(heap)
    while heap:
        size, r = heapq.heappop(heap)
        if r not in graph.alive or graph.size[r] != size or not graph.adj[r]:
            continue
        ns = np.array(sorted(graph.adj[r]), dtype=np.int64)
        target = int(ns[np.argmin(graph.costs(r, ns))])
        keep = graph.merge(r, target)
        if graph.size[keep] < threshold:
            heapq.heappush(heap, (graph.size[keep], keep))
    return graph.resolve(seg.labels)


def run_segmentation(raster: Raster, params: SegmentParams) -> SegmentMap:
    """segment, then merge_regions, then smooth."""
    seg = segment(raster, params)
    seg = merge_regions(raster, seg, params.merge_level)
    return smooth(seg, raster, params.smoothing_threshold)


# ---------------------------------------------------------------------------
# polygon export

_RIGHT = {(1, 0): (0, 1), (0, 1): (-1, 0), (-1, 0): (0, -1), (0, -1): (1, 0)}
_LEFT = {v: k for k, v in _RIGHT.items()}


def _boundary_edges(labels: np.ndarray):
    """
    Directed unit edges between each region and its outside, in (x, y) =
    (col, row) corner coordinates, oriented clockwise on screen so the
    region lies to the right of travel.
    """
    nrows, ncols = labels.shape
    p = np.pad(labels, 1, constant_values=0)
    inner = p[1:-1, 1:-1]
    out = {}
    moves = [
        (p[:-2, 1:-1], (0, 0), (1, 0)),  # top edge, left to right
        (p[1:-1, 2:], (1, 0), (0, 1)),  # right edge, downward
        (p[2:, 1:-1], (1, 1), (-1, 0)),  # bottom edge, right to left
        (p[1:-1, :-2], (0, 1), (0, -1)),  # left edge, upward
    ]
    for other, (ox, oy), d in moves:
        rows, cols = np.nonzero(inner != other)
        for r, c, lab in zip(rows.tolist(), cols.tolist(), inner[rows, cols].tolist()):
            out.setdefault(lab, []).append(((c + ox, r + oy), d))
    return out


def _trace_rings(edges):
    nexts: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for start, d in edges:
        nexts.setdefault(start, []).append(d)
    rings = []
    for start, d0 in sorted(edges):
        if d0 not in nexts[start]:
            continue
        nexts[start].remove(d0)
        ring = [start]
        pos, d = start, d0
        while True:
            pos = (pos[0] + d[0], pos[1] + d[1])
            avail = nexts[pos] + [d0] if pos == start else nexts[pos]
            # hug the region at pinch corners: right turn, then straight, then left
            cand = next((c for c in (_RIGHT[d], d, _LEFT[d]) if c in avail), None)
            if cand is None:
                raise RuntimeError("open boundary while tracing a region outline")
            if pos == start and cand == d0:
                break
            if cand != d:
                ring.append(pos)
            nexts[pos].remove(cand)
            d = cand
        rings.append(ring)
    return rings


def _shoelace(ring) -> float:
    a = np.asarray(ring, dtype=np.float64)
    x, y = a[:, 0], a[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _perimeter(ring) -> float:
    a = np.asarray(ring + ring[:1], dtype=np.float64)
    return float(np.abs(np.diff(a, axis=0)).sum())


def export_polygons(seg: SegmentMap, header: RasterHeader) -> dict:
    """
    Outer boundary ring of every region, scaled to map units.

    Rings are closed (first vertex repeated at the end), list ``[x, y]`` =
    ``[col, row] * pixel_size`` corners clockwise on screen, and keep only
    vertices where the outline turns. Holes are not exported; their count is
    kept per feature.
    """
    ps = header.pixel_size
    edges = _boundary_edges(seg.labels)
    features = []
    for rid in range(1, seg.region_count + 1):
        rings = _trace_rings(edges[rid])
        # with y pointing down, clockwise-on-screen outer rings have positive shoelace area
        areas = [_shoelace(r) for r in rings]
        outer = int(np.argmax(areas))
        ring = rings[outer]
        features.append(
            {
                "region_id": rid,
                "ring": [[x * ps, y * ps] for x, y in ring + ring[:1]],
                "area": areas[outer] * ps * ps,
                "perimeter": _perimeter(ring) * ps,
                "holes": len(rings) - 1,
            }
        )
    return {
        "type": "polygons",
        "pixel_size": ps,
        "coordinates": "x = col * pixel_size, y = row * pixel_size, pixel corners",
        "holes_omitted": True,
        "features": features,
    }


def save_polygons(path, document: dict) -> None:
    atomic_write(path, json.dumps(document, indent=1) + "\n")
