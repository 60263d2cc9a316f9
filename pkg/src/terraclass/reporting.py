"""
Run reports: band table, per-feature area statistics and a parameter echo.

The text report lists the run parameters in pipeline order, then a band
wavelength table and a per-feature area table. ``report_document`` holds the
same fields as JSON so a report can be re-rendered later.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .attributes import RegionAttributes
from .rules import UNCLASSIFIED


@dataclass(frozen=True)
class FeatureStats:
    feature_name: str
    feature_count: int
    total_area: float
    mean_area: float
    min_area: float
    max_area: float


def feature_statistics(
    assignments: dict[int, str] | Sequence[tuple[int, str]],
    attrs_list: Sequence[RegionAttributes],
    feature_order: Sequence[str] | None = None,
) -> list[FeatureStats]:
    """
    Group regions by assigned feature and summarise their areas.

    ``assignments`` maps region id to feature name; unclassified regions are
    left out. Rows follow ``feature_order`` when given (features with no
    regions are skipped), else first appearance. The mean is rounded to two
    decimals; the other columns are exact.
    """
    if not isinstance(assignments, dict):
        assignments = dict(assignments)
    area = {a.region_id: a.area for a in attrs_list}
    groups: dict[str, list[float]] = {}
    for rid in sorted(assignments):
        feat = assignments[rid]
        if feat == UNCLASSIFIED:
            continue
        if rid not in area:
            raise KeyError(f"region {rid} has an assignment but no attributes")
        groups.setdefault(feat, []).append(area[rid])
    order = list(feature_order) if feature_order is not None else list(groups)
    order += [f for f in groups if f not in order]
    stats = []
    for feat in order:
        areas = groups.get(feat)
        if not areas:
            continue
        total = float(sum(areas))
        stats.append(
            FeatureStats(feat, len(areas), total, round(total / len(areas), 2), float(min(areas)), float(max(areas)))
        )
    return stats


def _num(v: float) -> str:
    """Integers without a trailing .0; others as the shortest repr."""
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def band_table(wavelengths, band_names=None) -> list[str]:
    lines = ["Band Metadata", "S. No.\tNo. of Bands\tValue"]
    if not wavelengths:
        lines.append("(no wavelengths in header)")
        return lines
    for i, w in enumerate(wavelengths, 1):
        name = band_names[i - 1] if band_names else f"Band {i}"
        lines.append(f"{i}\t{name}\t{w:.4f}")
    return lines


def feature_table(stats: Sequence[FeatureStats]) -> list[str]:
    lines = [
        "Feature Statistics",
        "Feature Name\tFeature Count\tTotal Area\tMean Area\tMin Area\tMax Area",
    ]
    for s in stats:
        lines.append(
            f"{s.feature_name}\t{s.feature_count}\t{_num(s.total_area)}\t{_num(s.mean_area)}"
            f"\t{_num(s.min_area)}\t{_num(s.max_area)}"
        )
    return lines


@dataclass
class RunSummary:
    """Everything a run report prints."""

    file_name: str
    scale_level: float
    merge_level: float
    smoothing_threshold: int
    refine_range: tuple[float, float] | None = None
    attributes_computed: tuple[str, ...] = ("Spatial", "Spectral", "Texture")
    rule_lines: list[str] = field(default_factory=list)
    features: list[str] = field(default_factory=list)
    vector_output_directory: str | None = None
    pixel_size: float = 30.0
    wavelengths: list[float] | None = None
    band_names: list[str] | None = None
    stats: list[FeatureStats] = field(default_factory=list)
    region_count: int = 0
    unclassified_count: int = 0
    pixel_classifier: str | None = None
    fuzzy: dict | None = None


def run_report(run: RunSummary) -> str:
    ps = run.pixel_size
    lines = [
        f"File Name: {run.file_name}",
        f"Segment Scale Level: {run.scale_level:.1f}",
        f"Merge Level: {run.merge_level:.1f}",
    ]
    if run.refine_range is not None:
        lo, hi = run.refine_range
        lines.append(f"Refine: {lo:.5f} to {hi:.5f}")
    else:
        lines.append("Refine: none")
    lines.append("Attributes Computed:")
    lines += [f"    {a}" for a in run.attributes_computed]
    if run.rule_lines:
        lines.append("Classification: Rule-Based")
        lines.append("Rule Set:")
        lines += [f"    {r}" for r in run.rule_lines]
    else:
        lines.append("Classification: None")
    lines.append("Export Options:")
    lines.append("    Vector Output Directory:")
    lines.append(f"    {run.vector_output_directory or '(not exported)'}")
    lines.append("Feature Info:")
    lines += [f"    {f} Type: Polygon" for f in run.features]
    lines.append(f"Smoothing: Threshold of {run.smoothing_threshold}")
    lines.append("")
    if run.pixel_classifier:
        lines.append(f"Pixel Classifier: {run.pixel_classifier}")
    if run.fuzzy:
        fz = run.fuzzy
        state = "converged" if fz["converged"] else "NOT converged"
        lines.append(
            f"Fuzzy Estimation: {state} after {fz['iterations']} iteration(s), "
            f"max membership change {fz['max_change']:.3e}"
        )
    lines.append(f"Area Unit: m^2 (pixel size {_num(ps)} m)")
    lines.append(f"Regions: {run.region_count}, unclassified: {run.unclassified_count}")
    lines.append("")
    lines += band_table(run.wavelengths, run.band_names)
    lines.append("")
    lines += feature_table(run.stats)
    return "\n".join(lines) + "\n"


def report_document(run: RunSummary) -> dict:
    doc = asdict(run)
    doc["stats"] = [asdict(s) for s in run.stats]
    return doc


def summary_from_document(doc: dict) -> RunSummary:
    doc = dict(doc)
    doc["stats"] = [FeatureStats(**s) for s in doc.get("stats", [])]
    if doc.get("refine_range") is not None:
        doc["refine_range"] = tuple(doc["refine_range"])
    doc["attributes_computed"] = tuple(doc.get("attributes_computed", ()))
    return RunSummary(**doc)


def dumps_document(run: RunSummary) -> str:
    return json.dumps(report_document(run), indent=2, sort_keys=True) + "\n"
