"""Command-line front end: ``terraclass <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import attributes, fuzzy, mlc, reporting, rules, segmentation
from .errors import DataError, TerraclassError
from .raster import (
    Raster,
    RasterHeader,
    atomic_write,
    header_path,
    load_grid,
    load_raster,
    load_roi,
    save_grid,
    save_raster,
    training_to_document,
)
from .scenes import demo_scene

EXIT_USAGE = 2


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _level(text):
    v = float(text)
    if not 0.0 <= v <= 100.0:
        raise argparse.ArgumentTypeError(f"level must lie in [0, 100], got {text}")
    return v


def _probability(text):
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"threshold must lie in (0, 1), got {text}")
    return v


def _require(path, what):
    p = Path(path)
    if not p.exists():
        raise DataError(f"{what} not found: {p}")
    return p


def _require_raster(path):
    p = _require(path, "raster")
    _require(header_path(p), "raster header")
    return p


# ---------------------------------------------------------------------------
# label / segment grids


def save_labels(path, labels, class_table, pixel_size):
    h = RasterHeader(labels.shape[1], labels.shape[0], 1, pixel_size)
    save_grid(path, labels.astype(np.uint16), h, "uint16")
    atomic_write(Path(path).with_suffix(".classes.json"), json.dumps({"classes": class_table}, indent=2) + "\n")


def save_segments(path, seg, pixel_size):
    h = RasterHeader(seg.labels.shape[1], seg.labels.shape[0], 1, pixel_size)
    save_grid(path, seg.labels.astype(np.uint32), h, "uint32")


def load_segments(path):
    header, arr = load_grid(_require(path, "segment map"))
    labels = np.asarray(arr[0], dtype=np.int64)
    return header, segmentation.SegmentMap(labels, int(labels.max()))


def labels_as_raster(labels, pixel_size):
    h = RasterHeader(labels.shape[1], labels.shape[0], 1, pixel_size, band_names=("class label",))
    return Raster(h, labels.astype(np.float32)[None])


# ---------------------------------------------------------------------------
# subcommands


def cmd_info(args):
    raster = load_raster(_require_raster(args.raster))
    h = raster.header
    print(f"ncols: {h.ncols}")
    print(f"nrows: {h.nrows}")
    print(f"nbands: {h.nbands}")
    print(f"pixel_size: {reporting._num(h.pixel_size)}")
    print()
    print("\n".join(reporting.band_table(h.wavelengths, h.band_names)))
    return 0


def cmd_synth(args):
    raster, roi, truth = demo_scene(args.seed, args.size, args.pixel_size)
    out = Path(args.out)
    save_raster(out.with_suffix(".bsq"), raster)
    atomic_write(out.with_suffix(".roi.json"), json.dumps(training_to_document(roi)) + "\n")
    save_labels(out.with_suffix(".truth.bsq"), truth, [n for n, _ in roi.classes], raster.header.pixel_size)
    print(f"wrote {out.with_suffix('.bsq')}, {out.with_suffix('.roi.json')}, {out.with_suffix('.truth.bsq')}")
    return 0


def cmd_train(args):
    raster = load_raster(_require_raster(args.raster))
    training = load_roi(_require(args.roi, "ROI document"), raster.header)
    models = mlc.fit_models(raster, training)
    mlc.save_models(args.out, models)
    return 0


def cmd_classify(args):
    raster = load_raster(_require_raster(args.raster))
    models = mlc.load_models(_require(args.model, "model document"))
    result = mlc.classify(raster, models, args.threshold, threads=args.threads)
    save_labels(args.out, result.labels, result.class_table, raster.header.pixel_size)
    return 0


def _fuzzy_config(args):
    return fuzzy.FuzzyConfig(
        m_exponent=args.m,
        max_iterations=args.iterations,
        epsilon=args.epsilon,
        estimation_set="scene" if args.estimation_set == "scene" else "training",
    )


def write_memberships(prefix, mmap, pixel_size):
    nrows, ncols = mmap.grades.shape[1:]
    h = RasterHeader(ncols, nrows, 1, pixel_size)
    for k, name in enumerate(mmap.class_table, 1):
        save_grid(f"{prefix}.memberships.{k}.bsq", mmap.grades[k - 1][None], h, "float64")
    atomic_write(f"{prefix}.memberships.classes.json", json.dumps({"classes": mmap.class_table}, indent=2) + "\n")


def cmd_fuzzy_classify(args):
    raster = load_raster(_require_raster(args.raster))
    training = load_roi(_require(args.roi, "ROI document"), raster.header)
    config = _fuzzy_config(args)
    fit = fuzzy.fit_fuzzy(raster, training, config)
    mmap, result = fuzzy.fuzzy_classify(raster, fit.models, config, threads=args.threads)
    prefix = args.out_prefix
    Path(prefix).parent.mkdir(parents=True, exist_ok=True)
    write_memberships(prefix, mmap, raster.header.pixel_size)
    save_labels(f"{prefix}.labels.bsq", result.labels, result.class_table, raster.header.pixel_size)
    mlc.save_models(f"{prefix}.model.json", fit.models)
    report = {
        "iterations": fit.iterations,
        "converged": fit.converged,
        "max_change": fit.max_change,
        "m_exponent": config.m_exponent,
        "epsilon": config.epsilon,
        "estimation_set": config.estimation_set,
        "priors": {m.class_name: m.prior for m in fit.models},
    }
    atomic_write(f"{prefix}.report", json.dumps(report, indent=2, sort_keys=True) + "\n")
    if not fit.converged:
        print(f"warning: fuzzy estimation did not converge in {fit.iterations} iterations", file=sys.stderr)
    return 0


def _segment_params(args):
    return segmentation.SegmentParams(
        band_index=args.band,
        scale_level=args.scale,
        merge_level=args.merge,
        smoothing_threshold=args.smooth,
        refine_range=tuple(args.refine) if args.refine else None,
    )


def cmd_segment(args):
    raster = load_raster(_require_raster(args.raster))
    seg = segmentation.run_segmentation(raster, _segment_params(args))
    save_segments(args.out, seg, raster.header.pixel_size)
    if args.export_polygons:
        doc = segmentation.export_polygons(seg, raster.header)
        segmentation.save_polygons(Path(args.export_polygons) / "polygons.json", doc)
    print(f"{seg.region_count} regions")
    return 0


def cmd_attrs(args):
    raster = load_raster(_require_raster(args.raster))
    _, seg = load_segments(args.seg)
    attrs = attributes.compute_all(raster, seg, kernel=args.kernel, texture_band=args.texture_band)
    attributes.save_attributes(args.out, attrs)
    return 0


def cmd_rules_apply(args):
    attrs = attributes.load_attributes(_require(args.attrs, "attribute table"))
    ruleset = rules.read_ruleset(_require(args.rules, "rule document"))
    result = rules.classify_objects(ruleset, attrs)
    atomic_write(args.out, rules.assignments_to_tsv(result))
    if args.confidence_maps:
        rules.save_confidence_maps(args.confidence_maps, ruleset, result)
    return 0


def cmd_report(args):
    run_dir = _require(args.run, "run directory")
    doc = json.loads(_require(run_dir / "run.json", "run document").read_text())
    text = reporting.run_report(reporting.summary_from_document(doc))
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# pipeline


def pipeline_plan(args) -> list[str]:
    out = Path(args.out)
    steps = []
    if args.raster is None:
        steps.append(f"synth: demo scene seed={args.seed} size={args.size} -> {out / 'scene.bsq'}")
    classifier = "fuzzy maximum likelihood" if args.fuzzy else "maximum likelihood"
    steps.append(f"train: class models from ROIs -> {out / 'model.json'}")
    thr = "none" if args.threshold is None else args.threshold
    steps.append(f"classify: {classifier}, threshold={thr} -> {out / 'labels.bsq'}")
    src = "classified labels" if args.segment_input == "labels" else f"raster band {args.band}"
    steps.append(
        f"segment: {src}, scale={args.scale}, merge={args.merge}, smooth={args.smooth} -> {out / 'seg.bsq'}"
    )
    steps.append(f"export: region polygons -> {out / 'polygons' / 'polygons.json'}")
    steps.append(f"attrs: kernel={args.kernel} -> {out / 'attrs.tsv'}")
    if args.rules:
        steps.append(f"rules: {args.rules} -> {out / 'assignments.tsv'}, {out / 'confidence'}")
    else:
        steps.append("rules: none")
    steps.append(f"report: -> {out / 'report.txt'}, {out / 'run.json'}")
    return steps


def _stage(name, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except TerraclassError as exc:
        raise type(exc)(f"stage {name}: {exc}") from exc


def cmd_pipeline(args):
    if args.raster is None and args.seed is None:
        raise DataError("pipeline needs --raster/--roi or --seed for a synthetic scene")
    if args.raster is not None:
        _require_raster(args.raster)
        if args.roi is None:
            raise DataError("--roi is required with --raster")
        _require(args.roi, "ROI document")
    if args.rules is not None:
        _require(args.rules, "rule document")
    if args.dry_run:
        print("\n".join(pipeline_plan(args)))
        return 0

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.raster is None:
        raster, training, truth = demo_scene(args.seed, args.size)
        save_raster(out / "scene.bsq", raster)
        atomic_write(out / "roi.json", json.dumps(training_to_document(training)) + "\n")
        file_name = "scene"
    else:
        raster = _stage("load", load_raster, args.raster)
        training = _stage("load", load_roi, args.roi, raster.header)
        file_name = Path(args.raster).stem
    ps = raster.header.pixel_size
    ruleset = _stage("rules", rules.read_ruleset, args.rules) if args.rules else None

    fuzzy_info = None
    if args.fuzzy:
        config = _fuzzy_config(args)
        fit = _stage("train", fuzzy.fit_fuzzy, raster, training, config)
        models = fit.models
        mmap, result = _stage("classify", fuzzy.fuzzy_classify, raster, models, config, args.threads)
        write_memberships(out / "fuzzy", mmap, ps)
        fuzzy_info = {"converged": fit.converged, "iterations": fit.iterations, "max_change": fit.max_change}
    else:
        models = _stage("train", mlc.fit_models, raster, training)
        result = _stage("classify", mlc.classify, raster, models, args.threshold, args.threads)
    mlc.save_models(out / "model.json", models)
    save_labels(out / "labels.bsq", result.labels, result.class_table, ps)

    seg_source = labels_as_raster(result.labels, ps) if args.segment_input == "labels" else raster
    params = _segment_params(args)
    if args.segment_input == "labels":
        params = segmentation.SegmentParams(0, params.scale_level, params.merge_level, params.smoothing_threshold, params.refine_range)
    seg = _stage("segment", segmentation.run_segmentation, seg_source, params)
    save_segments(out / "seg.bsq", seg, ps)
    polygons = _stage("export", segmentation.export_polygons, seg, seg_source.header)
    segmentation.save_polygons(out / "polygons" / "polygons.json", polygons)

    attrs = _stage(
        "attrs", attributes.compute_all, seg_source, seg, kernel=args.kernel, texture_band=params.band_index
    )
    attributes.save_attributes(out / "attrs.tsv", attrs)

    stats, rule_lines, features, unclassified = [], [], [], seg.region_count
    if ruleset is not None:
        objects = _stage("rules", rules.classify_objects, ruleset, attrs)
        atomic_write(out / "assignments.tsv", rules.assignments_to_tsv(objects))
        rules.save_confidence_maps(out / "confidence", ruleset, objects)
        features = ruleset.features()
        stats = reporting.feature_statistics(
            dict(zip(objects.region_ids, objects.features)), attrs, features
        )
        rule_lines = [rules.format_rule(i, r) for i, r in enumerate(ruleset.rules, 1)]
        unclassified = objects.unclassified_count()

    summary = reporting.RunSummary(
        file_name=file_name,
        scale_level=params.scale_level,
        merge_level=params.merge_level,
        smoothing_threshold=params.smoothing_threshold,
        refine_range=params.refine_range,
        rule_lines=rule_lines,
        features=features,
        vector_output_directory="polygons/",
        pixel_size=ps,
        wavelengths=list(raster.header.wavelengths) if raster.header.wavelengths else None,
        band_names=list(raster.header.band_names) if raster.header.band_names else None,
        stats=stats,
        region_count=seg.region_count,
        unclassified_count=unclassified,
        pixel_classifier="fuzzy maximum likelihood" if args.fuzzy else "maximum likelihood",
        fuzzy=fuzzy_info,
    )
    atomic_write(out / "run.json", reporting.dumps_document(summary))
    atomic_write(out / "report.txt", reporting.run_report(summary))
    print(f"pipeline complete: {seg.region_count} regions, artifacts in {out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_fuzzy_options(p):
    p.add_argument("--iterations", type=_positive_int, default=10)
    p.add_argument("--epsilon", type=float, default=1e-4)
    p.add_argument("--m", type=float, default=1.0, help="membership exponent (>= 1)")
    p.add_argument("--estimation-set", choices=["training", "scene"], default="training")


def _add_segment_options(p):
    p.add_argument("--band", type=int, default=0)
    p.add_argument("--scale", type=_level, default=50.0)
    p.add_argument("--merge", type=_level, default=0.0)
    p.add_argument("--smooth", type=int, default=1)
    p.add_argument("--refine", type=float, nargs=2, metavar=("LOW", "HIGH"), default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="terraclass", description=__doc__)
    parser.add_argument("--threads", type=_positive_int, default=os.cpu_count() or 1)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("info", help="print raster header fields")
    p.add_argument("raster")
    p.set_defaults(func=cmd_info)

    p = sub.add_parser("synth", help="write a seeded synthetic demo scene")
    p.add_argument("--out", required=True, help="output stem")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--size", type=_positive_int, default=128)
    p.add_argument("--pixel-size", type=float, default=30.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit per-class Gaussian models from ROIs")
    p.add_argument("--raster", required=True)
    p.add_argument("--roi", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", help="maximum likelihood classification")
    p.add_argument("--raster", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--threshold", type=_probability, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("fuzzy-classify", help="fuzzy maximum likelihood classification")
    p.add_argument("--raster", required=True)
    p.add_argument("--roi", required=True)
    _add_fuzzy_options(p)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_fuzzy_classify)

    p = sub.add_parser("segment", help="segment a raster into regions")
    p.add_argument("--raster", required=True)
    _add_segment_options(p)
    p.add_argument("--out", required=True)
    p.add_argument("--export-polygons", metavar="DIR", default=None)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("attrs", help="compute region attributes")
    p.add_argument("--raster", required=True)
    p.add_argument("--seg", required=True)
    p.add_argument("--kernel", type=int, default=3)
    p.add_argument("--texture-band", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attrs)

    p = sub.add_parser("rules", help="fuzzy rule classification of regions")
    rsub = p.add_subparsers(dest="rules_command", required=True)
    ra = rsub.add_parser("apply")
    ra.add_argument("--attrs", required=True)
    ra.add_argument("--rules", required=True)
    ra.add_argument("--out", required=True)
    ra.add_argument("--confidence-maps", metavar="DIR", default=None)
    ra.set_defaults(func=cmd_rules_apply)

    p = sub.add_parser("report", help="render the text report of a pipeline run")
    p.add_argument("--run", required=True, type=Path)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("pipeline", help="train, classify, segment, attrs, rules, report")
    p.add_argument("--raster", default=None)
    p.add_argument("--roi", default=None)
    p.add_argument("--seed", type=int, default=None, help="synthesize the demo scene when no raster is given")
    p.add_argument("--size", type=_positive_int, default=128)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--threshold", type=_probability, default=None)
    p.add_argument("--fuzzy", action="store_true", help="use fuzzy maximum likelihood")
    _add_fuzzy_options(p)
    p.add_argument("--segment-input", choices=["labels", "raster"], default="labels")
    _add_segment_options(p)
    p.add_argument("--kernel", type=int, default=3)
    p.add_argument("--rules", default=None)
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TerraclassError as exc:
        print(f"terraclass: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
