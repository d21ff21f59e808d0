"""``datadiet`` command line: scan, preprocess, evaluate, stats, prune, qq, synth.

Exit codes: 0 full success, 2 partial success (some samples skipped),
1 fatal error.  Diagnostics are JSON lines on stderr with ``level``,
``sample_id`` and ``message`` keys.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import __version__
from .cohort import CohortManifest, SampleRecord, cohort_stats, scan_dataset
from .diet import prune_percentile, verify_diet_health_claim
from .distcompare import (
    DEFAULT_EPS_ML,
    DEFAULT_NUM_POINTS,
    METRIC_UNITS,
    compare_cohort_metric,
    render_qq_svg,
    write_qq_csv,
)
from .errors import DatadietError
from .metrics import DEFAULT_SMOOTH, DEFAULT_THRESHOLD, evaluate_sample, read_reports, write_reports
from .nifti import load_nifti, write_nifti
from .preprocess import Interpolation, PreprocessConfig, preprocess_image, preprocess_label
from .synth import MANIFEST_FILE, PRESETS, make_cohort
from .volume import Kind

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2
THREADS_ENV = "DATADIET_THREADS"


def diag(level: str, sample_id: str | None, message: str) -> None:
    print(json.dumps({"level": level, "sample_id": sample_id, "message": message}), file=sys.stderr)


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _triple(text: str) -> tuple[float, ...]:
    values = tuple(float(v) for v in text.replace(",", " ").split())
    if len(values) != 3:
        raise argparse.ArgumentTypeError(f"expected three numbers, got {text!r}")
    return values


def _pair(text: str) -> tuple[float, ...]:
    values = tuple(float(v) for v in text.replace(",", " ").split())
    if len(values) != 2:
        raise argparse.ArgumentTypeError(f"expected two numbers, got {text!r}")
    return values


def _load_metric_source(path) -> CohortManifest:
    """A manifest JSON, or a JSON-lines file of metric reports."""
    path = Path(path)
    if path.suffix == ".jsonl":
        reports = list(read_reports(path))
        return CohortManifest(tuple(SampleRecord.from_id(r.sample_id, metrics=r) for r in reports))
    return CohortManifest.load(path)


# -- subcommands -------------------------------------------------------------


def cmd_scan(args) -> int:
    manifest, issues = scan_dataset(args.root, pred_dir=args.pred_dir, workers=_threads(args))
    for issue in issues:
        diag("error", issue.name, issue.message)
    manifest.save(args.out)
    print(f"{len(manifest)} samples -> {args.out}")
    return EXIT_PARTIAL if issues else EXIT_OK


def _config_from_args(args) -> PreprocessConfig:
    config = PreprocessConfig.load(args.config) if args.config else PreprocessConfig()
    overrides = {}
    for key in ("target_spacing", "ct_clip", "pet_clip", "interpolation"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    return replace(config, **overrides) if overrides else config


def cmd_preprocess(args) -> int:
    manifest = CohortManifest.load(args.manifest)
    config = _config_from_args(args)
    out = Path(args.out_dir)
    for sub in ("imagesTr", "labelsTr"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    (out / "preprocess.cfg").write_text(config.to_text())

    def run(rec: SampleRecord):
        try:
            updates = {}
            for key, clip, suffix in (("ct_path", config.ct_clip, "_0000"), ("pet_path", config.pet_clip, "_0001")):
                src = getattr(rec, key)
                if src is None:
                    continue
                grid = preprocess_image(load_nifti(src, kind=Kind.SCALAR), clip, config)
                dst = out / "imagesTr" / f"{rec.sample_id}{suffix}.nii.gz"
                write_nifti(grid, dst)
                updates[key] = str(dst)
            if rec.label_path is not None:
                grid = preprocess_label(load_nifti(rec.label_path, kind=Kind.LABEL), config)
                dst = out / "labelsTr" / f"{rec.sample_id}.nii.gz"
                write_nifti(grid, dst)
                updates["label_path"] = str(dst)
            return replace(rec, **updates), None
        except DatadietError as exc:
            return rec, f"{type(exc).__name__}: {exc}"

    kept, failed = [], 0
    with ThreadPoolExecutor(max_workers=_threads(args)) as pool:
        for rec, err in pool.map(run, manifest.samples):
            if err:
                failed += 1
                diag("error", rec.sample_id, err)
            else:
                kept.append(rec)
    provenance = f"preprocessed: {json.dumps(config.to_dict(), sort_keys=True)}"
    manifest.with_samples(kept, provenance=provenance).save(out / MANIFEST_FILE)
    print(f"{len(kept)} preprocessed, {failed} skipped -> {out / MANIFEST_FILE}")
    return EXIT_PARTIAL if failed else EXIT_OK


def _prediction_path(rec: SampleRecord, pred_dir) -> Path | None:
    if pred_dir is None:
        return Path(rec.pred_path) if rec.pred_path else None
    for suffix in (".nii.gz", ".nii"):
        candidate = Path(pred_dir) / f"{rec.sample_id}{suffix}"
        if candidate.exists():
            return candidate
    return Path(pred_dir) / f"{rec.sample_id}.nii.gz"


def cmd_evaluate(args) -> int:
    manifest = CohortManifest.load(args.manifest)

    def run(rec: SampleRecord):
        pred_path = _prediction_path(rec, args.pred_dir)
        if pred_path is None or not pred_path.exists():
            return rec, None, f"prediction missing: {pred_path}"
        if rec.label_path is None:
            return rec, None, "no label path in manifest"
        try:
            prob = load_nifti(pred_path, kind=Kind.SCALAR)
            gt = load_nifti(rec.label_path, kind=Kind.LABEL)
            report = evaluate_sample(
                prob, gt, threshold=args.threshold, sample_id=rec.sample_id, smooth=args.smooth
            )
        except DatadietError as exc:
            return rec, None, f"{type(exc).__name__}: {exc}"
        return rec, report, None

    reports, skipped = [], 0
    with ThreadPoolExecutor(max_workers=_threads(args)) as pool:
        for rec, report, err in pool.map(run, manifest.samples):
            if err:
                skipped += 1
                diag("warning", rec.sample_id, err)
            else:
                reports.append(report)
    write_reports(reports, args.out)
    if args.manifest_out:
        manifest.with_metrics(reports).save(args.manifest_out)
    print(f"{len(reports)} evaluated, {skipped} skipped -> {args.out}")
    return EXIT_PARTIAL if skipped else EXIT_OK


def cmd_stats(args) -> int:
    manifest = CohortManifest.load(args.manifest)
    stats = cohort_stats(manifest)
    print(stats.format_table())
    if args.csv:
        Path(args.csv).write_text(stats.to_csv())
    return EXIT_OK


def cmd_prune(args) -> int:
    manifest = CohortManifest.load(args.manifest)
    if args.metrics:
        manifest = manifest.with_metrics(read_reports(args.metrics))
    plan = prune_percentile(manifest, args.percentile, metric=args.rank_by)
    paths = plan.write(args.out_dir)
    print(f"excluded {plan.k} of {plan.psma_count} PSMA samples -> {paths['excluded']}")
    if all(manifest.get(i).is_sick is not None for i in plan.excluded_ids):
        check = verify_diet_health_claim(plan, manifest)
        if check.claim_holds:
            print("all excluded samples are sick")
        else:
            for sid in check.healthy_ids:
                diag("warning", sid, "healthy sample excluded by diet")
    return EXIT_OK


def cmd_qq(args) -> int:
    before = _load_metric_source(args.before)
    after = _load_metric_source(args.after)
    result = compare_cohort_metric(
        before, after, args.metric, args.tracer, num_points=args.num_points, eps=args.eps
    )
    write_qq_csv(result.series, args.out)
    if args.svg:
        title = f"{args.tracer.upper()} {args.metric}: before vs after"
        Path(args.svg).write_text(render_qq_svg(result.series, title))
    print(json.dumps(result.summary(), indent=2))
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.preset:
        params = dict(PRESETS[args.preset])
    else:
        params = dict(n_fdg=args.n_fdg, n_psma=args.n_psma, psma_sick_rate=args.psma_sick_rate)
        params["fdg_sick_rate"] = args.fdg_sick_rate
    manifest = make_cohort(
        args.out, seed=args.seed, dims=args.dims, workers=_threads(args), **params
    )
    print(f"{len(manifest)} synthetic samples -> {Path(args.out) / MANIFEST_FILE}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="datadiet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"datadiet {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help=f"worker count (default ${THREADS_ENV} or 1)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scan", parents=[common], help="build a manifest from a dataset directory")
    p.add_argument("--root", required=True)
    p.add_argument("--pred-dir")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("preprocess", parents=[common], help="reorient, resample and normalize volumes")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--target-spacing", type=_triple)
    p.add_argument("--ct-clip", type=_pair)
    p.add_argument("--pet-clip", type=_pair)
    p.add_argument("--interpolation", choices=[i.value for i in Interpolation])
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("evaluate", parents=[common], help="per-sample Dice, loss, FPV, FNV")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pred-dir")
    p.add_argument("--out", required=True, help="JSON-lines report file")
    p.add_argument("--manifest-out", help="also write the manifest with metrics attached")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--smooth", type=float, default=DEFAULT_SMOOTH)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stats", parents=[common], help="tracer split and sick rates")
    p.add_argument("--manifest", required=True)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("prune", parents=[common], help="drop the lowest-loss PSMA percentile")
    p.add_argument("--manifest", required=True)
    p.add_argument("--metrics", help="JSON-lines reports to attach before ranking")
    p.add_argument("-n", "--percentile", type=float, required=True)
    p.add_argument("--rank-by", default="loss", choices=sorted(METRIC_UNITS))
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("qq", parents=[common], help="QQ of log-percentiles before vs after")
    p.add_argument("--before", required=True)
    p.add_argument("--after", required=True)
    p.add_argument("--metric", default="fpv_ml", choices=sorted(METRIC_UNITS))
    p.add_argument("--tracer", default="psma", choices=["fdg", "psma", "all", "FDG", "PSMA", "ALL"])
    p.add_argument("--out", required=True, help="CSV output")
    p.add_argument("--svg")
    p.add_argument("--num-points", type=int, default=DEFAULT_NUM_POINTS)
    p.add_argument("--eps", type=float, default=DEFAULT_EPS_ML)
    p.set_defaults(func=cmd_qq)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic cohort")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--n-fdg", type=int, default=10)
    p.add_argument("--n-psma", type=int, default=10)
    p.add_argument("--psma-sick-rate", type=float, default=0.9)
    p.add_argument("--fdg-sick-rate", type=float, default=0.5)
    p.add_argument("--dims", type=_triple, default=(8, 8, 8))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DatadietError, OSError, ValueError, KeyError) as exc:
        diag("fatal", None, f"{type(exc).__name__}: {exc}")
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
