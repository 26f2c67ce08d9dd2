"""Command-line interface.

Subcommands mirror the pipeline stages: segment, transfer-color, rectify,
disparity, correct, dataset-gt, evaluate, and pipeline. Every stage writes
its artifacts to disk; the pipeline subcommand also echoes the effective
configuration so a run can be reproduced byte for byte.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds
from .colortransfer import channel_stats, pooled_stats, transfer_color
from .config import config_from_dict, load_config
from .correction import correct_pair, estimate_pair_geometry
from .epipolar import rectify_pair, warp_image, warp_mask
from .errors import ParameterError, PipelineError, RectificationError
from .image import BinaryMask, RasterImage, lab_to_rgb, rgb_to_lab
from .io import (
    read_calibration,
    read_image,
    read_mask,
    write_disparity_png,
    write_image,
    write_mask,
    write_matrix_json,
    write_pfm,
    write_status_png,
)
from .pipeline import evaluate_matching, run_pipeline
from .segmentation import (
    compute_metrics,
    compute_pixel_features,
    extract_patches,
    mask_fraction,
    predict_mask,
    threshold_classifier,
    train_classifier,
)
from .stereo import SgmParams, compute_disparity

logger = logging.getLogger(__name__)


def _add_segment(sub):
    p = sub.add_parser("segment", help="produce a caustics mask for one image")
    p.add_argument("--image", required=True)
    p.add_argument("--method", choices=("threshold", "knn", "tree", "external"), default="threshold")
    p.add_argument("--threshold", type=float, help="l-channel threshold for --method threshold")
    p.add_argument("--sweep", help="lo:hi:n threshold sweep, prints caustics percent per value")
    p.add_argument("--mask-in", help="external mask path for --method external")
    p.add_argument("--train-image", help="labeled image for knn/tree training")
    p.add_argument("--train-mask", help="mask of --train-image")
    p.add_argument("--patch-size", type=int, default=128)
    p.add_argument("--stride", type=int, default=32)
    p.add_argument("--truth", help="ground-truth mask; writes a metrics JSON next to --out")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_segment)


def cmd_segment(args) -> int:
    img = read_image(args.image)
    if args.method == "external":
        if not args.mask_in:
            raise ParameterError("--mask-in is required for --method external")
        mask = read_mask(args.mask_in)
    elif args.method == "threshold":
        lab = rgb_to_lab(img)
        if args.sweep:
            lo, hi, n = args.sweep.split(":")
            for t in np.linspace(float(lo), float(hi), int(n)):
                frac = mask_fraction(threshold_classifier(lab, float(t)))
                print(f"threshold {t:+.4f} -> caustics {frac:.2f}%")
        if args.threshold is None:
            if args.sweep:
                return 0
            raise ParameterError("--threshold is required for --method threshold")
        mask = threshold_classifier(lab, args.threshold)
    else:
        if not args.train_image or not args.train_mask:
            raise ParameterError("--train-image and --train-mask are required for knn/tree")
        train_img = read_image(args.train_image)
        train_mask = read_mask(args.train_mask)
        feats = compute_pixel_features(rgb_to_lab(train_img))
        kind = "knn" if args.method == "knn" else "decision_tree"
        classifier = train_classifier(
            kind, feats.reshape(-1, feats.shape[-1]), train_mask.caustics.ravel()
        )
        grid = extract_patches(img, args.patch_size, args.stride)
        mask = predict_mask(img, classifier, grid)
    write_mask(args.out, mask)
    if args.truth:
        report = compute_metrics(mask, read_mask(args.truth))
        metrics_path = Path(args.out).with_suffix(".metrics.json")
        with open(metrics_path, "w") as f:
            json.dump(report.to_dict(), f, indent=2)
            f.write("\n")
        print(json.dumps(report.to_dict()))
    print(f"caustics fraction: {mask_fraction(mask):.2f}%")
    return 0


def _add_transfer(sub):
    p = sub.add_parser("transfer-color", help="match donor color statistics to a target image")
    p.add_argument("--source", required=True, help="image to be recolored")
    p.add_argument(
        "--target", required=True, nargs="+",
        help="image providing the statistics; several images pool block-wide stats",
    )
    p.add_argument("--source-mask")
    p.add_argument("--target-mask", nargs="+", help="one mask per target, aligned by order")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transfer)


def cmd_transfer(args) -> int:
    source = rgb_to_lab(read_image(args.source))
    source_mask = read_mask(args.source_mask) if args.source_mask else None
    source_stats = channel_stats(source, source_mask)
    target_masks = list(args.target_mask or [])
    if target_masks and len(target_masks) != len(args.target):
        raise ParameterError("--target-mask count must match --target count")
    per_target = []
    weights = []
    for i, path in enumerate(args.target):
        lab = rgb_to_lab(read_image(path))
        mask = read_mask(target_masks[i]) if target_masks else None
        per_target.append(channel_stats(lab, mask))
        weights.append(int(mask.non_caustics.sum()) if mask else lab.l.size)
    target_stats = per_target[0] if len(per_target) == 1 else pooled_stats(per_target, weights)
    out = lab_to_rgb(transfer_color(source, target_stats, source_stats))
    write_image(args.out, out)
    return 0


def _add_rectify(sub):
    p = sub.add_parser("rectify", help="estimate F and emit the rectified pair")
    p.add_argument("--left", required=True)
    p.add_argument("--right", required=True)
    p.add_argument("--left-mask")
    p.add_argument("--right-mask")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold-px", type=float, default=1.0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_rectify)


def cmd_rectify(args) -> int:
    left = read_image(args.left)
    right = read_image(args.right)
    mask_l = read_mask(args.left_mask) if args.left_mask else BinaryMask.all_non_caustics(left.height, left.width)
    mask_r = read_mask(args.right_mask) if args.right_mask else BinaryMask.all_non_caustics(right.height, right.width)
    geometry, _, _ = estimate_pair_geometry(
        left, right, mask_l, mask_r, seed=args.seed, threshold_px=args.threshold_px
    )
    pair = rectify_pair(geometry.fundamental, (left.width, left.height), (right.width, right.height))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rect_l, _ = warp_image(left, pair.h_left, pair.size)
    rect_r, _ = warp_image(right, pair.h_right, pair.size)
    wm_l, _ = warp_mask(mask_l, pair.h_left, pair.size)
    wm_r, _ = warp_mask(mask_r, pair.h_right, pair.size)
    write_image(out / "rectified_left.png", rect_l)
    write_image(out / "rectified_right.png", rect_r)
    write_mask(out / "rectified_mask_left.png", wm_l)
    write_mask(out / "rectified_mask_right.png", wm_r)
    write_matrix_json(out / "fundamental.json", "F", geometry.fundamental.m)
    write_matrix_json(out / "h_left.json", "H", pair.h_left)
    write_matrix_json(out / "h_right.json", "H", pair.h_right)
    print(f"inliers: {geometry.inliers} / {geometry.cross_checked} cross-checked matches")
    return 0


def _add_disparity(sub):
    p = sub.add_parser("disparity", help="dense disparity on an already rectified pair")
    p.add_argument("--left", required=True)
    p.add_argument("--right", required=True)
    p.add_argument("--dmin", type=int, required=True)
    p.add_argument("--dmax", type=int, required=True)
    p.add_argument("--p1", type=float, default=10.0)
    p.add_argument("--p2", type=float, default=120.0)
    p.add_argument("--cost", choices=("census", "mi"), default="census")
    p.add_argument("--pfm", action="store_true", help="also write float PFM maps")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_disparity)


def cmd_disparity(args) -> int:
    left = read_image(args.left)
    right = read_image(args.right)
    params = SgmParams(
        d_min=args.dmin,
        d_max=args.dmax,
        p1=args.p1,
        p2=args.p2,
        cost_kind="mutual_information" if args.cost == "mi" else "census",
    )
    result = compute_disparity(left, right, params)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_disparity_png(out / "disparity_left.png", result.left.values, args.dmin)
    write_disparity_png(out / "disparity_right.png", result.right.values, args.dmin)
    write_status_png(out / "status_left.png", result.left_raw_status)
    write_status_png(out / "status_right.png", result.right_raw_status)
    if args.pfm:
        write_pfm(out / "disparity_left.pfm", result.left.values)
        write_pfm(out / "disparity_right.pfm", result.right.values)
    return 0


def _add_correct(sub):
    p = sub.add_parser("correct", help="full pixelwise correction of one pair")
    p.add_argument("--left", required=True)
    p.add_argument("--right", required=True)
    p.add_argument("--left-mask", required=True)
    p.add_argument("--right-mask", required=True)
    p.add_argument("--calib", help="calibration JSON; images are undistorted first")
    p.add_argument("--params", help="JSON config file (same schema as pipeline)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--debug-dir", help="dump rectified intermediates here")
    p.set_defaults(func=cmd_correct)


def cmd_correct(args) -> int:
    left = read_image(args.left)
    right = read_image(args.right)
    mask_l = read_mask(args.left_mask)
    mask_r = read_mask(args.right_mask)
    calib = read_calibration(args.calib) if args.calib else None
    sgm = None
    seed = args.seed
    threshold_px = 1.0
    confidence = 0.999
    if args.params:
        with open(args.params) as f:
            raw = json.load(f)
        raw.setdefault("pairs", [[args.left, args.right]])
        # Masks come from the CLI flags here, so segmentation parameters
        # must not be demanded of the params file.
        raw.setdefault("masks", {args.left: args.left_mask, args.right: args.right_mask})
        cfg = config_from_dict(raw)
        sgm = SgmParams(
            d_min=cfg.sgm.d_min,
            d_max=cfg.sgm.d_max,
            p1=cfg.sgm.p1,
            p2=cfg.sgm.p2,
            cost_kind=cfg.sgm.cost_kind(),
            lr_threshold=cfg.sgm.lr_threshold,
            median_window=cfg.sgm.median_window,
        )
        seed = cfg.ransac.seed
        threshold_px = cfg.ransac.threshold_px
        confidence = cfg.ransac.confidence
    result = correct_pair(
        left, right, mask_l, mask_r,
        calib=calib, sgm=sgm, seed=seed,
        ransac_threshold_px=threshold_px, confidence=confidence,
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_image(out / "corrected_left.png", result.left)
    write_image(out / "corrected_right.png", result.right)
    report = {
        "left": result.report_left.to_dict(),
        "right": result.report_right.to_dict(),
        "merged": result.report_left.merged_with(result.report_right).to_dict(),
        "inliers": result.geometry.inliers,
        "cross_checked": result.geometry.cross_checked,
    }
    with open(out / "report.json", "w") as f:
        json.dump(report, f, indent=2)
        f.write("\n")
    if args.debug_dir:
        dbg = Path(args.debug_dir)
        dbg.mkdir(parents=True, exist_ok=True)
        bundle = result.bundle
        write_image(dbg / "rectified_left.png", bundle.left)
        write_image(dbg / "rectified_right.png", bundle.right)
        write_image(dbg / "donor_right.png", bundle.donor_right)
        write_mask(dbg / "rectified_mask_left.png", bundle.mask_left)
        write_mask(dbg / "rectified_mask_right.png", bundle.mask_right)
        write_disparity_png(dbg / "disparity_left.png", bundle.disp_left.values,
                            float(bundle.disp_left.values.min()))
        write_status_png(dbg / "status_left.png", result.status_left_raw)
    print(json.dumps(report))
    return 0


def _add_dataset_gt(sub):
    p = sub.add_parser("dataset-gt", help="reference + ground-truth masks for a pose stack")
    p.add_argument("--stack", required=True, help="directory of co-registered images")
    p.add_argument("--reference", default="auto", help="reference image path, or 'auto'")
    p.add_argument("--blur", type=int, choices=(3, 5, 7), default=5)
    p.add_argument("--threshold", type=int, default=40)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_dataset_gt)


def cmd_dataset_gt(args) -> int:
    stack_dir = Path(args.stack)
    paths = sorted(
        p for p in stack_dir.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")
    )
    if not paths:
        raise ParameterError(f"no images found in {stack_dir}")
    images = [read_image(p) for p in paths]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.reference == "auto":
        reference, winners = ds.reference_min_luminosity(ds.ImageStack(tuple(images)))
        flags = ds.flag_moving_objects(winners)
        write_mask(out / "reference_qa.png", BinaryMask(flags))
    else:
        reference = read_image(args.reference)
    write_image(out / "reference.png", reference)
    for path, img in zip(paths, images):
        mask, overlay, delta = ds.generate_ground_truth(
            img, reference, blur_kernel=args.blur, threshold=args.threshold
        )
        stem = path.stem
        write_mask(out / f"mask_{stem}.png", mask)
        write_image(out / f"overlay_{stem}.png", overlay)
        write_image(out / f"diff_{stem}.png", RasterImage(np.clip(delta.values, 0, 1)))
    return 0


def _add_evaluate(sub):
    p = sub.add_parser("evaluate", help="match-count statistics over image pairs")
    p.add_argument("--pair", nargs=2, action="append", metavar=("LEFT", "RIGHT"), required=True)
    p.add_argument("--mask", nargs=2, action="append", metavar=("IMAGE", "MASK"), default=[])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="report JSON path (stdout when omitted)")
    p.set_defaults(func=cmd_evaluate)


def cmd_evaluate(args) -> int:
    masks = {img: m for img, m in args.mask}
    report = evaluate_matching([tuple(p) for p in args.pair], masks, seed=args.seed)
    if args.out:
        report.save(args.out)
    else:
        print(json.dumps(report.to_dict(), indent=2))
    return 0


def _add_pipeline(sub):
    p = sub.add_parser("pipeline", help="run the full correction pipeline from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, help="override ransac.seed")
    p.add_argument("--out-dir", help="override the configured output directory")
    p.add_argument("--debug-dir", help="dump rectified intermediates per pair here")
    p.set_defaults(func=cmd_pipeline)


def cmd_pipeline(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config.ransac.seed = args.seed
    report = run_pipeline(config, out_dir=args.out_dir, debug_dir=args.debug_dir)
    failed = report.aggregate.get("failed", 0)
    print(json.dumps(report.aggregate, indent=2))
    return 0 if failed == 0 else 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="caustics",
        description="Pixelwise removal of rippling-caustics artifacts from overlapping imagery",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_segment(sub)
    _add_transfer(sub)
    _add_rectify(sub)
    _add_disparity(sub)
    _add_correct(sub)
    _add_dataset_gt(sub)
    _add_evaluate(sub)
    _add_pipeline(sub)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except PipelineError as exc:
        print(f"error in stage {exc.stage}: {exc}", file=sys.stderr)
        return 2
    except (ParameterError, RectificationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
