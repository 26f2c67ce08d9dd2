"""Run orchestration and the match-count evaluation harness."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .colortransfer import channel_stats, pooled_stats
from .config import PipelineConfig
from .correction import correct_pair
from .epipolar import detect_masked_features, match_descriptors, ransac_fundamental
from .errors import InsufficientMatchesError, ParameterError, PipelineError
from .image import BinaryMask, RasterImage, rgb_to_lab
from .io import (
    read_calibration,
    read_image,
    read_mask,
    write_disparity_png,
    write_image,
    write_mask,
    write_matrix_json,
    write_status_png,
)
from .segmentation import (
    compute_pixel_features,
    extract_patches,
    mask_fraction,
    predict_mask,
    threshold_classifier,
    train_classifier,
)
from .stereo import SgmParams

logger = logging.getLogger(__name__)


@dataclass
class PairEvaluation:
    """Per-pair matching statistics (inliers <= cross_checked <= raw_matches)."""

    left: str
    right: str
    keypoints_left: int = 0
    keypoints_right: int = 0
    raw_matches: int = 0
    cross_checked: int = 0
    inliers: int = 0
    caustics_percent_left: float = 0.0
    caustics_percent_right: float = 0.0
    error: str | None = None

    def to_dict(self) -> dict:
        out = {
            "left": self.left,
            "right": self.right,
            "keypoints_left": self.keypoints_left,
            "keypoints_right": self.keypoints_right,
            "raw_matches": self.raw_matches,
            "cross_checked": self.cross_checked,
            "inliers": self.inliers,
            "caustics_percent_left": self.caustics_percent_left,
            "caustics_percent_right": self.caustics_percent_right,
        }
        if self.error is not None:
            out["error"] = self.error
        return out


@dataclass
class EvaluationReport:
    pairs: list[dict] = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"pairs": self.pairs, "aggregate": self.aggregate}

    def save(self, path: str | Path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")


def _count_matches(
    left: RasterImage,
    right: RasterImage,
    mask_left: BinaryMask | None,
    mask_right: BinaryMask | None,
    seed: int,
    threshold_px: float = 1.0,
    max_keypoints: int = 2000,
) -> dict:
    kp_l, desc_l = detect_masked_features(left, mask_left, max_kp=max_keypoints)
    kp_r, desc_r = detect_masked_features(right, mask_right, max_kp=max_keypoints)
    matches = match_descriptors(desc_l, desc_r)
    counts = {
        "keypoints_left": len(kp_l),
        "keypoints_right": len(kp_r),
        "raw_matches": matches.ratio_match_count,
        "cross_checked": len(matches),
        "inliers": 0,
        "degenerate": False,
    }
    if len(matches) >= 8:
        pts_l = kp_l.coordinates()[matches.left_index]
        pts_r = kp_r.coordinates()[matches.right_index]
        try:
            f, inliers = ransac_fundamental(pts_l, pts_r, threshold_px=threshold_px, seed=seed)
            counts["inliers"] = int(inliers.sum())
            # Zero-baseline geometry (an image matched against itself):
            # correspondences barely move, or F degenerates to antisymmetric.
            displacement = np.hypot(*(pts_l[inliers] - pts_r[inliers]).T)
            antisymmetric = float(np.linalg.norm(f.m + f.m.T))
            counts["degenerate"] = bool(
                (len(displacement) and float(np.median(displacement)) < 0.5)
                or antisymmetric < 1e-3
            )
        except ParameterError:
            # Every eight-point sample was rank deficient: all matches are
            # trivially consistent with the (undefined) geometry.
            counts["inliers"] = len(matches)
            counts["degenerate"] = True
    return counts


def evaluate_matching(
    pairs: list[tuple[str, str]],
    masks: dict[str, str] | None = None,
    seed: int = 0,
) -> EvaluationReport:
    """Match-count statistics per pair, with and without mask gating.

    Unreadable images produce a per-pair error entry; the run continues.
    """
    if not pairs:
        raise ParameterError("evaluate_matching needs at least one pair")
    masks = masks or {}
    report = EvaluationReport()
    totals = {"pairs": 0, "failed": 0, "inliers_masked": 0, "inliers_unmasked": 0}
    for left_path, right_path in pairs:
        entry = PairEvaluation(left=str(left_path), right=str(right_path)).to_dict()
        try:
            left = read_image(left_path)
            right = read_image(right_path)
            mask_l = read_mask(masks[str(left_path)]) if str(left_path) in masks else None
            mask_r = read_mask(masks[str(right_path)]) if str(right_path) in masks else None
            unmasked = _count_matches(left, right, None, None, seed)
            entry.update({k: unmasked[k] for k in (
                "keypoints_left", "keypoints_right", "raw_matches", "cross_checked", "inliers")})
            entry["degenerate_geometry"] = unmasked["degenerate"]
            if mask_l is not None or mask_r is not None:
                gated = _count_matches(left, right, mask_l, mask_r, seed)
                entry["masked"] = gated
                totals["inliers_masked"] += gated["inliers"]
            if mask_l is not None:
                entry["caustics_percent_left"] = mask_fraction(mask_l)
            if mask_r is not None:
                entry["caustics_percent_right"] = mask_fraction(mask_r)
            totals["inliers_unmasked"] += unmasked["inliers"]
            totals["pairs"] += 1
        except OSError as exc:
            entry["error"] = str(exc)
            totals["failed"] += 1
        report.pairs.append(entry)
    report.aggregate = totals
    return report


def build_segmenter(config: PipelineConfig):
    """Resolve the configured segmentation method to a mask-producing callable."""
    seg = config.segmentation

    if seg.method == "external":
        mask_root = Path(seg.mask_in)

        def external(img: RasterImage, path: str) -> BinaryMask:
            candidate = mask_root / (Path(path).stem + ".png") if mask_root.is_dir() else mask_root
            return read_mask(candidate)

        return external

    if seg.method == "threshold":
        def threshold(img: RasterImage, path: str) -> BinaryMask:
            return threshold_classifier(rgb_to_lab(img), seg.threshold)

        return threshold

    train_img = read_image(seg.train_image)
    train_mask = read_mask(seg.train_mask)
    feats = compute_pixel_features(rgb_to_lab(train_img))
    kind = "knn" if seg.method == "knn" else "decision_tree"
    classifier = train_classifier(
        kind, feats.reshape(-1, feats.shape[-1]), train_mask.caustics.ravel()
    )

    def learned(img: RasterImage, path: str) -> BinaryMask:
        grid = extract_patches(img, seg.patch_size, seg.stride)
        return predict_mask(img, classifier, grid)

    return learned


def run_pipeline(
    config: PipelineConfig,
    out_dir: str | Path | None = None,
    debug_dir: str | Path | None = None,
) -> EvaluationReport:
    """Execute segment, transfer, rectify, disparity, and correct per pair.

    Writes all artifacts plus the effective configuration and the report
    JSON under the output directory. Stage failures raise PipelineError
    with the stage name; unreadable inputs abort the affected pair only.
    With ``debug_dir`` the rectified intermediates are dumped per pair.
    """
    config.validate()
    root = Path(out_dir if out_dir is not None else config.out_dir)
    root.mkdir(parents=True, exist_ok=True)
    config.save(root / "effective_config.json")

    calib = read_calibration(config.calibration) if config.calibration else None
    segmenter = None
    if config.needs_segmentation():
        try:
            segmenter = build_segmenter(config)
        except (OSError, ParameterError) as exc:
            raise PipelineError("segment", str(exc)) from exc

    mask_cache: dict[str, BinaryMask] = {}

    def mask_for(img: RasterImage, path) -> BinaryMask:
        key = str(path)
        if key not in mask_cache:
            if key in config.masks:
                mask_cache[key] = read_mask(config.masks[key])
            else:
                mask_cache[key] = segmenter(img, key)
        return mask_cache[key]

    block_stats = None
    if config.transfer.scope == "block":
        block_stats = _block_statistics(config, mask_for)

    report = EvaluationReport()
    totals = {"pairs": 0, "failed": 0, "replaced_pixels": 0, "inlier_change_percent": []}
    for index, (left_path, right_path) in enumerate(config.pairs):
        pair_dir = root / f"pair_{index:03d}"
        pair_dir.mkdir(exist_ok=True)
        entry: dict = {"left": str(left_path), "right": str(right_path)}
        pair_debug = Path(debug_dir) / f"pair_{index:03d}" if debug_dir else None
        try:
            _run_single_pair(
                config, calib, mask_for, left_path, right_path, pair_dir, entry,
                debug_dir=pair_debug, donor_target_stats=block_stats,
            )
            totals["pairs"] += 1
            totals["replaced_pixels"] += entry["replaced_pixels"]
            if entry.get("inlier_change_percent") is not None:
                totals["inlier_change_percent"].append(entry["inlier_change_percent"])
        except InsufficientMatchesError as exc:
            raise PipelineError(exc.stage, str(exc)) from exc
        except OSError as exc:
            entry["error"] = str(exc)
            totals["failed"] += 1
        report.pairs.append(entry)
    if totals["inlier_change_percent"]:
        totals["mean_inlier_change_percent"] = float(
            np.mean(totals["inlier_change_percent"])
        )
    report.aggregate = totals
    report.save(root / "report.json")
    return report


def _block_statistics(config: PipelineConfig, mask_for):
    """Pooled non-caustics color statistics over every image in the block."""
    entries = []
    weights = []
    seen = []
    for pair in config.pairs:
        for path in pair:
            if path in seen:
                continue
            seen.append(path)
            img = read_image(path)
            if img.channels != 3:
                continue
            mask = mask_for(img, path)
            entries.append(channel_stats(rgb_to_lab(img), mask))
            weights.append(int(mask.non_caustics.sum()))
    if not entries:
        return None
    return pooled_stats(entries, weights)


def _run_single_pair(
    config, calib, mask_for, left_path, right_path, pair_dir, entry,
    debug_dir=None, donor_target_stats=None,
):
    left = read_image(left_path)
    right = read_image(right_path)
    mask_l = mask_for(left, left_path)
    mask_r = mask_for(right, right_path)
    write_mask(pair_dir / "mask_left.png", mask_l)
    write_mask(pair_dir / "mask_right.png", mask_r)
    entry["caustics_percent_left"] = mask_fraction(mask_l)
    entry["caustics_percent_right"] = mask_fraction(mask_r)

    sgm = SgmParams(
        d_min=config.sgm.d_min,
        d_max=config.sgm.d_max,
        p1=config.sgm.p1,
        p2=config.sgm.p2,
        cost_kind=config.sgm.cost_kind(),
        lr_threshold=config.sgm.lr_threshold,
        median_window=config.sgm.median_window,
    )
    result = correct_pair(
        left, right, mask_l, mask_r,
        calib=calib,
        sgm=sgm,
        seed=config.ransac.seed,
        ransac_threshold_px=config.ransac.threshold_px,
        confidence=config.ransac.confidence,
        max_keypoints=config.ransac.max_keypoints,
        donor_target_stats=donor_target_stats,
    )

    write_image(pair_dir / "corrected_left.png", result.left)
    write_image(pair_dir / "corrected_right.png", result.right)
    geometry = result.geometry
    write_matrix_json(pair_dir / "fundamental.json", "F", geometry.fundamental.m)
    write_matrix_json(pair_dir / "h_left.json", "H", geometry.pair.h_left)
    write_matrix_json(pair_dir / "h_right.json", "H", geometry.pair.h_right)
    bundle = result.bundle
    write_disparity_png(
        pair_dir / "disparity_left.png", bundle.disp_left.values, bundle.disp_left.values.min()
    )
    write_disparity_png(
        pair_dir / "disparity_right.png", bundle.disp_right.values, bundle.disp_right.values.min()
    )
    write_status_png(pair_dir / "status_left.png", result.status_left_raw)
    write_status_png(pair_dir / "status_right.png", result.status_right_raw)
    if debug_dir is not None:
        debug_dir.mkdir(parents=True, exist_ok=True)
        write_image(debug_dir / "rectified_left.png", bundle.left)
        write_image(debug_dir / "rectified_right.png", bundle.right)
        write_image(debug_dir / "donor_right.png", bundle.donor_right)
        write_mask(debug_dir / "rectified_mask_left.png", bundle.mask_left)
        write_mask(debug_dir / "rectified_mask_right.png", bundle.mask_right)

    entry.update(
        {
            "keypoints_left": geometry.keypoints_left,
            "keypoints_right": geometry.keypoints_right,
            "raw_matches": geometry.raw_matches,
            "cross_checked": geometry.cross_checked,
            "inliers": geometry.inliers,
            "replaced_pixels": result.report_left.replaced_pixels
            + result.report_right.replaced_pixels,
            "report_left": result.report_left.to_dict(),
            "report_right": result.report_right.to_dict(),
        }
    )

    # Before/after delta: matches on the corrected pair without mask gating
    # versus the uncorrected pair without gating.
    before = _count_matches(left, right, None, None, config.ransac.seed)
    after = _count_matches(result.left, result.right, None, None, config.ransac.seed)
    entry["matches_before"] = before
    entry["matches_after"] = after
    if before["inliers"] > 0:
        entry["inlier_change_percent"] = (
            100.0 * (after["inliers"] - before["inliers"]) / before["inliers"]
        )
    else:
        entry["inlier_change_percent"] = None
