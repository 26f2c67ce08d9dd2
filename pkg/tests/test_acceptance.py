"""Acceptance suite: one test per criterion, printing a PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines.
Criterion 9 needs the open R-CAUSTIC download and is skipped gracefully
when the environment variables pointing at it are absent (see README).
"""

import os
import time

import numpy as np
import pytest

from caustics.colortransfer import ChannelStats, channel_stats, transfer_color
from caustics.correction import correct_pair
from caustics.dataset import generate_ground_truth
from caustics.epipolar import (
    FundamentalMatrix,
    ransac_fundamental,
    rectify_pair,
    sampson_distance,
)
from caustics.image import BinaryMask, LabImage, RasterImage, lab_to_rgb, rgb_to_lab
from caustics.io import read_image, read_mask
from caustics.pipeline import evaluate_matching
from caustics.segmentation import compute_metrics
from caustics.stereo import (
    CostVolume,
    SgmParams,
    aggregate_single_direction,
    census_cost,
    compute_disparity,
)
from tests.conftest import (
    random_dot_pair,
    rendered_stereo_with_blob,
    smooth_texture,
    synthetic_two_camera_scene,
    to_rgb_image,
)


def _report(number: int, passed: bool, detail: str):
    print(f"ACCEPTANCE {number}: {'PASS' if passed else 'FAIL'} - {detail}")
    assert passed, f"criterion {number}: {detail}"


def test_criterion_1_color_transfer_moment_matching():
    rng = np.random.default_rng(100)
    start = time.monotonic()
    worst = 0.0
    for _ in range(100):
        shape = (int(rng.integers(8, 40)), int(rng.integers(8, 40)))
        source = LabImage(
            rng.normal(-1.0, 0.6, shape).astype(np.float32),
            rng.normal(0.0, 0.15, shape).astype(np.float32),
            rng.normal(0.0, 0.15, shape).astype(np.float32),
        )
        target_stats = ChannelStats(
            float(rng.normal(-1, 0.5)), float(rng.normal(0, 0.1)), float(rng.normal(0, 0.1)),
            float(rng.uniform(0.2, 1.5)), float(rng.uniform(0.05, 0.4)), float(rng.uniform(0.05, 0.4)),
        )
        out = transfer_color(source, target_stats, channel_stats(source))
        got = channel_stats(out)
        worst = max(
            worst,
            float(np.abs(got.means() - target_stats.means()).max()),
            float(np.abs(got.stds() - target_stats.stds()).max()),
        )
    # Identity case must be exact, not merely close.
    probe = LabImage(
        rng.normal(0, 1, (16, 16)).astype(np.float32),
        rng.normal(0, 1, (16, 16)).astype(np.float32),
        rng.normal(0, 1, (16, 16)).astype(np.float32),
    )
    stats = channel_stats(probe)
    identical = transfer_color(probe, stats, stats)
    identity_exact = (
        np.array_equal(identical.l, probe.l)
        and np.array_equal(identical.alpha, probe.alpha)
        and np.array_equal(identical.beta, probe.beta)
    )
    elapsed = time.monotonic() - start
    _report(
        1,
        worst <= 1e-5 and identity_exact and elapsed < 5.0,
        f"moment mismatch {worst:.2e} (tol 1e-5), identity exact: {identity_exact}, "
        f"{elapsed:.2f}s (< 5s)",
    )


def test_criterion_2_lab_round_trip():
    rng = np.random.default_rng(200)
    triples = rng.uniform(2 / 255, 1.0, size=(10_000, 1, 3)).astype(np.float32)
    img = RasterImage(triples.reshape(100, 100, 3))
    back = lab_to_rgb(rgb_to_lab(img))
    err = float(np.abs(back.data - img.data).max())
    _report(2, err <= 2 / 255, f"max round-trip error {err:.5f} (tol {2 / 255:.5f})")


def test_criterion_3_fundamental_matrix_ransac():
    start = time.monotonic()
    worst_recovery = 1.0
    worst_sampson = 0.0
    for trial in range(50):
        pts_l, pts_r, _, true_in = synthetic_two_camera_scene(
            seed=trial, n_points=200, noise=0.5, outlier_fraction=0.3
        )
        # The gate is matched to the noise level: at sigma = 0.5 px the
        # symmetric epipolar residual of a true inlier is ~0.7 px.
        f, flags = ransac_fundamental(pts_l, pts_r, threshold_px=2.5, seed=trial)
        worst_recovery = min(worst_recovery, float(flags[true_in].mean()))
        worst_sampson = max(
            worst_sampson, float(sampson_distance(f.m, pts_l[flags], pts_r[flags]).mean())
        )
    elapsed = time.monotonic() - start
    _report(
        3,
        worst_recovery >= 0.95 and worst_sampson <= 1.0 and elapsed < 30.0,
        f"worst inlier recovery {worst_recovery:.3f} (>= 0.95), worst mean Sampson "
        f"{worst_sampson:.3f} px (<= 1), {elapsed:.1f}s (< 30s)",
    )


def test_criterion_4_rectification_row_alignment():
    def apply_h(h, pts):
        ph = np.column_stack([pts, np.ones(len(pts))])
        q = ph @ h.T
        return q[:, :2] / q[:, 2:]

    worst = 1.0
    for trial in range(50):
        pts_l, pts_r, f_true, _ = synthetic_two_camera_scene(seed=trial, n_points=200)
        pair = rectify_pair(FundamentalMatrix(f_true), (640, 480), (640, 480))
        dy = np.abs(apply_h(pair.h_left, pts_l)[:, 1] - apply_h(pair.h_right, pts_r)[:, 1])
        worst = min(worst, float((dy <= 0.5).mean()))
    _report(4, worst >= 0.99, f"worst-scene fraction with |dy| <= 0.5 px: {worst:.4f} (>= 0.99)")


def _enumerated_path_oracle(costs: np.ndarray, p1: float, p2: float) -> np.ndarray:
    """Exhaustive enumeration over all disparity sequences per prefix length."""
    n, d = costs.shape
    best = np.full((n, d), np.inf)
    for length in range(1, n + 1):
        seqs = np.indices((d,) * length).reshape(length, -1).T  # (d^length, length)
        totals = costs[np.arange(length), seqs].sum(axis=1)
        if length > 1:
            jumps = np.abs(np.diff(seqs, axis=1))
            totals = totals + np.where(jumps == 0, 0.0, np.where(jumps == 1, p1, p2)).sum(axis=1)
        for dd in range(d):
            sel = seqs[:, -1] == dd
            best[length - 1, dd] = totals[sel].min()
    out = np.empty_like(best)
    out[0] = best[0]
    for i in range(1, n):
        out[i] = best[i] - best[i - 1].min()
    return out.astype(np.float32)


def test_criterion_5_sgm_oracle_equivalence():
    rng = np.random.default_rng(500)
    mismatches = 0
    for _ in range(200):
        levels = int(rng.integers(2, 6))  # search range <= 4
        strip = rng.integers(0, 26, (1, 8, levels)).astype(np.float32)
        params = SgmParams(d_min=0, d_max=levels - 1, p1=10.0, p2=120.0)
        got = aggregate_single_direction(CostVolume(strip, 0), 0, 1, params).costs[0]
        expected = _enumerated_path_oracle(strip[0], 10.0, 120.0)
        if not np.array_equal(got, expected):
            mismatches += 1
    _report(5, mismatches == 0, f"{mismatches} strips deviating from the exhaustive oracle (of 200)")


def test_criterion_6_sgm_accuracy_and_census_invariance():
    start = time.monotonic()
    left, right, d_gt, _ = random_dot_pair(
        seed=600,
        size=(240, 320),
        background=5,
        squares=((60, 180, 90, 250, 21), (20, 55, 30, 120, 12), (190, 230, 160, 300, 32)),
        model_occlusion=True,
    )
    params = SgmParams(d_min=0, d_max=32)
    result = compute_disparity(left, right, params)
    frac = float((np.abs(result.left.values - d_gt) <= 1.0).mean())

    remapped = np.sqrt(right, dtype=np.float32)  # strictly monotone remap
    plain = census_cost(left, right, params)
    warped = census_cost(left, remapped, params)
    changed_bits = int((plain.costs != warped.costs).sum())
    elapsed = time.monotonic() - start
    _report(
        6,
        frac >= 0.95 and changed_bits == 0 and elapsed < 60.0,
        f"pixels within 1 disparity: {frac:.4f} (>= 0.95), census bits changed by "
        f"remap: {changed_bits} (== 0), {elapsed:.1f}s (< 60s)",
    )


def test_criterion_7_replacement_correctness():
    left_clean, left_blob, right, blob, _ = rendered_stereo_with_blob()
    left_img = to_rgb_image(left_blob)
    right_img = to_rgb_image(right)
    result = correct_pair(
        left_img,
        right_img,
        BinaryMask(blob),
        BinaryMask.all_non_caustics(right_img.height, right_img.width),
        seed=0,
    )
    oracle = to_rgb_image(left_clean).data
    err = float(np.abs(result.left.data[blob] - oracle[blob]).max())
    clean = ~blob
    preserved = np.array_equal(result.left.data[clean], left_img.data[clean]) and np.array_equal(
        result.right.data, right_img.data
    )
    r = result.report_left
    accounting = r.caustics_pixels == r.replaced_pixels + r.unreplaceable_pixels
    _report(
        7,
        err <= 3 / 255 and preserved and accounting,
        f"replaced-region error {err:.5f} (tol {3 / 255:.5f}), non-caustics bit-identical: "
        f"{preserved}, accounting exact: {accounting} "
        f"({r.replaced_pixels}+{r.unreplaceable_pixels}=={r.caustics_pixels})",
    )


def test_criterion_8_ground_truth_tooling():
    base = smooth_texture(800, (128, 128))
    blob = np.zeros((128, 128), dtype=bool)
    blob[44:76, 40:80] = True
    overlaid = np.clip(base + 0.6 * blob, 0, 1).astype(np.float32)
    img, ref = to_rgb_image(overlaid), to_rgb_image(base)
    mask, _, _ = generate_ground_truth(img, ref, blur_kernel=5, threshold=90)
    inter = int((mask.caustics & blob).sum())
    union = int((mask.caustics | blob).sum())
    iou = inter / union

    monotone = True
    previous = None
    for threshold in np.linspace(20, 230, 10).astype(int):
        sweep_mask, _, _ = generate_ground_truth(img, ref, blur_kernel=5, threshold=int(threshold))
        count = int(sweep_mask.caustics.sum())
        if previous is not None and count > previous:
            monotone = False
        previous = count
    _report(
        8,
        iou >= 0.9 and monotone,
        f"blob IoU {iou:.3f} (>= 0.9), 10-step threshold sweep monotone: {monotone}",
    )


_RC_SELF_VARS = ("CAUSTICS_RC_CLEAN", "CAUSTICS_RC_T0", "CAUSTICS_RC_T1")
_RC_PAIR_VARS = (
    "CAUSTICS_RC_LEFT",
    "CAUSTICS_RC_RIGHT",
    "CAUSTICS_RC_LEFT_MASK",
    "CAUSTICS_RC_RIGHT_MASK",
)


def test_criterion_9_dataset_directional_reproduction():
    if not all(v in os.environ for v in _RC_SELF_VARS + _RC_PAIR_VARS):
        print("ACCEPTANCE 9: SKIP - R-CAUSTIC files not configured (see README)")
        pytest.skip("R-CAUSTIC download not configured")
    clean = os.environ["CAUSTICS_RC_CLEAN"]
    t0 = os.environ["CAUSTICS_RC_T0"]
    t1 = os.environ["CAUSTICS_RC_T1"]
    report = evaluate_matching([(clean, clean), (t0, t1)], seed=0)
    self_match = report.pairs[0]["inliers"]
    cross_time = report.pairs[1]["inliers"]
    ratio_ok = self_match >= 5 * max(cross_time, 1)

    left = read_image(os.environ["CAUSTICS_RC_LEFT"])
    right = read_image(os.environ["CAUSTICS_RC_RIGHT"])
    mask_l = read_mask(os.environ["CAUSTICS_RC_LEFT_MASK"])
    mask_r = read_mask(os.environ["CAUSTICS_RC_RIGHT_MASK"])
    result = correct_pair(left, right, mask_l, mask_r, seed=0)
    before = evaluate_matching(
        [(os.environ["CAUSTICS_RC_LEFT"], os.environ["CAUSTICS_RC_RIGHT"])], seed=0
    ).pairs[0]["cross_checked"]
    from caustics.epipolar import detect_masked_features, match_descriptors

    _, desc_l = detect_masked_features(result.left, None)
    _, desc_r = detect_masked_features(result.right, None)
    after = len(match_descriptors(desc_l, desc_r))
    increase_ok = after >= 1.10 * before
    _report(
        9,
        ratio_ok and increase_ok,
        f"self-match {self_match} vs cross-time {cross_time} (>= 5x: {ratio_ok}); "
        f"cross-checked matches {before} -> {after} (>= +10%: {increase_ok})",
    )


def test_criterion_10_out_of_scope_substitutions_documented():
    # Deep-model F1/accuracy tables and dense point-cloud metrics are out of
    # scope; the property suites above stand in for them. This criterion
    # records the substitution and the availability of the stand-ins.
    substitutes = {
        "classifier metrics": compute_metrics,
        "match evaluation": evaluate_matching,
    }
    present = all(callable(v) for v in substitutes.values())
    _report(
        10,
        present,
        "deep-model tables and dense 3D metrics substituted by the property "
        f"suites ({', '.join(substitutes)}): available {present}",
    )
