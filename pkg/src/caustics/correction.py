"""Pixelwise replacement of caustics pixels and back-projection.

Within the rectified frame, every caustics pixel whose geometric
correspondent in the overlapping view (located through the disparity map)
is itself non-caustics receives that donor's color; everything else is
left untouched. Corrected content is then composited back onto the
original camera frame so non-replaced pixels stay bit-identical.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .colortransfer import ChannelStats, channel_stats, transfer_color
from .epipolar import (
    FundamentalMatrix,
    MatchSet,
    RectifyingPair,
    detect_masked_features,
    match_descriptors,
    ransac_fundamental,
    rectify_pair,
    warp_image,
    warp_mask,
)
from .errors import DimensionError, InsufficientMatchesError, ParameterError
from .image import (
    BinaryMask,
    CameraCalibration,
    RasterImage,
    bilinear_sample,
    float_to_u8,
    lab_to_rgb,
    rgb_to_lab,
    undistort,
    undistort_mask,
)
from .stereo import DisparityMap, SgmParams, compute_disparity

logger = logging.getLogger(__name__)

MIN_MATCHES = 8


@dataclass(frozen=True)
class RectifiedBundle:
    """Everything the replacement step needs, all in one rectified frame."""

    left: RasterImage
    right: RasterImage
    mask_left: BinaryMask
    mask_right: BinaryMask
    disp_left: DisparityMap
    disp_right: DisparityMap
    pair: RectifyingPair
    valid_left: np.ndarray
    valid_right: np.ndarray
    donor_left: RasterImage | None = None
    donor_right: RasterImage | None = None

    def __post_init__(self):
        w, h = self.pair.size
        rasters = [
            (self.left.height, self.left.width),
            (self.right.height, self.right.width),
            (self.mask_left.height, self.mask_left.width),
            (self.mask_right.height, self.mask_right.width),
            self.disp_left.values.shape,
            self.disp_right.values.shape,
            self.valid_left.shape,
            self.valid_right.shape,
        ]
        if any(r != (h, w) for r in rasters):
            raise DimensionError("bundle rasters must all share the rectified frame size")
        if not (self.disp_left.valid.all() and self.disp_right.valid.all()):
            raise ParameterError("bundle disparities must be dense (post-interpolation)")


@dataclass
class CorrectionReport:
    """Accounting of the replacement pass over one rectified frame."""

    caustics_pixels: int
    replaced_pixels: int
    unreplaceable_pixels: int

    @property
    def replaced_fraction(self) -> float:
        if self.caustics_pixels == 0:
            return 0.0
        return self.replaced_pixels / self.caustics_pixels

    def to_dict(self) -> dict:
        return {
            "caustics_pixels": self.caustics_pixels,
            "replaced_pixels": self.replaced_pixels,
            "unreplaceable_pixels": self.unreplaceable_pixels,
            "replaced_fraction": self.replaced_fraction,
        }

    def merged_with(self, other: "CorrectionReport") -> "CorrectionReport":
        return CorrectionReport(
            caustics_pixels=self.caustics_pixels + other.caustics_pixels,
            replaced_pixels=self.replaced_pixels + other.replaced_pixels,
            unreplaceable_pixels=self.unreplaceable_pixels + other.unreplaceable_pixels,
        )


def replace_pixels(
    bundle: RectifiedBundle, direction: str
) -> tuple[RasterImage, CorrectionReport, np.ndarray]:
    """Replace caustics pixels from the other view along epipolar rows.

    Args:
        bundle: rectified images, masks, and dense disparities.
        direction: "fix_left" or "fix_right".

    Returns:
        (corrected image, report, replaced mask). Donor columns are sampled
        at subpixel x with the two horizontal neighbors; both neighbors must
        be valid non-caustics pixels or the target stays untouched and is
        counted unreplaceable. Non-caustics pixels are never modified.
    """
    if direction == "fix_left":
        target_img = bundle.left
        target_mask = bundle.mask_left
        target_valid = bundle.valid_left
        donor_img = bundle.donor_right if bundle.donor_right is not None else bundle.right
        donor_mask = bundle.mask_right
        donor_valid = bundle.valid_right
        disparity = bundle.disp_left.values
        sign = 1  # donor column = x - d
    elif direction == "fix_right":
        target_img = bundle.right
        target_mask = bundle.mask_right
        target_valid = bundle.valid_right
        donor_img = bundle.donor_left if bundle.donor_left is not None else bundle.left
        donor_mask = bundle.mask_left
        donor_valid = bundle.valid_left
        disparity = bundle.disp_right.values
        sign = -1  # donor column = x + d
    else:
        raise ParameterError(f"direction must be fix_left or fix_right, got {direction!r}")

    h, w = disparity.shape
    targets = target_mask.caustics & target_valid
    n_caustics = int(targets.sum())
    out = np.array(target_img.as_float(), copy=True)
    replaced = np.zeros((h, w), dtype=bool)
    if n_caustics == 0:
        report = CorrectionReport(0, 0, 0)
        return _with_depth(out, target_img), report, replaced

    ty, tx = np.nonzero(targets)
    donor_x = tx - sign * disparity[ty, tx]
    x0 = np.floor(donor_x).astype(int)
    frac = donor_x - x0
    # A zero-weight neighbor places no constraint on the donor sample.
    exact = frac < 1e-6
    x1 = np.where(exact, x0, x0 + 1)

    wd = donor_img.width
    in_bounds = (x0 >= 0) & (x1 <= wd - 1)
    x0c = np.clip(x0, 0, wd - 1)
    x1c = np.clip(x1, 0, wd - 1)
    donor_ok = (
        in_bounds
        & donor_valid[ty, x0c]
        & donor_valid[ty, x1c]
        & donor_mask.non_caustics[ty, x0c]
        & donor_mask.non_caustics[ty, x1c]
    )

    donor_f = donor_img.as_float()
    ry = ty[donor_ok]
    v0 = donor_f[ry, x0c[donor_ok]]
    v1 = donor_f[ry, x1c[donor_ok]]
    t = frac[donor_ok]
    if donor_f.ndim == 3:
        t = t[:, None]
    out[ry, tx[donor_ok]] = v0 * (1.0 - t) + v1 * t
    replaced[ry, tx[donor_ok]] = True

    n_replaced = int(donor_ok.sum())
    report = CorrectionReport(
        caustics_pixels=n_caustics,
        replaced_pixels=n_replaced,
        unreplaceable_pixels=n_caustics - n_replaced,
    )
    return _with_depth(out, target_img), report, replaced


def _with_depth(float_data: np.ndarray, like: RasterImage) -> RasterImage:
    if like.depth == "u8":
        return RasterImage(float_to_u8(float_data))
    return RasterImage(float_data.astype(np.float32))


def back_project(
    corrected_rect: RasterImage,
    original: RasterImage,
    h: np.ndarray,
    replaced_mask_rect: np.ndarray,
    original_caustics: np.ndarray | None = None,
) -> RasterImage:
    """Composite replaced rectified pixels back onto the original frame.

    Only original pixels whose rectified-space location was actually
    replaced are rewritten (inverse warp with bilinear sampling); every
    other pixel keeps its original bits, so there is no global resampling.
    When the original-frame caustics mask is given, compositing is further
    restricted to it, which keeps non-caustics pixels bit-identical even
    where mask warping rounds across a label boundary.
    """
    h = np.asarray(h, dtype=np.float64)
    det = np.linalg.det(h)
    if not np.isfinite(det) or abs(det) < 1e-12:
        raise ParameterError("rectifying homography is singular")
    hh, ww = original.height, original.width
    ys, xs = np.mgrid[0:hh, 0:ww].astype(np.float64)
    denom = h[2, 0] * xs + h[2, 1] * ys + h[2, 2]
    denom = np.where(np.abs(denom) < 1e-15, 1e-15, denom)
    rx = (h[0, 0] * xs + h[0, 1] * ys + h[0, 2]) / denom
    ry = (h[1, 0] * xs + h[1, 1] * ys + h[1, 2]) / denom

    hit, _ = nearest_bool(replaced_mask_rect, rx, ry)
    if original_caustics is not None:
        hit &= original_caustics
    if not hit.any():
        return original
    values, valid = bilinear_sample(corrected_rect.as_float().astype(np.float64), rx, ry)
    hit &= valid
    out = np.array(original.data, copy=True)
    if original.depth == "u8":
        out[hit] = float_to_u8(values[hit])
    else:
        out[hit] = values[hit].astype(np.float32)
    return RasterImage(out)


def nearest_bool(mask: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-neighbor lookup in a boolean raster; outside lookups are False."""
    h, w = mask.shape
    xi = np.floor(xs + 0.5).astype(int)
    yi = np.floor(ys + 0.5).astype(int)
    valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    out = np.zeros(xs.shape, dtype=bool)
    out[valid] = mask[yi[valid], xi[valid]]
    return out, valid


@dataclass
class PairGeometry:
    """Matching and rectification byproducts kept for reports and debugging."""

    keypoints_left: int
    keypoints_right: int
    raw_matches: int
    cross_checked: int
    inliers: int
    fundamental: FundamentalMatrix | None = None
    pair: RectifyingPair | None = None
    matches: MatchSet | None = None


@dataclass
class CorrectPairResult:
    left: RasterImage
    right: RasterImage
    report_left: CorrectionReport
    report_right: CorrectionReport
    geometry: PairGeometry
    bundle: RectifiedBundle | None = None
    replaced_left: np.ndarray | None = None
    replaced_right: np.ndarray | None = None
    status_left_raw: np.ndarray | None = None
    status_right_raw: np.ndarray | None = None


def estimate_pair_geometry(
    left: RasterImage,
    right: RasterImage,
    mask_left: BinaryMask,
    mask_right: BinaryMask,
    seed: int = 0,
    threshold_px: float = 1.0,
    confidence: float = 0.999,
    max_keypoints: int = 2000,
) -> tuple[PairGeometry, np.ndarray, np.ndarray]:
    """Masked detection, matching, and robust F estimation for one pair.

    Returns the geometry record plus the inlier coordinate arrays.

    Raises:
        InsufficientMatchesError: fewer than 8 cross-checked matches or
            fewer than 8 RANSAC inliers.
    """
    kp_l, desc_l = detect_masked_features(left, mask_left, max_kp=max_keypoints)
    kp_r, desc_r = detect_masked_features(right, mask_right, max_kp=max_keypoints)
    matches = match_descriptors(desc_l, desc_r)
    geometry = PairGeometry(
        keypoints_left=len(kp_l),
        keypoints_right=len(kp_r),
        raw_matches=matches.ratio_match_count,
        cross_checked=len(matches),
        inliers=0,
        matches=matches,
    )
    if len(matches) < MIN_MATCHES:
        raise InsufficientMatchesError()
    pts_l = kp_l.coordinates()[matches.left_index]
    pts_r = kp_r.coordinates()[matches.right_index]
    f, inliers = ransac_fundamental(
        pts_l, pts_r, threshold_px=threshold_px, confidence=confidence, seed=seed
    )
    matches.inliers = inliers
    geometry.inliers = int(inliers.sum())
    geometry.fundamental = f
    if geometry.inliers < MIN_MATCHES:
        raise InsufficientMatchesError(stage="ransac")
    return geometry, pts_l[inliers], pts_r[inliers]


def _disparity_range_from_inliers(
    pair: RectifyingPair, pts_l: np.ndarray, pts_r: np.ndarray, margin: int = 12
) -> tuple[int, int]:
    def apply(h, pts):
        ph = np.column_stack([pts, np.ones(len(pts))])
        q = ph @ h.T
        return q[:, :2] / q[:, 2:]

    xl = apply(pair.h_left, pts_l)
    xr = apply(pair.h_right, pts_r)
    d = xl[:, 0] - xr[:, 0]
    return int(np.floor(d.min())) - margin, int(np.ceil(d.max())) + margin


def correct_pair(
    left: RasterImage,
    right: RasterImage,
    mask_left: BinaryMask,
    mask_right: BinaryMask,
    calib: CameraCalibration | None = None,
    sgm: SgmParams | None = None,
    seed: int = 0,
    ransac_threshold_px: float = 1.0,
    confidence: float = 0.999,
    max_keypoints: int = 2000,
    donor_target_stats: ChannelStats | None = None,
) -> CorrectPairResult:
    """Run the whole correction chain on one overlapping pair.

    Color transfer (donor toward recipient, non-caustics statistics),
    mask-gated matching, robust F, rectification, dense disparity for both
    frames, replacement in both directions, and back-projection onto the
    original frames. Images with empty masks pass through bit-identical.
    ``donor_target_stats`` replaces the per-recipient statistics with a
    shared target (block-wide transfer across a multi-view set).
    """
    if (left.height, left.width) != (mask_left.height, mask_left.width) or (
        right.height,
        right.width,
    ) != (mask_right.height, mask_right.width):
        raise DimensionError("mask dimensions must match their images")

    if calib is not None:
        left, _ = undistort(left, calib)
        right, _ = undistort(right, calib)
        mask_left = undistort_mask(mask_left, calib)
        mask_right = undistort_mask(mask_right, calib)

    geometry, in_l, in_r = estimate_pair_geometry(
        left, right, mask_left, mask_right,
        seed=seed, threshold_px=ransac_threshold_px,
        confidence=confidence, max_keypoints=max_keypoints,
    )
    pair = rectify_pair(
        geometry.fundamental, (left.width, left.height), (right.width, right.height)
    )
    geometry.pair = pair

    rect_l, valid_l = warp_image(left.to_float_image(), pair.h_left, pair.size)
    rect_r, valid_r = warp_image(right.to_float_image(), pair.h_right, pair.size)
    rmask_l, _ = warp_mask(mask_left, pair.h_left, pair.size)
    rmask_r, _ = warp_mask(mask_right, pair.h_right, pair.size)

    # Donor images are color-matched to the image they will patch. Stats come
    # from valid non-caustics pixels so caustics brightness cannot bias them.
    lab_l = rgb_to_lab(rect_l) if rect_l.channels == 3 else None
    if lab_l is not None:
        lab_r = rgb_to_lab(rect_r)
        stats_mask_l = BinaryMask(rmask_l.caustics | ~valid_l)
        stats_mask_r = BinaryMask(rmask_r.caustics | ~valid_r)
        stats_l = channel_stats(lab_l, stats_mask_l)
        stats_r = channel_stats(lab_r, stats_mask_r)
        target_for_l = donor_target_stats or stats_l
        target_for_r = donor_target_stats or stats_r
        donor_r = lab_to_rgb(transfer_color(lab_r, target_for_l, stats_r))
        donor_l = lab_to_rgb(transfer_color(lab_l, target_for_r, stats_l))
        match_r = donor_r
    else:
        donor_r = rect_r
        donor_l = rect_l
        match_r = rect_r

    if sgm is None:
        sgm = SgmParams()
    if sgm.d_min is None or sgm.d_max is None:
        d_min, d_max = _disparity_range_from_inliers(pair, in_l, in_r)
        sgm = replace(sgm, d_min=d_min, d_max=d_max)
    logger.info("disparity search range [%d, %d]", sgm.d_min, sgm.d_max)
    # Caustics pixels carry corrupted intensity, so they contribute no
    # matching evidence: their cost fibers are neutralized like pixels
    # outside the warp footprint and the disparity there is recovered by
    # propagation from clean neighbors.
    trusted_l = valid_l & rmask_l.non_caustics
    trusted_r = valid_r & rmask_r.non_caustics
    stereo = compute_disparity(rect_l, match_r, sgm, validity=(trusted_l, trusted_r))

    bundle = RectifiedBundle(
        left=rect_l,
        right=rect_r,
        mask_left=rmask_l,
        mask_right=rmask_r,
        disp_left=stereo.left,
        disp_right=stereo.right,
        pair=pair,
        valid_left=valid_l,
        valid_right=valid_r,
        donor_left=donor_l,
        donor_right=donor_r,
    )
    corrected_l_rect, report_l, replaced_l = replace_pixels(bundle, "fix_left")
    corrected_r_rect, report_r, replaced_r = replace_pixels(bundle, "fix_right")

    final_l = back_project(corrected_l_rect, left, pair.h_left, replaced_l, mask_left.caustics)
    final_r = back_project(corrected_r_rect, right, pair.h_right, replaced_r, mask_right.caustics)
    return CorrectPairResult(
        left=final_l,
        right=final_r,
        report_left=report_l,
        report_right=report_r,
        geometry=geometry,
        bundle=bundle,
        replaced_left=replaced_l,
        replaced_right=replaced_r,
        status_left_raw=stereo.left_raw_status,
        status_right_raw=stereo.right_raw_status,
    )
