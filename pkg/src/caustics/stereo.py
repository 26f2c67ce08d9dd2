"""Dense disparity on rectified pairs by semi-global matching.

Pipeline: pixelwise matching cost (5x5 census by default, mutual
information as the radiometrically robust alternative), pathwise cost
aggregation along 8 line directions, winner-takes-all selection with
subpixel refinement, left/right consistency with occlusion/mismatch
classification, 8-path median interpolation of the gaps, and a final
median filter.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DimensionError, ParameterError
from .image import RasterImage, median_filter_array

VALID = 0
OCCLUDED = 1
MISMATCHED = 2

CENSUS_BITS = 25  # 5x5 window, center bit always zero
CENSUS_MAX_COST = float(CENSUS_BITS)

# Aggregation directions: rows, columns, and both diagonals, both ways.
_DIRECTIONS = ((0, 1), (0, -1), (1, 0), (-1, 0), (1, 1), (-1, -1), (1, -1), (-1, 1))

_BIG = np.float32(1e9)


@dataclass
class SgmParams:
    """Matching configuration; penalties are in cost units of the chosen kind.

    A None search range means "resolve automatically"; the pair-correction
    pipeline fills it from the rectified inlier matches before matching runs.
    """

    d_min: int | None = None
    d_max: int | None = None
    p1: float = 10.0
    p2: float = 120.0
    cost_kind: str = "census"
    lr_threshold: float = 1.0
    median_window: int = 3

    def __post_init__(self):
        if self.d_min is not None and self.d_max is not None and self.d_max <= self.d_min:
            raise ParameterError("d_max must exceed d_min")
        if not self.p2 > self.p1 > 0:
            raise ParameterError("penalties must satisfy p2 > p1 > 0")
        if self.cost_kind not in ("census", "mutual_information"):
            raise ParameterError(f"unknown cost kind {self.cost_kind!r}")
        if self.median_window % 2 == 0 or self.median_window < 1:
            raise ParameterError("median window must be odd")

    def require_range(self) -> None:
        if self.d_min is None or self.d_max is None:
            raise ParameterError("disparity search range is unresolved")

    @property
    def n_disparities(self) -> int:
        self.require_range()
        return self.d_max - self.d_min + 1


@dataclass
class CostVolume:
    """(H, W, D) matching costs; plane i corresponds to disparity d_min + i."""

    costs: np.ndarray
    d_min: int

    @property
    def n_disparities(self) -> int:
        return self.costs.shape[2]


@dataclass
class DisparityMap:
    """Float disparities with a per-pixel status; invalid pixels hold NaN."""

    values: np.ndarray
    status: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.status.shape:
            raise DimensionError("values and status must share a shape")

    @property
    def valid(self) -> np.ndarray:
        return self.status == VALID

    @classmethod
    def all_valid(cls, values: np.ndarray) -> "DisparityMap":
        return cls(values.astype(np.float32), np.zeros(values.shape, dtype=np.uint8))


@dataclass
class StereoResult:
    """Dense all-valid maps for both frames plus pre-interpolation statuses."""

    left: DisparityMap
    right: DisparityMap
    left_raw_status: np.ndarray
    right_raw_status: np.ndarray


def _as_gray(img) -> np.ndarray:
    if isinstance(img, RasterImage):
        if img.channels != 1:
            return img.luminance().astype(np.float32)
        return img.as_float()
    arr = np.asarray(img, dtype=np.float32)
    if arr.ndim != 2:
        raise DimensionError("stereo inputs must be single-channel")
    return arr


def census_transform(gray: np.ndarray) -> np.ndarray:
    """5x5 census bitstrings (uint32); borders replicate.

    Each bit records whether a window pixel is strictly darker than the
    center, so any strictly monotone intensity remap leaves the transform
    bit-identical.
    """
    h, w = gray.shape
    padded = np.pad(gray, 2, mode="edge")
    out = np.zeros((h, w), dtype=np.uint32)
    for dy in range(-2, 3):
        for dx in range(-2, 3):
            nb = padded[2 + dy : 2 + dy + h, 2 + dx : 2 + dx + w]
            out = (out << np.uint32(1)) | (nb < gray).astype(np.uint32)
    return out


def census_cost(left, right, params: SgmParams, sign: int = 1) -> CostVolume:
    """Hamming-distance cost volume between census transforms.

    ``sign`` selects the reference frame: +1 matches the left image against
    right samples at x - d, -1 matches the right image against left samples
    at x + d. Out-of-range donor columns cost the descriptor bit count (25).
    """
    base = _as_gray(left if sign > 0 else right)
    other = _as_gray(right if sign > 0 else left)
    if base.shape[0] != other.shape[0]:
        raise DimensionError("rectified images must have equal heights")
    cb = census_transform(base)
    co = census_transform(other)
    h, w = cb.shape
    wo = co.shape[1]
    vol = np.full((h, w, params.n_disparities), CENSUS_MAX_COST, dtype=np.float32)
    for i, d in enumerate(range(params.d_min, params.d_max + 1)):
        shift = sign * d  # donor column = x - shift
        if shift >= 0:
            n = min(w - shift, wo)
            if n <= 0:
                continue
            x = np.bitwise_xor(cb[:, shift : shift + n], co[:, :n])
            vol[:, shift : shift + n, i] = np.bitwise_count(x)
        else:
            n = min(w, wo + shift)
            if n <= 0:
                continue
            x = np.bitwise_xor(cb[:, :n], co[:, -shift : -shift + n])
            vol[:, :n, i] = np.bitwise_count(x)
    return CostVolume(vol, params.d_min)


def _entropy_tables(
    base_q: np.ndarray, other_q: np.ndarray, init: np.ndarray, sign: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray] | None:
    h, w = base_q.shape
    xs = np.arange(w)[None, :] - sign * np.round(init).astype(int)
    ys = np.broadcast_to(np.arange(h)[:, None], (h, w))
    ok = (xs >= 0) & (xs < other_q.shape[1])
    pairs_b = base_q[ok]
    pairs_o = other_q[ys[ok], xs[ok]]
    n = len(pairs_b)
    if n < 2:
        return None
    joint = np.zeros((256, 256), dtype=np.float64)
    np.add.at(joint, (pairs_b, pairs_o), 1.0)
    joint /= n
    sigma = 1.5
    tiny = 1e-12

    def entropy2(p):
        return -ndimage.gaussian_filter(np.log(ndimage.gaussian_filter(p, sigma) + tiny), sigma)

    def entropy1(p):
        return -ndimage.gaussian_filter1d(
            np.log(ndimage.gaussian_filter1d(p, sigma) + tiny), sigma
        )

    h12 = entropy2(joint)
    h1 = entropy1(joint.sum(axis=1))
    h2 = entropy1(joint.sum(axis=0))
    return h12, h1, h2


def mi_cost(left, right, init_disparity: DisparityMap, params: SgmParams, sign: int = 1) -> CostVolume:
    """Mutual-information matching cost from the joint intensity histogram.

    Needs an initial disparity estimate (hierarchical use: a half-resolution
    census pass). Degenerate histograms (constant images) fall back to the
    census cost with a warning. The per-pair cost table is rescaled to
    [0, 24] so the default penalties behave like the census configuration.
    """
    base = _as_gray(left if sign > 0 else right)
    other = _as_gray(right if sign > 0 else left)
    if base.std() == 0.0 or other.std() == 0.0:
        warnings.warn("mi_cost: degenerate intensity histogram, falling back to census")
        return census_cost(left, right, params, sign=sign)
    base_q = np.clip(np.round(base * 255.0), 0, 255).astype(np.intp)
    other_q = np.clip(np.round(other * 255.0), 0, 255).astype(np.intp)
    tables = _entropy_tables(base_q, other_q, init_disparity.values, sign)
    if tables is None:
        warnings.warn("mi_cost: no overlapping pixels under the init disparity, using census")
        return census_cost(left, right, params, sign=sign)
    h12, h1, h2 = tables
    table = h12 - h1[:, None] - h2[None, :]
    table -= table.min()
    peak = table.max()
    if peak > 0:
        table *= 24.0 / peak
    table = table.astype(np.float32)

    h, w = base_q.shape
    wo = other_q.shape[1]
    vol = np.full((h, w, params.n_disparities), CENSUS_MAX_COST, dtype=np.float32)
    for i, d in enumerate(range(params.d_min, params.d_max + 1)):
        shift = sign * d
        if shift >= 0:
            n = min(w - shift, wo)
            if n <= 0:
                continue
            vol[:, shift : shift + n, i] = table[base_q[:, shift : shift + n], other_q[:, :n]]
        else:
            n = min(w, wo + shift)
            if n <= 0:
                continue
            vol[:, :n, i] = table[base_q[:, :n], other_q[:, -shift : -shift + n]]
    return CostVolume(vol, params.d_min)


def _relax(prev: np.ndarray, p1: np.float32, p2: np.float32) -> np.ndarray:
    # min over same-d, d+-1 with p1, any-d with p2; normalized by the row min.
    m = prev.min(axis=-1, keepdims=True)
    up = np.empty_like(prev)
    up[..., 1:] = prev[..., :-1]
    up[..., 0] = _BIG
    down = np.empty_like(prev)
    down[..., :-1] = prev[..., 1:]
    down[..., -1] = _BIG
    out = np.minimum(prev, np.minimum(up, down) + p1)
    np.minimum(out, m + p2, out=out)
    out -= m
    return out


def _aggregate_direction(cost: np.ndarray, dy: int, dx: int, p1: float, p2: float) -> np.ndarray:
    h, w, _ = cost.shape
    p1 = np.float32(p1)
    p2 = np.float32(p2)
    path = np.array(cost, dtype=np.float32, copy=True)
    if dy == 0:
        cols = range(1, w) if dx > 0 else range(w - 2, -1, -1)
        for x in cols:
            path[:, x, :] = cost[:, x, :] + _relax(path[:, x - dx, :], p1, p2)
        return path
    rows = range(1, h) if dy > 0 else range(h - 2, -1, -1)
    for y in rows:
        prev = path[y - dy, :, :]
        if dx == 0:
            path[y, :, :] = cost[y, :, :] + _relax(prev, p1, p2)
            continue
        shifted = np.full_like(prev, _BIG)
        if dx > 0:
            shifted[1:, :] = prev[:-1, :]
        else:
            shifted[:-1, :] = prev[1:, :]
        row = cost[y, :, :] + _relax(shifted, p1, p2)
        # The column whose diagonal predecessor leaves the image restarts.
        if dx > 0:
            row[0, :] = cost[y, 0, :]
        else:
            row[-1, :] = cost[y, -1, :]
        path[y, :, :] = row
    return path


def aggregate_paths(volume: CostVolume, params: SgmParams) -> CostVolume:
    """Sum of pathwise dynamic-programming costs over the 8 directions."""
    total = np.zeros_like(volume.costs)
    for dy, dx in _DIRECTIONS:
        total += _aggregate_direction(volume.costs, dy, dx, params.p1, params.p2)
    return CostVolume(total, volume.d_min)


def aggregate_single_direction(volume: CostVolume, dy: int, dx: int, params: SgmParams) -> CostVolume:
    """One-direction aggregation, exposed for the brute-force equivalence check."""
    if (dy, dx) not in _DIRECTIONS:
        raise ParameterError(f"unsupported direction {(dy, dx)}")
    return CostVolume(
        _aggregate_direction(volume.costs, dy, dx, params.p1, params.p2), volume.d_min
    )


def wta_disparity(volume: CostVolume) -> DisparityMap:
    """Winner-takes-all with equiangular subpixel refinement.

    Ties break toward the smaller disparity. The refinement offset is
    (c_minus - c_plus) / (2 * (max(c_minus, c_plus) - c0)), exact for
    V-shaped cost profiles and zero for symmetric neighbors.
    """
    costs = volume.costs
    h, w, n = costs.shape
    k = costs.argmin(axis=2)
    values = (volume.d_min + k).astype(np.float32)
    if n >= 3:
        interior = (k > 0) & (k < n - 1)
        yy, xx = np.nonzero(interior)
        kk = k[yy, xx]
        c0 = costs[yy, xx, kk]
        cm = costs[yy, xx, kk - 1]
        cp = costs[yy, xx, kk + 1]
        denom = 2.0 * (np.maximum(cm, cp) - c0)
        offset = np.where(denom > 0, (cm - cp) / np.where(denom > 0, denom, 1.0), 0.0)
        values[yy, xx] += offset.astype(np.float32)
    return DisparityMap.all_valid(values)


def _has_crossing(t: np.ndarray, target: float) -> bool:
    g = t - target
    if np.any(np.abs(g) <= 1.0):
        return True
    return bool(np.any(g[:-1] * g[1:] < 0))


def lr_consistency(
    base: DisparityMap, other: DisparityMap, threshold: float = 1.0, sign: int = 1
) -> DisparityMap:
    """Left/right consistency check with occlusion/mismatch classification.

    A pixel is invalidated when its disparity and the matched pixel's
    disparity in the other map disagree by more than ``threshold``. Invalid
    pixels are marked occluded when the correspondence ray crosses no part
    of the other disparity function, mismatched otherwise.
    """
    if base.values.shape[0] != other.values.shape[0]:
        raise DimensionError("disparity maps must share height")
    h, w = base.values.shape
    wo = other.values.shape[1]
    xs = np.arange(w)[None, :]
    donor = np.round(xs - sign * base.values).astype(int)
    in_bounds = (donor >= 0) & (donor < wo)
    donor_c = np.clip(donor, 0, wo - 1)
    other_at = other.values[np.arange(h)[:, None], donor_c]
    consistent = in_bounds & (np.abs(base.values - other_at) <= threshold)

    status = np.full((h, w), MISMATCHED, dtype=np.uint8)
    status[consistent] = VALID
    # Crossing test per row: the ray of pixel x meets the other disparity
    # function where other(xm) + sign*xm == sign*x.
    xm = np.arange(wo)
    for y in range(h):
        bad = np.nonzero(~consistent[y])[0]
        if len(bad) == 0:
            continue
        t = other.values[y] + sign * xm
        for x in bad:
            if not _has_crossing(t, sign * float(x)):
                status[y, x] = OCCLUDED
    values = np.where(consistent, base.values, np.nan).astype(np.float32)
    return DisparityMap(values, status)


def _directional_fill(values: np.ndarray, valid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest valid value (and its distance) along each of the 8 directions."""
    h, w = values.shape
    n_dir = len(_DIRECTIONS)
    fill = np.full((n_dir, h, w), np.nan, dtype=np.float32)
    dist = np.full((n_dir, h, w), np.inf, dtype=np.float32)
    for k, (dy, dx) in enumerate(_DIRECTIONS):
        val = np.where(valid, values, np.nan).astype(np.float32)
        d = np.where(valid, 0.0, np.inf).astype(np.float32)
        if dy == 0:
            cols = range(1, w) if dx > 0 else range(w - 2, -1, -1)
            for x in cols:
                take = ~valid[:, x] & np.isfinite(val[:, x - dx])
                val[take, x] = val[take, x - dx]
                d[take, x] = d[take, x - dx] + 1
        else:
            rows = range(1, h) if dy > 0 else range(h - 2, -1, -1)
            for y in rows:
                prev_v = val[y - dy]
                prev_d = d[y - dy]
                if dx > 0:
                    prev_v = np.concatenate([[np.nan], prev_v[:-1]])
                    prev_d = np.concatenate([[np.inf], prev_d[:-1]])
                elif dx < 0:
                    prev_v = np.concatenate([prev_v[1:], [np.nan]])
                    prev_d = np.concatenate([prev_d[1:], [np.inf]])
                take = ~valid[y] & np.isfinite(prev_v)
                val[y, take] = prev_v[take]
                d[y, take] = prev_d[take] + 1
        fill[k] = np.where(valid, np.nan, val)
        dist[k] = np.where(valid, np.inf, d)
    return fill, dist


def interpolate_invalid(disp: DisparityMap) -> DisparityMap:
    """Fill invalid pixels from disparities propagated along 8 directions.

    Mismatched pixels take the median of the propagated values (preserving
    discontinuities), occluded pixels the second-lowest (background bias).
    Pixels reached by fewer than two directions keep the nearest valid
    value. Valid pixels are never modified.
    """
    valid = disp.valid
    if valid.all():
        return DisparityMap(disp.values.copy(), disp.status.copy())
    if not valid.any():
        raise ParameterError("cannot interpolate a map with no valid disparities")
    values = disp.values.copy()
    fill, dist = _directional_fill(disp.values, valid)
    invalid_idx = np.nonzero(~valid)
    samples = fill[:, invalid_idx[0], invalid_idx[1]]  # (8, N)
    distances = dist[:, invalid_idx[0], invalid_idx[1]]
    counts = np.isfinite(samples).sum(axis=0)

    ordered = np.sort(samples, axis=0)  # NaNs sort to the end
    second_lowest = np.where(counts >= 2, ordered[1], ordered[0])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        medians = np.nanmedian(samples, axis=0)
    nearest = np.take_along_axis(samples, np.argmin(distances, axis=0)[None, :], axis=0)[0]

    occluded = disp.status[invalid_idx] == OCCLUDED
    filled = np.where(occluded, second_lowest, medians)
    filled = np.where(counts >= 2, filled, nearest)

    if np.any(counts == 0):
        # Enclosed pockets no direction can reach: copy the nearest valid pixel.
        missing = counts == 0
        _, (iy, ix) = ndimage.distance_transform_edt(~valid, return_indices=True)
        filled[missing] = disp.values[iy[invalid_idx][missing], ix[invalid_idx][missing]]

    values[invalid_idx] = filled.astype(np.float32)
    return DisparityMap.all_valid(values)


def _neutralize_invalid(vol: CostVolume, base_valid: np.ndarray | None,
                        other_valid: np.ndarray | None, sign: int) -> None:
    costs = vol.costs
    h, w, n = costs.shape
    if other_valid is not None:
        for i, d in enumerate(range(vol.d_min, vol.d_min + n)):
            shift = sign * d
            if shift >= 0:
                m = min(w - shift, other_valid.shape[1])
                if m > 0:
                    bad = ~other_valid[:, :m]
                    costs[:, shift : shift + m, i][bad] = CENSUS_MAX_COST
            else:
                m = min(w, other_valid.shape[1] + shift)
                if m > 0:
                    bad = ~other_valid[:, -shift : -shift + m]
                    costs[:, :m, i][bad] = CENSUS_MAX_COST
    if base_valid is not None:
        costs[~base_valid] = 0.0


def _downsample2(arr: np.ndarray) -> np.ndarray:
    h, w = arr.shape
    h2, w2 = h // 2, w // 2
    return arr[: h2 * 2, : w2 * 2].reshape(h2, 2, w2, 2).mean(axis=(1, 3)).astype(np.float32)


def _upsample2(values: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    up = np.repeat(np.repeat(values * 2.0, 2, axis=0), 2, axis=1)
    out = np.zeros(shape, dtype=np.float32)
    h = min(shape[0], up.shape[0])
    w = min(shape[1], up.shape[1])
    out[:h, :w] = up[:h, :w]
    if h < shape[0]:
        out[h:, :w] = out[h - 1 : h, :w]
    if w < shape[1]:
        out[:, w:] = out[:, w - 1 : w]
    return out


def _cost_for_frame(left, right, params: SgmParams, sign: int) -> CostVolume:
    if params.cost_kind == "census":
        return census_cost(left, right, params, sign=sign)
    half = SgmParams(
        d_min=int(np.floor(params.d_min / 2)),
        d_max=int(np.ceil(params.d_max / 2)) + 1,
        p1=params.p1,
        p2=params.p2,
        cost_kind="census",
        lr_threshold=params.lr_threshold,
        median_window=params.median_window,
    )
    base_g = _as_gray(left if sign > 0 else right)
    small_l = _downsample2(_as_gray(left))
    small_r = _downsample2(_as_gray(right))
    coarse = census_cost(small_l, small_r, half, sign=sign)
    coarse_disp = wta_disparity(aggregate_paths(coarse, half))
    init = DisparityMap.all_valid(_upsample2(coarse_disp.values, base_g.shape))
    return mi_cost(left, right, init, params, sign=sign)


def compute_disparity(
    left,
    right,
    params: SgmParams,
    validity: tuple[np.ndarray, np.ndarray] | None = None,
) -> StereoResult:
    """Full dense stereo for both frames with postprocessing.

    Args:
        left, right: rectified single-channel images (RasterImage or array).
        params: matching configuration.
        validity: optional (left, right) footprint masks from rectification;
            costs outside the donor footprint count as unmatched, pixels
            outside a frame's own footprint get a flat cost fiber.

    Returns:
        StereoResult with dense all-valid maps and the raw consistency
        statuses for both frames.
    """
    params.require_range()
    if params.n_disparities > 512:
        raise ParameterError(
            f"disparity range of {params.n_disparities} levels is implausibly wide; "
            "set d_min/d_max explicitly"
        )
    valid_l, valid_r = validity if validity is not None else (None, None)

    vol_l = _cost_for_frame(left, right, params, sign=1)
    _neutralize_invalid(vol_l, valid_l, valid_r, sign=1)
    disp_l = wta_disparity(aggregate_paths(vol_l, params))
    del vol_l

    vol_r = _cost_for_frame(left, right, params, sign=-1)
    _neutralize_invalid(vol_r, valid_r, valid_l, sign=-1)
    disp_r = wta_disparity(aggregate_paths(vol_r, params))
    del vol_r

    checked_l = lr_consistency(disp_l, disp_r, params.lr_threshold, sign=1)
    checked_r = lr_consistency(disp_r, disp_l, params.lr_threshold, sign=-1)

    dense_l = interpolate_invalid(checked_l)
    dense_r = interpolate_invalid(checked_r)

    filtered_l = median_filter_array(dense_l.values, params.median_window)
    filtered_r = median_filter_array(dense_r.values, params.median_window)
    filtered_l = np.clip(filtered_l, params.d_min, params.d_max)
    filtered_r = np.clip(filtered_r, params.d_min, params.d_max)

    return StereoResult(
        left=DisparityMap.all_valid(filtered_l),
        right=DisparityMap.all_valid(filtered_r),
        left_raw_status=checked_l.status,
        right_raw_status=checked_r.status,
    )
