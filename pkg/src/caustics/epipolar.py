"""Mask-gated feature matching and uncalibrated stereo rectification.

Feature detection is a multi-scale FAST-style corner test; description is a
256-bit intensity-comparison descriptor over a fixed concentric sampling
pattern (no orientation estimation, matched with Hamming distance).
Fundamental-matrix estimation runs seeded RANSAC over the normalized
eight-point solver. Rectification maps both epipoles to infinity with the
minimum-distortion projective component, aligns scan lines with a
similarity, and removes residual distortion with a shear, keeping the
three components available for inspection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DimensionError, ParameterError, RectificationError
from .image import BinaryMask, RasterImage, bilinear_sample, float_to_u8, nearest_sample

DESCRIPTOR_BITS = 256
DESCRIPTOR_BYTES = DESCRIPTOR_BITS // 8
MASK_GATE_RADIUS = 4.0
_PATTERN_MARGIN = 6  # sampling pattern radius 4 plus smoothing support

# Bresenham circle of radius 3 used by the segment test, as (dx, dy).
_CIRCLE16 = np.array(
    [
        (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
        (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
    ]
)


def _build_pattern() -> tuple[np.ndarray, np.ndarray]:
    """Concentric sampling pattern (25 points, max radius 4) and its 256 bit pairs."""
    pts = [(0.0, 0.0)]
    for radius, count, phase in ((1.6, 6, 0.0), (2.8, 8, 0.4), (4.0, 10, 0.8)):
        for k in range(count):
            ang = 2.0 * np.pi * k / count + phase
            pts.append((radius * np.cos(ang), radius * np.sin(ang)))
    pts = np.array(pts)
    pairs = []
    n = len(pts)
    for i in range(n):
        for j in range(i + 1, n):
            d = float(np.hypot(*(pts[i] - pts[j])))
            pairs.append((d, i, j))
    pairs.sort()
    chosen = np.array([(i, j) for _, i, j in pairs[:DESCRIPTOR_BITS]], dtype=int)
    return pts, chosen


_PATTERN_POINTS, _PATTERN_PAIRS = _build_pattern()


@dataclass(frozen=True)
class Keypoints:
    """Detected corners as parallel arrays (subpixel coords in full resolution)."""

    x: np.ndarray
    y: np.ndarray
    response: np.ndarray
    scale: np.ndarray

    def __len__(self) -> int:
        return len(self.x)

    @classmethod
    def empty(cls) -> "Keypoints":
        z = np.zeros(0, dtype=np.float32)
        return cls(z, z.copy(), z.copy(), z.copy())

    def coordinates(self) -> np.ndarray:
        return np.column_stack([self.x, self.y]).astype(np.float64)


@dataclass
class MatchSet:
    """One-to-one matches after ratio test and left/right cross-check."""

    left_index: np.ndarray
    right_index: np.ndarray
    distance: np.ndarray
    ratio_match_count: int = 0
    inliers: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.left_index)

    @classmethod
    def empty(cls) -> "MatchSet":
        idx = np.zeros(0, dtype=int)
        return cls(idx, idx.copy(), np.zeros(0, dtype=np.int32), 0, None)


@dataclass(frozen=True)
class FundamentalMatrix:
    """Rank-2, Frobenius-normalized epipolar matrix (x_right^T F x_left = 0)."""

    m: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.m, dtype=np.float64)
        if a.shape != (3, 3):
            raise ParameterError("fundamental matrix must be 3x3")
        u, s, vt = np.linalg.svd(a)
        s = s.copy()
        s[2] = 0.0
        a = u @ np.diag(s) @ vt
        a = a / np.linalg.norm(a)
        # Fix the overall sign so equal geometries compare equal.
        flat = a.ravel()
        lead = flat[np.argmax(np.abs(flat))]
        if lead < 0:
            a = -a
        object.__setattr__(self, "m", a)

    @property
    def rank_residual(self) -> float:
        return float(abs(np.linalg.det(self.m)))


@dataclass(frozen=True)
class RectifyingPair:
    """Rectifying homographies with their projective/similarity/shear factors."""

    h_left: np.ndarray
    h_right: np.ndarray
    size: tuple[int, int]  # (width, height) of the shared output frame
    projective_left: np.ndarray = field(default=None, repr=False)
    projective_right: np.ndarray = field(default=None, repr=False)
    similarity_left: np.ndarray = field(default=None, repr=False)
    similarity_right: np.ndarray = field(default=None, repr=False)
    shear_left: np.ndarray = field(default=None, repr=False)
    shear_right: np.ndarray = field(default=None, repr=False)


def _downsample2(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    h2, w2 = h // 2, w // 2
    return img[: h2 * 2, : w2 * 2].reshape(h2, 2, w2, 2).mean(axis=(1, 3))


def _fast_corners(gray: np.ndarray, threshold: float, arc: int = 9) -> tuple[np.ndarray, np.ndarray]:
    """FAST segment test plus 3x3 non-maximum suppression on the SAD response."""
    h, w = gray.shape
    if h < 8 or w < 8:
        return np.zeros((0, 2), dtype=int), np.zeros(0)
    c = gray[3 : h - 3, 3 : w - 3]
    brighter = np.empty((16,) + c.shape, dtype=bool)
    darker = np.empty_like(brighter)
    diffs = np.empty((16,) + c.shape, dtype=np.float32)
    for i, (dx, dy) in enumerate(_CIRCLE16):
        nb = gray[3 + dy : h - 3 + dy, 3 + dx : w - 3 + dx]
        brighter[i] = nb > c + threshold
        darker[i] = nb < c - threshold
        diffs[i] = np.abs(nb - c)
    wrapped_b = np.concatenate([brighter, brighter[: arc - 1]], axis=0)
    wrapped_d = np.concatenate([darker, darker[: arc - 1]], axis=0)
    is_corner = np.zeros(c.shape, dtype=bool)
    for k in range(16):
        is_corner |= wrapped_b[k : k + arc].all(axis=0)
        is_corner |= wrapped_d[k : k + arc].all(axis=0)
    response = np.where(is_corner, np.maximum(diffs - threshold, 0.0).sum(axis=0), 0.0)
    full = np.zeros((h, w))
    full[3 : h - 3, 3 : w - 3] = response
    local_max = ndimage.maximum_filter(full, size=3, mode="constant")
    keep = (full > 0) & (full == local_max)
    ys, xs = np.nonzero(keep)
    return np.column_stack([xs, ys]), full[ys, xs]


def _smooth(gray: np.ndarray) -> np.ndarray:
    return ndimage.gaussian_filter(gray, sigma=1.0, mode="nearest")


def _describe(gray_smooth: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """256-bit descriptors for points given in the image's own pixel frame."""
    if len(pts) == 0:
        return np.zeros((0, DESCRIPTOR_BYTES), dtype=np.uint8)
    sample_x = pts[:, 0, None] + _PATTERN_POINTS[None, :, 0]
    sample_y = pts[:, 1, None] + _PATTERN_POINTS[None, :, 1]
    values, _ = bilinear_sample(gray_smooth, sample_x, sample_y)
    bits = values[:, _PATTERN_PAIRS[:, 0]] < values[:, _PATTERN_PAIRS[:, 1]]
    return np.packbits(bits, axis=1)


def detect_masked_features(
    img: RasterImage,
    mask: BinaryMask | None = None,
    max_kp: int = 2000,
    threshold: float = 0.05,
) -> tuple[Keypoints, np.ndarray]:
    """Detect corners outside caustics regions and describe them.

    No returned keypoint lies on a caustics pixel or within 4 px of one, so
    the descriptor support stays clean. Keypoints are sorted by response
    (descending) and truncated to ``max_kp``.

    Returns:
        (keypoints, descriptors) with descriptors packed as (N, 32) uint8.
    """
    if mask is not None and (mask.height, mask.width) != (img.height, img.width):
        raise DimensionError("mask dimensions must match the image")
    gray_full = img.luminance().astype(np.float64)
    if mask is not None and mask.caustics.any():
        # Distance from every pixel to the nearest caustics pixel.
        clearance = ndimage.distance_transform_edt(mask.non_caustics)
    else:
        clearance = None

    all_x, all_y, all_resp, all_scale = [], [], [], []
    all_desc = []
    gray = gray_full
    for octave in range(3):
        factor = 2.0**octave
        if min(gray.shape) < 2 * _PATTERN_MARGIN + 2:
            break
        pts, resp = _fast_corners(gray, threshold)
        if len(pts):
            margin = _PATTERN_MARGIN
            h, w = gray.shape
            ok = (
                (pts[:, 0] >= margin)
                & (pts[:, 0] < w - margin)
                & (pts[:, 1] >= margin)
                & (pts[:, 1] < h - margin)
            )
            pts, resp = pts[ok], resp[ok]
        if len(pts):
            full_x = pts[:, 0] * factor + (factor - 1) / 2.0
            full_y = pts[:, 1] * factor + (factor - 1) / 2.0
            if clearance is not None:
                xi = np.clip(np.round(full_x).astype(int), 0, img.width - 1)
                yi = np.clip(np.round(full_y).astype(int), 0, img.height - 1)
                # The support disk spans gate radius at this octave's scale.
                ok = clearance[yi, xi] > MASK_GATE_RADIUS * factor
                pts, resp = pts[ok], resp[ok]
                full_x, full_y = full_x[ok], full_y[ok]
        if len(pts):
            desc = _describe(_smooth(gray), pts.astype(np.float64))
            all_x.append(full_x)
            all_y.append(full_y)
            all_resp.append(resp)
            all_scale.append(np.full(len(pts), factor))
            all_desc.append(desc)
        gray = _downsample2(gray)

    if not all_x:
        return Keypoints.empty(), np.zeros((0, DESCRIPTOR_BYTES), dtype=np.uint8)
    x = np.concatenate(all_x)
    y = np.concatenate(all_y)
    resp = np.concatenate(all_resp)
    scale = np.concatenate(all_scale)
    desc = np.concatenate(all_desc)
    order = np.argsort(-resp, kind="stable")[:max_kp]
    kp = Keypoints(
        x[order].astype(np.float32),
        y[order].astype(np.float32),
        resp[order].astype(np.float32),
        scale[order].astype(np.float32),
    )
    return kp, desc[order]


def _hamming_to_all(query: np.ndarray, bank: np.ndarray) -> np.ndarray:
    """Hamming distances from each query descriptor to every bank descriptor."""
    xored = np.bitwise_xor(query[:, None, :], bank[None, :, :])
    return np.bitwise_count(xored).sum(axis=2, dtype=np.int32)


def match_descriptors(left: np.ndarray, right: np.ndarray, ratio: float = 0.8) -> MatchSet:
    """Mutual-nearest-neighbor Hamming matching with a ratio test.

    The ratio test (best < ratio * second-best) runs on the left-to-right
    candidates first; survivors are kept only when the right-to-left nearest
    neighbor points back (cross-check), so matches are one-to-one.
    """
    if len(left) == 0 or len(right) == 0:
        return MatchSet.empty()
    n_left = len(left)
    best_r_for_l = np.empty(n_left, dtype=int)
    d1 = np.empty(n_left, dtype=np.int64)
    d2 = np.empty(n_left, dtype=np.int64)
    best_l_for_r = np.zeros(len(right), dtype=int)
    best_l_dist = np.full(len(right), np.iinfo(np.int64).max, dtype=np.int64)
    chunk = max(1, 2_000_000 // max(len(right), 1))
    for start in range(0, n_left, chunk):
        stop = min(start + chunk, n_left)
        dist = _hamming_to_all(left[start:stop], right)
        idx = np.argmin(dist, axis=1)
        best_r_for_l[start:stop] = idx
        rows = np.arange(stop - start)
        d1[start:stop] = dist[rows, idx]
        if dist.shape[1] > 1:
            masked = dist.copy()
            masked[rows, idx] = np.iinfo(np.int32).max
            d2[start:stop] = masked.min(axis=1)
        else:
            d2[start:stop] = np.iinfo(np.int64).max
        col_min = dist.min(axis=0)
        col_arg = dist.argmin(axis=0) + start
        better = col_min < best_l_dist
        best_l_dist[better] = col_min[better]
        best_l_for_r[better] = col_arg[better]

    passes_ratio = d1 < ratio * d2
    ratio_count = int(passes_ratio.sum())
    left_idx = np.nonzero(passes_ratio)[0]
    mutual = best_l_for_r[best_r_for_l[left_idx]] == left_idx
    left_idx = left_idx[mutual]
    right_idx = best_r_for_l[left_idx]
    return MatchSet(
        left_index=left_idx,
        right_index=right_idx,
        distance=d1[left_idx].astype(np.int32),
        ratio_match_count=ratio_count,
    )


def _normalize_points(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    rms = np.sqrt((centered**2).sum(axis=1).mean())
    scale = np.sqrt(2.0) / rms if rms > 0 else 1.0
    t = np.array(
        [[scale, 0, -scale * centroid[0]], [0, scale, -scale * centroid[1]], [0, 0, 1.0]]
    )
    return np.column_stack([centered * scale, np.ones(len(pts))]), t


def _eight_point(left: np.ndarray, right: np.ndarray) -> np.ndarray | None:
    """Normalized eight-point solve; None when the sample is degenerate."""
    xl, tl = _normalize_points(left)
    xr, tr = _normalize_points(right)
    a = np.column_stack(
        [
            xr[:, 0] * xl[:, 0], xr[:, 0] * xl[:, 1], xr[:, 0],
            xr[:, 1] * xl[:, 0], xr[:, 1] * xl[:, 1], xr[:, 1],
            xl[:, 0], xl[:, 1], np.ones(len(left)),
        ]
    )
    _, s, vt = np.linalg.svd(a)
    # Degenerate sample: the null space is wider than the one solution vector.
    if len(left) >= 9 and s[7] < 1e-10 * s[0]:
        return None
    if len(left) == 8 and s[-1] < 1e-10 * s[0]:
        return None
    f = vt[-1].reshape(3, 3)
    u, sv, vt2 = np.linalg.svd(f)
    f = u @ np.diag([sv[0], sv[1], 0.0]) @ vt2
    return tr.T @ f @ tl


def epipolar_distances(
    f: np.ndarray, left: np.ndarray, right: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Point-to-epipolar-line distances in both images."""
    xl = np.column_stack([left, np.ones(len(left))])
    xr = np.column_stack([right, np.ones(len(right))])
    lines_r = xl @ f.T  # epipolar line of each left point, in the right image
    lines_l = xr @ f
    resid = np.abs(np.sum(xr * lines_r, axis=1))
    d_right = resid / np.hypot(lines_r[:, 0], lines_r[:, 1])
    d_left = resid / np.hypot(lines_l[:, 0], lines_l[:, 1])
    return d_left, d_right


def sampson_distance(f: np.ndarray, left: np.ndarray, right: np.ndarray) -> np.ndarray:
    xl = np.column_stack([left, np.ones(len(left))])
    xr = np.column_stack([right, np.ones(len(right))])
    fx = xl @ f.T
    ftx = xr @ f
    num = np.sum(xr * fx, axis=1) ** 2
    den = fx[:, 0] ** 2 + fx[:, 1] ** 2 + ftx[:, 0] ** 2 + ftx[:, 1] ** 2
    return np.sqrt(num / den)


def ransac_fundamental(
    left_points: np.ndarray,
    right_points: np.ndarray,
    threshold_px: float = 1.0,
    confidence: float = 0.999,
    seed: int = 0,
    max_iterations: int = 10_000,
) -> tuple[FundamentalMatrix, np.ndarray]:
    """Seeded RANSAC over the normalized eight-point solver.

    A candidate is scored by the number of correspondences whose
    point-to-epipolar-line distance stays within ``threshold_px`` in both
    images; the iteration count adapts to the running inlier ratio. The
    best model is refit on its inliers before returning.

    Returns:
        (fundamental matrix, inlier flags aligned with the input points).
    """
    left_points = np.asarray(left_points, dtype=np.float64)
    right_points = np.asarray(right_points, dtype=np.float64)
    n = len(left_points)
    if n < 8:
        raise ParameterError(f"RANSAC needs at least 8 matches, got {n}")
    if left_points.shape != right_points.shape:
        raise DimensionError("left and right point arrays must have equal shapes")
    rng = np.random.default_rng(seed)
    best_count = -1
    best_inliers = None
    needed = max_iterations
    it = 0
    while it < needed and it < max_iterations:
        it += 1
        sample = rng.choice(n, size=8, replace=False)
        f = _eight_point(left_points[sample], right_points[sample])
        if f is None:
            continue
        dl, dr = epipolar_distances(f, left_points, right_points)
        inliers = (dl <= threshold_px) & (dr <= threshold_px)
        count = int(inliers.sum())
        if count > best_count:
            best_count = count
            best_inliers = inliers
            w = max(count / n, 1e-9)
            miss = min(max(1.0 - w**8, 1e-12), 1.0 - 1e-12)
            needed = min(
                max_iterations, int(np.ceil(np.log(1.0 - confidence) / np.log(miss)))
            )
    if best_inliers is None or best_count < 8:
        raise ParameterError("RANSAC failed to find a non-degenerate model")
    f = _eight_point(left_points[best_inliers], right_points[best_inliers])
    if f is None:
        raise ParameterError("inlier refit is degenerate")
    dl, dr = epipolar_distances(f, left_points, right_points)
    inliers = (dl <= threshold_px) & (dr <= threshold_px)
    return FundamentalMatrix(f), inliers


def _epipoles(f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    _, _, vt = np.linalg.svd(f)
    e_left = vt[-1]
    _, _, vt = np.linalg.svd(f.T)
    e_right = vt[-1]
    return e_left, e_right


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0.0]])


def _epipole_in_image(e: np.ndarray, size: tuple[int, int]) -> bool:
    if abs(e[2]) < 1e-12 * np.linalg.norm(e[:2]):
        return False
    x, y = e[0] / e[2], e[1] / e[2]
    w, h = size
    return 0 <= x < w and 0 <= y < h


def _distortion_quadratics(
    mapping: np.ndarray, size: tuple[int, int]
) -> tuple[np.ndarray, np.ndarray]:
    # Second moments of the pixel grid turn the projective-distortion
    # criterion into a ratio of two quadratic forms in z (restricted to 2-D).
    w, h = size
    pc = np.array([(w - 1) / 2.0, (h - 1) / 2.0, 1.0])
    cov = np.diag([(w * w - 1) / 12.0, (h * h - 1) / 12.0, 0.0])
    a = mapping.T @ cov @ mapping
    b = mapping.T @ np.outer(pc, pc) @ mapping
    return a[:2, :2], b[:2, :2]


def _minimize_distortion(
    a1: np.ndarray, b1: np.ndarray, a2: np.ndarray, b2: np.ndarray
) -> np.ndarray:
    def term(a: np.ndarray, b: np.ndarray, z: np.ndarray) -> float:
        den = float(z @ b @ z)
        # A vanishing denominator means the candidate infinity line passes
        # through the image center (or the row degenerates): maximally bad.
        if den <= 1e-12:
            return np.inf
        return float(z @ a @ z) / den

    def crit(theta: float) -> float:
        z = np.array([np.cos(theta), np.sin(theta)])
        return term(a1, b1, z) + term(a2, b2, z)

    thetas = np.linspace(0.0, np.pi, 2001, endpoint=False)
    values = [crit(t) for t in thetas]
    k = int(np.argmin(values))
    lo = thetas[max(k - 1, 0)]
    hi = thetas[min(k + 1, len(thetas) - 1)]
    # Golden-section polish keeps the result deterministic.
    gr = (np.sqrt(5.0) - 1.0) / 2.0
    c = hi - gr * (hi - lo)
    d = lo + gr * (hi - lo)
    for _ in range(60):
        if crit(c) < crit(d):
            hi = d
        else:
            lo = c
        c = hi - gr * (hi - lo)
        d = lo + gr * (hi - lo)
    theta = (lo + hi) / 2.0
    return np.array([np.cos(theta), np.sin(theta), 0.0])


def _projective_component(w_vec: np.ndarray) -> np.ndarray:
    if abs(w_vec[2]) < 1e-12 * np.linalg.norm(w_vec):
        raise RectificationError("projective component degenerate; geometry unsuitable")
    w_vec = w_vec / w_vec[2]
    return np.array([[1.0, 0, 0], [0, 1, 0], [w_vec[0], w_vec[1], 1.0]])


def _rotation_to_horizontal(hp: np.ndarray, epipole: np.ndarray) -> np.ndarray:
    d = hp @ epipole
    theta = np.arctan2(d[1], d[0])
    c, s = np.cos(-theta), np.sin(-theta)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


def _shear_component(h: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    # Edge midpoints in continuous image coordinates; the shear restores
    # perpendicularity and the width/height ratio of their cross.
    w, h_img = size
    mids = np.array(
        [
            [w / 2.0, 0.0, 1.0],
            [float(w), h_img / 2.0, 1.0],
            [w / 2.0, float(h_img), 1.0],
            [0.0, h_img / 2.0, 1.0],
        ]
    )
    q = (h @ mids.T).T
    q = q[:, :2] / q[:, 2:]
    x = q[1] - q[3]
    y = q[2] - q[0]
    den = h_img * w * (x[1] * y[0] - x[0] * y[1])
    if abs(den) < 1e-12:
        raise RectificationError("shear computation degenerate")
    k1 = (h_img * h_img * x[1] * x[1] + w * w * y[1] * y[1]) / den
    k2 = -(h_img * h_img * x[0] * x[1] + w * w * y[0] * y[1]) / den
    if k1 < 0:
        k1, k2 = -k1, -k2
    return np.array([[k1, k2, 0], [0, 1.0, 0], [0, 0, 1.0]])


def _apply_h(h: np.ndarray, pts: np.ndarray) -> np.ndarray:
    ph = np.column_stack([pts, np.ones(len(pts))])
    q = ph @ h.T
    return q[:, :2] / q[:, 2:]


def rectify_pair(
    f: FundamentalMatrix,
    left_size: tuple[int, int],
    right_size: tuple[int, int],
    max_dimension: int = 8192,
) -> RectifyingPair:
    """Build rectifying homographies from the fundamental matrix alone.

    Args:
        f: rank-2 fundamental matrix (x_right^T F x_left = 0).
        left_size: (width, height) of the left image.
        right_size: (width, height) of the right image.
        max_dimension: safety cap on the shared output frame.

    Raises:
        RectificationError: when an epipole lies inside its image
            (forward-motion geometry) or the construction degenerates.
    """
    fm = f.m
    e_left, e_right = _epipoles(fm)
    if _epipole_in_image(e_left, left_size) or _epipole_in_image(e_right, right_size):
        raise RectificationError("epipole inside the image; rectification undefined")

    # Third rows of both homographies come from one shared 2-D parameter so
    # corresponding epipolar lines land on the same scan line.
    map_right = _skew(e_right)
    map_left = (map_right @ fm).T @ map_right
    a1, b1 = _distortion_quadratics(map_left, left_size)
    a2, b2 = _distortion_quadratics(map_right, right_size)
    z = _minimize_distortion(a1, b1, a2, b2)
    hp_left = _projective_component(map_left @ z)
    hp_right = _projective_component(map_right @ z)

    rot_left = _rotation_to_horizontal(hp_left, e_left)
    rot_right = _rotation_to_horizontal(hp_right, e_right)
    h_left = rot_left @ hp_left
    h_right = rot_right @ hp_right

    def scanline_map() -> tuple[float, float]:
        fn = np.linalg.inv(h_right).T @ fm @ np.linalg.inv(h_left)
        if abs(fn[1, 2]) < 1e-12 * np.linalg.norm(fn):
            raise RectificationError("scan-line alignment degenerate")
        return -fn[2, 1] / fn[1, 2], -fn[2, 2] / fn[1, 2]

    s, t = scanline_map()
    if s < 0:
        # Flip the right frame by a half turn to keep orientations consistent.
        h_right = np.diag([-1.0, -1.0, 1.0]) @ h_right
        rot_right = np.diag([-1.0, -1.0, 1.0]) @ rot_right
        s, t = scanline_map()
    align = np.array([[1.0 / s, 0, 0], [0, 1.0 / s, -t / s], [0, 0, 1.0]])
    h_right = align @ h_right
    sim_right = align @ rot_right
    sim_left = rot_left

    shear_left = _shear_component(h_left, left_size)
    shear_right = _shear_component(h_right, right_size)
    h_left = shear_left @ h_left
    h_right = shear_right @ h_right

    # Shared output frame: union bounding box of both warped corner sets,
    # one translation for both images so rows stay aligned.
    wl, hl = left_size
    wr, hr = right_size
    corners_l = _apply_h(h_left, np.array([[0, 0], [wl - 1, 0], [0, hl - 1], [wl - 1, hl - 1]], dtype=float))
    corners_r = _apply_h(h_right, np.array([[0, 0], [wr - 1, 0], [0, hr - 1], [wr - 1, hr - 1]], dtype=float))
    corners = np.vstack([corners_l, corners_r])
    x_min, y_min = np.floor(corners.min(axis=0))
    x_max, y_max = np.ceil(corners.max(axis=0))
    out_w = int(x_max - x_min) + 1
    out_h = int(y_max - y_min) + 1
    if out_w > max_dimension or out_h > max_dimension:
        raise RectificationError(
            f"rectified frame {out_w}x{out_h} exceeds the {max_dimension} px cap"
        )
    shift = np.array([[1.0, 0, -x_min], [0, 1.0, -y_min], [0, 0, 1.0]])
    # Fold the shared translation into the similarity factor so that
    # H == shear @ similarity @ projective holds exactly for both sides.
    sim_left = np.linalg.inv(shear_left) @ shift @ shear_left @ sim_left
    sim_right = np.linalg.inv(shear_right) @ shift @ shear_right @ sim_right
    return RectifyingPair(
        h_left=shift @ h_left,
        h_right=shift @ h_right,
        size=(out_w, out_h),
        projective_left=hp_left,
        projective_right=hp_right,
        similarity_left=sim_left,
        similarity_right=sim_right,
        shear_left=shear_left,
        shear_right=shear_right,
    )


def warp_image(
    img: RasterImage, h: np.ndarray, out_size: tuple[int, int]
) -> tuple[RasterImage, np.ndarray]:
    """Warp an image by a homography with inverse mapping and bilinear sampling.

    Returns (warped, validity); pixels mapped from outside the source are 0
    and flagged invalid. A singular homography raises ParameterError.
    """
    h_inv = _invert_homography(h)
    xs, ys = _source_coordinates(h_inv, out_size)
    values, valid = bilinear_sample(img.as_float().astype(np.float64), xs, ys)
    if img.depth == "u8":
        return RasterImage(float_to_u8(values)), valid
    return RasterImage(values.astype(np.float32)), valid


def warp_with_homography(
    src: "RasterImage | BinaryMask", h: np.ndarray, out_size: tuple[int, int]
):
    """Warp a raster or mask, picking bilinear or nearest sampling by type."""
    if isinstance(src, BinaryMask):
        return warp_mask(src, h, out_size)
    return warp_image(src, h, out_size)


def warp_mask(
    mask: BinaryMask, h: np.ndarray, out_size: tuple[int, int]
) -> tuple[BinaryMask, np.ndarray]:
    """Warp a mask with nearest-neighbor sampling (labels stay binary).

    Out-of-source pixels are labeled caustics so they are never used as
    replacement donors; the validity mask records the true footprint.
    """
    h_inv = _invert_homography(h)
    xs, ys = _source_coordinates(h_inv, out_size)
    values, valid = nearest_sample(mask.caustics, xs, ys, fill=True)
    return BinaryMask(values | ~valid), valid


def _invert_homography(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (3, 3):
        raise ParameterError("homography must be 3x3")
    det = np.linalg.det(h)
    if not np.isfinite(det) or abs(det) < 1e-12:
        raise ParameterError("homography is singular")
    return np.linalg.inv(h)


def _source_coordinates(h_inv: np.ndarray, out_size: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    w, h = out_size
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    denom = h_inv[2, 0] * xs + h_inv[2, 1] * ys + h_inv[2, 2]
    denom = np.where(np.abs(denom) < 1e-15, 1e-15, denom)
    sx = (h_inv[0, 0] * xs + h_inv[0, 1] * ys + h_inv[0, 2]) / denom
    sy = (h_inv[1, 0] * xs + h_inv[1, 1] * ys + h_inv[1, 2]) / denom
    return sx, sy
