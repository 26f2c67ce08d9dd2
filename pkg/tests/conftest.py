"""Shared synthetic-scene generators used as test oracles."""

from __future__ import annotations

import numpy as np
import pytest
from scipy import ndimage

from caustics.image import RasterImage


def skew(v):
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0.0]])


def synthetic_two_camera_scene(
    seed: int = 0,
    n_points: int = 200,
    noise: float = 0.0,
    outlier_fraction: float = 0.0,
    image_size: tuple[int, int] = (640, 480),
):
    """Project random 3-D points through two synthetic converging cameras.

    Returns (pts_left, pts_right, F_true, is_true_inlier). Outliers are
    uniform random points replacing the tail of the correspondence list.
    """
    rng = np.random.default_rng(seed)
    w, h = image_size
    k = np.array([[800.0, 0, w / 2], [0, 800.0, h / 2], [0, 0, 1]])
    ang = np.deg2rad(6.0)
    ry = np.array([[np.cos(ang), 0, np.sin(ang)], [0, 1, 0], [-np.sin(ang), 0, np.cos(ang)]])
    rx_ang = np.deg2rad(1.5)
    rx = np.array(
        [[1, 0, 0], [0, np.cos(rx_ang), -np.sin(rx_ang)], [0, np.sin(rx_ang), np.cos(rx_ang)]]
    )
    r = rx @ ry
    t = np.array([-1.0, 0.05, 0.02])
    pts3d = np.column_stack(
        [rng.uniform(-2, 2, n_points), rng.uniform(-1.5, 1.5, n_points), rng.uniform(4, 8, n_points)]
    )
    x1 = (k @ pts3d.T).T
    x1 = x1[:, :2] / x1[:, 2:]
    x2c = (r @ pts3d.T).T + t
    x2 = (k @ x2c.T).T
    x2 = x2[:, :2] / x2[:, 2:]
    f = np.linalg.inv(k).T @ skew(t) @ r @ np.linalg.inv(k)
    f = f / np.linalg.norm(f)

    x1 = x1 + rng.normal(0.0, noise, x1.shape)
    x2 = x2 + rng.normal(0.0, noise, x2.shape)
    is_inlier = np.ones(n_points, dtype=bool)
    n_out = int(round(outlier_fraction * n_points))
    if n_out:
        idx = rng.choice(n_points, size=n_out, replace=False)
        x1[idx] = rng.uniform([0, 0], [w, h], size=(n_out, 2))
        x2[idx] = rng.uniform([0, 0], [w, h], size=(n_out, 2))
        is_inlier[idx] = False
    return x1, x2, f, is_inlier


def random_dot_pair(
    seed: int = 0,
    size: tuple[int, int] = (240, 320),
    background: int = 6,
    squares: tuple[tuple[int, int, int, int, int], ...] = ((80, 180, 100, 240, 20),),
    model_occlusion: bool = False,
):
    """Random-dot stereogram with piecewise-constant left-frame disparity.

    Each square is (y0, y1, x0, x1, d). Returns (left, right, d_gt) with
    left(x) = right(x - d(x)): the generator itself is the accuracy oracle.
    With ``model_occlusion`` the left pixels whose right correspondent is
    claimed by a larger disparity receive fresh noise instead of ghost
    texture, so the occlusion geometry is physically consistent.
    """
    rng = np.random.default_rng(seed)
    h, w = size
    right = rng.random((h, w)).astype(np.float32)
    d_gt = np.full((h, w), float(background), dtype=np.float32)
    for y0, y1, x0, x1, d in squares:
        d_gt[y0:y1, x0:x1] = d
    xs = np.arange(w)[None, :].repeat(h, 0)
    src = np.clip(xs - d_gt.astype(int), 0, w - 1)
    left = right[np.arange(h)[:, None], src]
    if model_occlusion:
        # Z-buffer per right column: the largest claiming disparity wins;
        # weaker claimants are invisible in the right image.
        winner = np.full((h, w), -1.0, dtype=np.float32)
        cols = xs - d_gt.astype(int)
        for y in range(h):
            for x in range(w):
                c = cols[y, x]
                if 0 <= c < w and d_gt[y, x] > winner[y, c]:
                    winner[y, c] = d_gt[y, x]
        occluded = np.zeros((h, w), dtype=bool)
        inb = (cols >= 0) & (cols < w)
        occluded[inb] = d_gt[inb] < winner[np.nonzero(inb)[0], cols[inb]]
        noise = rng.random((h, w)).astype(np.float32)
        left = np.where(occluded, noise, left)
        return left, right, d_gt, occluded
    return left, right, d_gt


def smooth_texture(seed: int, shape: tuple[int, int], blur: float = 3.0,
                   low: float = 0.25, high: float = 0.75) -> np.ndarray:
    """Low-gradient random texture; gentle enough for subpixel resampling."""
    rng = np.random.default_rng(seed)
    base = ndimage.gaussian_filter(rng.random(shape), blur)
    lo, hi = base.min(), base.max()
    return (low + (base - lo) / (hi - lo) * (high - low)).astype(np.float32)


def checker_board(shape: tuple[int, int], cell: int = 8, lo: float = 0.1, hi: float = 0.9):
    ys, xs = np.mgrid[0 : shape[0], 0 : shape[1]]
    return np.where(((ys // cell) + (xs // cell)) % 2 == 0, lo, hi).astype(np.float32)


def rendered_stereo_with_blob(
    seed: int = 7,
    size: tuple[int, int] = (200, 280),
    d_background: int = 6,
    d_foreground: int = 14,
    blob: tuple[int, int, int] = (100, 150, 18),
):
    """Stereo pair rendered from one texture, plus a bright blob on the left.

    The scene mixes a smooth base (keeps donor resampling error tiny) with
    sharp checker patches away from the blob (feeds the corner detector).
    Patches sit on both depth planes so the epipolar geometry is not
    explained by a single homography. Returns
    (left_clean, left_blob, right, mask_left, d_gt) as float arrays; the
    blob-free left render is the replacement oracle.
    """
    h, w = size
    tex = smooth_texture(seed, (h, w + 64))
    board = checker_board((h, w + 64), cell=10)
    sharp = np.zeros((h, w + 64), dtype=bool)
    # Background-plane bands along the top and bottom.
    sharp[5:45, 8 : w + 56] = True
    sharp[h - 45 : h - 5, 8 : w + 56] = True
    # Foreground-plane patches; their left-frame footprints (shifted by
    # d_foreground - 32) stay clear of the blob.
    sharp[65 : h - 65, 78 : 118] = True
    sharp[65 : h - 65, 196 : 228] = True
    tex = np.where(sharp, 0.7 * board + 0.3 * tex, tex)

    d_gt = np.full((h, w), float(d_background), dtype=np.float32)
    d_gt[60 : h - 60, 70 : w - 70] = d_foreground
    xs = np.arange(w)[None, :].repeat(h, 0)
    src = xs - d_gt.astype(int) + 32  # offset keeps sampling in-range
    right = tex[:, 32 : 32 + w].copy()
    left_clean = tex[np.arange(h)[:, None], src]

    by, bx, br = blob
    ys, xs2 = np.mgrid[0:h, 0:w]
    blob_mask = (ys - by) ** 2 + (xs2 - bx) ** 2 <= br * br
    left_blob = left_clean.copy()
    left_blob[blob_mask] = np.clip(left_blob[blob_mask] + 0.85, 0, 1)
    return left_clean, left_blob, right, blob_mask, d_gt


def to_rgb_image(gray: np.ndarray) -> RasterImage:
    return RasterImage(np.repeat(gray[:, :, None], 3, axis=2).astype(np.float32))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
