"""Ground-truth tooling for fixed-pose caustics image stacks.

A caustics-free reference is composited from the per-pixel
lowest-luminosity member of the stack; thresholding the normalized,
blurred difference between a caustics image and that reference yields the
ground-truth mask, with edge contours overlaid for visual inspection.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .colortransfer import channel_stats, transfer_color
from .errors import DimensionError, ParameterError
from .image import (
    BinaryMask,
    RasterImage,
    canny_edges,
    gaussian_blur,
    lab_to_rgb,
    normalize_minmax,
    rgb_to_lab,
)

OVERLAY_COLOR = (255, 0, 0)
MOVING_OBJECT_NEIGHBOR_FRACTION = 0.9


@dataclass(frozen=True)
class ImageStack:
    """Co-registered images from one fixed camera pose."""

    images: tuple[RasterImage, ...]
    interval_seconds: float | None = None

    def __post_init__(self):
        if len(self.images) < 1:
            raise ParameterError("stack needs at least one image")
        first = self.images[0]
        for img in self.images[1:]:
            if (img.height, img.width, img.channels) != (
                first.height,
                first.width,
                first.channels,
            ):
                raise DimensionError("stack images must share dimensions")

    def __len__(self) -> int:
        return len(self.images)


@dataclass(frozen=True)
class DifferenceImage:
    """Per-pixel channel-max absolute difference against the reference."""

    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 2 or np.any(self.values < 0):
            raise ParameterError("difference image must be a non-negative 2-D array")


def reference_min_luminosity(stack: ImageStack) -> tuple[RasterImage, np.ndarray]:
    """Per-pixel composite taking the stack member with the lowest l value.

    Returns (reference, winners) where winners holds the index of the image
    chosen at each pixel (ties go to the earliest image). A single-image
    stack is returned unchanged with a warning.
    """
    if len(stack) == 1:
        warnings.warn("reference_min_luminosity: single-image stack, returning it unchanged")
        img = stack.images[0]
        return img, np.zeros((img.height, img.width), dtype=np.int64)

    def lum(img: RasterImage) -> np.ndarray:
        return rgb_to_lab(img).l if img.channels == 3 else img.as_float()

    luminosities = np.stack([lum(img) for img in stack.images], axis=0)
    winners = np.argmin(luminosities, axis=0)
    floats = np.stack([img.as_float() for img in stack.images], axis=0)
    h, w = winners.shape
    yy, xx = np.mgrid[0:h, 0:w]
    composite = floats[winners, yy, xx]
    return RasterImage(composite.astype(np.float32)), winners


def flag_moving_objects(winners: np.ndarray) -> np.ndarray:
    """Flag pixels whose winning image disagrees with >= 90% of its 8 neighbors.

    Min-compositing can smear objects that moved between exposures; these
    isolated-winner pixels are surfaced for manual QA, not removed.
    """
    h, w = winners.shape
    same = np.zeros((h, w), dtype=np.int16)
    count = np.zeros((h, w), dtype=np.int16)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            ys = slice(max(dy, 0), h + min(dy, 0))
            xs = slice(max(dx, 0), w + min(dx, 0))
            ys_n = slice(max(-dy, 0), h + min(-dy, 0))
            xs_n = slice(max(-dx, 0), w + min(-dx, 0))
            same[ys, xs] += winners[ys, xs] == winners[ys_n, xs_n]
            count[ys, xs] += 1
    differing = count - same
    return differing >= MOVING_OBJECT_NEIGHBOR_FRACTION * count


def difference_image(img: RasterImage, reference: RasterImage) -> DifferenceImage:
    """Channel-max absolute difference; the caller handles color transfer."""
    if (img.height, img.width, img.channels) != (
        reference.height,
        reference.width,
        reference.channels,
    ):
        raise DimensionError("image and reference dimensions must match")
    a = img.as_float().astype(np.float64)
    b = reference.as_float().astype(np.float64)
    delta = np.abs(a - b)
    if delta.ndim == 3:
        delta = delta.max(axis=2)
    return DifferenceImage(delta.astype(np.float32))


def _draw_contours(img: RasterImage, contours: np.ndarray) -> RasterImage:
    base = img.to_u8_image().data
    if base.ndim == 2:
        base = np.repeat(base[:, :, None], 3, axis=2)
    out = np.array(base, copy=True)
    out[contours] = OVERLAY_COLOR
    return RasterImage(out)


def generate_ground_truth(
    img: RasterImage,
    reference: RasterImage,
    blur_kernel: int = 5,
    threshold: int = 40,
) -> tuple[BinaryMask, RasterImage, DifferenceImage]:
    """Thresholded-difference ground truth plus a contour overlay for QA.

    Color statistics of the caustics image are transferred onto the
    reference first, the difference is blurred (kernel 3 to 7) and
    normalized to [0, 255], and pixels above ``threshold`` become caustics.
    A degenerate difference range yields an empty mask with a warning.

    Returns:
        (mask, overlay image, raw difference image).
    """
    if not 0 <= threshold <= 255:
        raise ParameterError("threshold must be within [0, 255]")
    if img.channels == 3 and reference.channels == 3:
        ref_lab = rgb_to_lab(reference)
        img_stats = channel_stats(rgb_to_lab(img))
        ref_stats = channel_stats(ref_lab)
        # Identical statistics make the transfer a no-op; skip the recolor
        # so its RGB round trip cannot inject matrix-rounding noise.
        if img_stats != ref_stats:
            reference = lab_to_rgb(transfer_color(ref_lab, img_stats, ref_stats))
    delta = difference_image(img, reference)
    blurred = gaussian_blur(RasterImage(delta.values), kernel=blur_kernel)
    normalized, degenerate = normalize_minmax(blurred)
    if degenerate:
        warnings.warn("generate_ground_truth: degenerate difference range, empty mask")
        mask = BinaryMask(np.zeros((img.height, img.width), dtype=bool))
        return mask, _draw_contours(img, np.zeros((img.height, img.width), dtype=bool)), delta
    mask = BinaryMask(normalized.data > threshold)
    edges = canny_edges(RasterImage(mask.caustics.astype(np.float32)), low=0.1, high=0.5)
    return mask, _draw_contours(img, edges), delta
