"""Image containers, color-space conversion, and low-level filters.

All pixel data is row-major interleaved. Two sample depths are supported:
``uint8`` in [0, 255] and ``float32`` in [0, 1]. Every operation here is a
pure function: given the same inputs it returns bit-identical outputs, and
no input array is ever modified.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DimensionError, ParameterError

# Serialized mask values: 8-bit single-channel PNG.
CAUSTICS = 0
NON_CAUSTICS = 255

# Zero guard applied before the logarithm in the decorrelated color space.
LOG_EPS = 1.0 / 255.0

# Conversion matrices for the decorrelated logarithmic opponent color space
# (achromatic l, yellow-blue alpha, red-green beta).
_RGB_TO_LMS = np.array(
    [
        [0.3811, 0.5783, 0.0402],
        [0.1967, 0.7244, 0.0782],
        [0.0241, 0.1288, 0.8444],
    ]
)
_LMS_TO_RGB = np.array(
    [
        [4.4679, -3.5873, 0.1193],
        [-1.2186, 2.3809, -0.1624],
        [0.0497, -0.2439, 1.2045],
    ]
)
_LOGLMS_TO_LAB = np.diag([1.0 / np.sqrt(3.0), 1.0 / np.sqrt(6.0), 1.0 / np.sqrt(2.0)]) @ np.array(
    [[1.0, 1.0, 1.0], [1.0, 1.0, -2.0], [1.0, -1.0, 0.0]]
)
_LAB_TO_LOGLMS = np.array(
    [[1.0, 1.0, 1.0], [1.0, 1.0, -1.0], [1.0, -2.0, 0.0]]
) @ np.diag([np.sqrt(3.0) / 3.0, np.sqrt(6.0) / 6.0, np.sqrt(2.0) / 2.0])


def _readonly(a: np.ndarray) -> np.ndarray:
    view = a.view()
    view.flags.writeable = False
    return view


@dataclass(frozen=True)
class RasterImage:
    """Interleaved raster with 1 or 3 channels and u8 or f32 samples.

    ``data`` has shape (height, width) or (height, width, 3). The array is
    made read-only on construction; operations return new images.
    """

    data: np.ndarray

    def __post_init__(self):
        a = self.data
        if a.ndim == 2:
            pass
        elif a.ndim == 3 and a.shape[2] == 3:
            pass
        else:
            raise DimensionError(f"expected (H, W) or (H, W, 3) data, got shape {a.shape}")
        if a.dtype == np.uint8:
            pass
        elif a.dtype == np.float32:
            if not np.all(np.isfinite(a)):
                raise ParameterError("float image contains NaN or Inf samples")
        else:
            raise ParameterError(f"unsupported sample dtype {a.dtype}; use uint8 or float32")
        object.__setattr__(self, "data", _readonly(np.ascontiguousarray(a)))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else 3

    @property
    def depth(self) -> str:
        return "u8" if self.data.dtype == np.uint8 else "f32"

    def as_float(self) -> np.ndarray:
        """Samples as float32 in [0, 1] (u8 inputs are scaled by 1/255)."""
        if self.data.dtype == np.uint8:
            return self.data.astype(np.float32) / 255.0
        return np.array(self.data, dtype=np.float32)

    def to_float_image(self) -> "RasterImage":
        return RasterImage(self.as_float())

    def to_u8_image(self) -> "RasterImage":
        if self.data.dtype == np.uint8:
            return self
        return RasterImage(float_to_u8(self.data))

    def luminance(self) -> np.ndarray:
        """Single-channel float32 luminance (Rec.601 weights for 3-channel input)."""
        f = self.as_float()
        if f.ndim == 2:
            return f
        return (0.299 * f[:, :, 0] + 0.587 * f[:, :, 1] + 0.114 * f[:, :, 2]).astype(np.float32)


@dataclass(frozen=True)
class LabImage:
    """Per-pixel float planes of the decorrelated opponent color space."""

    l: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        if not (self.l.shape == self.alpha.shape == self.beta.shape) or self.l.ndim != 2:
            raise DimensionError("l, alpha, beta planes must share one (H, W) shape")
        for name in ("l", "alpha", "beta"):
            plane = getattr(self, name)
            if not np.all(np.isfinite(plane)):
                raise ParameterError(f"{name} plane contains NaN or Inf")
            object.__setattr__(self, name, _readonly(np.ascontiguousarray(plane, dtype=np.float32)))

    @property
    def width(self) -> int:
        return self.l.shape[1]

    @property
    def height(self) -> int:
        return self.l.shape[0]

    def planes(self) -> np.ndarray:
        """Stacked (H, W, 3) view of the three planes."""
        return np.stack([self.l, self.alpha, self.beta], axis=-1)


@dataclass(frozen=True)
class BinaryMask:
    """Two-class per-pixel labels; True marks a caustics pixel."""

    caustics: np.ndarray

    def __post_init__(self):
        if self.caustics.ndim != 2:
            raise DimensionError(f"mask must be 2-D, got shape {self.caustics.shape}")
        object.__setattr__(
            self, "caustics", _readonly(np.ascontiguousarray(self.caustics, dtype=bool))
        )

    @property
    def width(self) -> int:
        return self.caustics.shape[1]

    @property
    def height(self) -> int:
        return self.caustics.shape[0]

    @property
    def non_caustics(self) -> np.ndarray:
        return ~self.caustics

    def to_u8(self) -> np.ndarray:
        """Serialized form: 0 = caustics, 255 = non-caustics."""
        return np.where(self.caustics, CAUSTICS, NON_CAUSTICS).astype(np.uint8)

    @classmethod
    def from_u8(cls, labels: np.ndarray) -> "BinaryMask":
        values = np.unique(labels)
        if not np.all(np.isin(values, (CAUSTICS, NON_CAUSTICS))):
            raise ParameterError(
                f"mask labels must be exactly {{0, 255}}, found values {values[:8]}"
            )
        return cls(labels == CAUSTICS)

    @classmethod
    def all_non_caustics(cls, height: int, width: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool))


@dataclass(frozen=True)
class CameraCalibration:
    """Pinhole intrinsics plus radial/tangential distortion coefficients."""

    fx: float
    fy: float
    cx: float
    cy: float
    k1: float = 0.0
    k2: float = 0.0
    p1: float = 0.0
    p2: float = 0.0
    k3: float = 0.0
    width: int | None = None
    height: int | None = None

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ParameterError("focal lengths must be positive")
        if self.width is not None and not (0 < self.cx < self.width):
            raise ParameterError("principal point cx outside image width")
        if self.height is not None and not (0 < self.cy < self.height):
            raise ParameterError("principal point cy outside image height")


def float_to_u8(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] floats to u8 with round-half-away-from-zero."""
    scaled = np.clip(values, 0.0, 1.0) * 255.0
    return np.floor(scaled + 0.5).astype(np.uint8)


def rgb_to_lab(img: RasterImage) -> LabImage:
    """Convert a 3-channel image to the logarithmic opponent color space.

    u8 inputs are scaled to [0, 1] first; samples are clamped to a small
    epsilon before the base-10 logarithm so black pixels stay finite.
    """
    if img.channels != 3:
        raise DimensionError("rgb_to_lab needs a 3-channel image")
    rgb = img.as_float().astype(np.float64)
    lms = rgb @ _RGB_TO_LMS.T
    np.maximum(lms, LOG_EPS, out=lms)
    lab = np.log10(lms) @ _LOGLMS_TO_LAB.T
    return LabImage(
        lab[:, :, 0].astype(np.float32),
        lab[:, :, 1].astype(np.float32),
        lab[:, :, 2].astype(np.float32),
    )


def lab_to_rgb(img: LabImage) -> RasterImage:
    """Invert the opponent-space conversion; output is clamped to [0, 1]."""
    lab = img.planes().astype(np.float64)
    loglms = lab @ _LAB_TO_LOGLMS.T
    lms = np.power(10.0, loglms)
    rgb = np.clip(lms @ _LMS_TO_RGB.T, 0.0, 1.0)
    return RasterImage(rgb.astype(np.float32))


def gaussian_kernel1d(kernel: int, sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian weights for an odd kernel size."""
    half = (kernel - 1) // 2
    xs = np.arange(-half, half + 1, dtype=np.float64)
    w = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    return w / w.sum()


def default_sigma(kernel: int) -> float:
    """Sigma derived from kernel size when the caller gives none."""
    return 0.3 * ((kernel - 1) / 2.0 - 1.0) + 0.8


def gaussian_blur(img: RasterImage, kernel: int = 5, sigma: float | None = None) -> RasterImage:
    """Separable Gaussian smoothing with border replication.

    Args:
        img: 1- or 3-channel image.
        kernel: odd kernel size, one of 3, 5, 7.
        sigma: Gaussian sigma; derived from the kernel size when None.

    Returns:
        Blurred image with the input's depth.
    """
    if kernel not in (3, 5, 7):
        raise ParameterError(f"kernel size must be an odd value in {{3, 5, 7}}, got {kernel}")
    if sigma is None:
        sigma = default_sigma(kernel)
    if sigma <= 0:
        raise ParameterError("sigma must be positive")
    w = gaussian_kernel1d(kernel, sigma)
    f = img.as_float().astype(np.float64)
    out = ndimage.correlate1d(f, w, axis=0, mode="nearest")
    out = ndimage.correlate1d(out, w, axis=1, mode="nearest")
    if img.depth == "u8":
        return RasterImage(float_to_u8(out))
    return RasterImage(out.astype(np.float32))


def median_filter(img: RasterImage, window: int = 3) -> RasterImage:
    """Per-pixel window median on a single-channel image, border replication."""
    if img.channels != 1:
        raise DimensionError("median_filter operates on single-channel images")
    if window % 2 == 0 or window < 1:
        raise ParameterError(f"window must be odd and positive, got {window}")
    out = ndimage.median_filter(img.data, size=window, mode="nearest")
    return RasterImage(out)


def median_filter_array(values: np.ndarray, window: int = 3) -> np.ndarray:
    """Median filter on a raw float array (used on disparity maps)."""
    if window % 2 == 0 or window < 1:
        raise ParameterError(f"window must be odd and positive, got {window}")
    return ndimage.median_filter(values, size=window, mode="nearest")


def canny_edges(img: RasterImage, low: float, high: float) -> np.ndarray:
    """Canny edge raster: Sobel gradients, non-maximum suppression, hysteresis.

    Args:
        img: single-channel image; float inputs are used as-is.
        low: weak-edge threshold on gradient magnitude.
        high: strong-edge threshold; must exceed ``low``.

    Returns:
        Boolean (H, W) array, True on edge pixels (1 px wide along
        the gradient direction).
    """
    if img.channels != 1:
        raise DimensionError("canny_edges operates on single-channel images")
    if not low < high:
        raise ParameterError(f"low threshold ({low}) must be below high ({high})")
    f = img.as_float().astype(np.float64)
    gx = ndimage.sobel(f, axis=1, mode="nearest")
    gy = ndimage.sobel(f, axis=0, mode="nearest")
    mag = np.hypot(gx, gy)
    if not np.any(mag > low):
        return np.zeros(f.shape, dtype=bool)

    # Quantize gradient direction into 4 sectors and suppress non-maxima by
    # comparing against the two neighbors along the gradient. The forward
    # comparison is strict so plateau edges stay one pixel wide.
    angle = np.mod(np.arctan2(gy, gx), np.pi)
    sector = np.zeros(f.shape, dtype=np.int8)
    sector[(angle >= np.pi / 8) & (angle < 3 * np.pi / 8)] = 1
    sector[(angle >= 3 * np.pi / 8) & (angle < 5 * np.pi / 8)] = 2
    sector[(angle >= 5 * np.pi / 8) & (angle < 7 * np.pi / 8)] = 3
    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    padded = np.pad(mag, 1, mode="constant")
    keep = np.zeros(f.shape, dtype=bool)
    h, w = f.shape
    for s, (dy, dx) in offsets.items():
        fwd = padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
        bwd = padded[1 - dy : 1 - dy + h, 1 - dx : 1 - dx + w]
        keep |= (sector == s) & (mag > fwd) & (mag >= bwd)

    strong = keep & (mag > high)
    candidate = keep & (mag > low)
    labels, n = ndimage.label(candidate, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        return np.zeros(f.shape, dtype=bool)
    strong_labels = np.unique(labels[strong])
    strong_labels = strong_labels[strong_labels > 0]
    return np.isin(labels, strong_labels)


def normalize_minmax(img: RasterImage) -> tuple[RasterImage, bool]:
    """Affine remap so the minimum sample becomes 0 and the maximum 255.

    Returns:
        (u8 image, degenerate) where ``degenerate`` is True when the input
        range collapsed (max == min); the output is then all zeros.
    """
    f = img.as_float().astype(np.float64)
    lo = float(f.min())
    hi = float(f.max())
    if hi == lo:
        warnings.warn("normalize_minmax: degenerate input range, output is all zeros")
        return RasterImage(np.zeros(f.shape, dtype=np.uint8)), True
    scaled = (f - lo) / (hi - lo) * 255.0
    return RasterImage(np.floor(scaled + 0.5).astype(np.uint8)), False


def bilinear_sample(
    data: np.ndarray, xs: np.ndarray, ys: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Sample float data at subpixel (xs, ys) with bilinear weights.

    Returns (values, valid) where ``valid`` marks samples whose location
    lies inside [0, W-1] x [0, H-1]. Invalid samples are 0.
    """
    h, w = data.shape[:2]
    valid = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    x = np.clip(xs, 0, w - 1)
    y = np.clip(ys, 0, h - 1)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0).astype(np.float64)
    fy = (y - y0).astype(np.float64)
    if data.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    v00 = data[y0, x0]
    v10 = data[y0, x1]
    v01 = data[y1, x0]
    v11 = data[y1, x1]
    out = (
        v00 * (1 - fx) * (1 - fy)
        + v10 * fx * (1 - fy)
        + v01 * (1 - fx) * fy
        + v11 * fx * fy
    )
    out = np.where(valid[..., None] if data.ndim == 3 else valid, out, 0.0)
    return out, valid


def nearest_sample(
    data: np.ndarray, xs: np.ndarray, ys: np.ndarray, fill
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-neighbor sampling; out-of-source locations take ``fill``."""
    h, w = data.shape[:2]
    xi = np.floor(xs + 0.5).astype(np.intp)
    yi = np.floor(ys + 0.5).astype(np.intp)
    valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    out = np.full(xs.shape + data.shape[2:], fill, dtype=data.dtype)
    out[valid] = data[yi[valid], xi[valid]]
    return out, valid


def _distortion_map(calib: CameraCalibration, height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    # For each undistorted output pixel, the distorted source location:
    # normalize, apply the radial + tangential model, project back.
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    xn = (xs - calib.cx) / calib.fx
    yn = (ys - calib.cy) / calib.fy
    r2 = xn * xn + yn * yn
    radial = 1.0 + calib.k1 * r2 + calib.k2 * r2 * r2 + calib.k3 * r2 * r2 * r2
    xd = xn * radial + 2.0 * calib.p1 * xn * yn + calib.p2 * (r2 + 2.0 * xn * xn)
    yd = yn * radial + calib.p1 * (r2 + 2.0 * yn * yn) + 2.0 * calib.p2 * xn * yn
    return xd * calib.fx + calib.cx, yd * calib.fy + calib.cy


def undistort(img: RasterImage, calib: CameraCalibration) -> tuple[RasterImage, np.ndarray]:
    """Remove lens distortion by inverse mapping with bilinear sampling.

    Returns:
        (undistorted image, validity mask); pixels mapped from outside the
        source are 0 and flagged invalid.
    """
    sx, sy = _distortion_map(calib, img.height, img.width)
    values, valid = bilinear_sample(img.as_float().astype(np.float64), sx, sy)
    if img.depth == "u8":
        return RasterImage(float_to_u8(values)), valid
    return RasterImage(values.astype(np.float32)), valid


def undistort_mask(mask: BinaryMask, calib: CameraCalibration) -> BinaryMask:
    """Apply the distortion remap to a mask with nearest-neighbor sampling.

    Out-of-source pixels become caustics so untrusted border content is
    never used as replacement donors.
    """
    sx, sy = _distortion_map(calib, mask.height, mask.width)
    values, valid = nearest_sample(mask.caustics, sx, sy, fill=True)
    values = values | ~valid
    return BinaryMask(values)
