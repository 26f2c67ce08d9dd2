"""File I/O: images (PNG/JPEG), masks, calibration JSON, disparity dumps."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ParameterError
from .image import BinaryMask, CameraCalibration, RasterImage, float_to_u8

_CALIB_KEYS = ("fx", "fy", "cx", "cy", "k1", "k2", "p1", "p2", "k3", "width", "height")


def read_image(path: str | Path) -> RasterImage:
    """Read a PNG or JPEG file as a u8 raster (grayscale kept single-channel)."""
    with Image.open(path) as im:
        if im.mode in ("L", "I;16", "I"):
            arr = np.asarray(im.convert("L"), dtype=np.uint8)
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return RasterImage(arr)


def write_image(path: str | Path, img: RasterImage) -> None:
    """Write an 8-bit PNG; float images are scaled/rounded to u8 first."""
    data = img.data if img.depth == "u8" else float_to_u8(img.as_float())
    Image.fromarray(data).save(path, format="PNG")


def read_mask(path: str | Path) -> BinaryMask:
    """Read an 8-bit single-channel mask PNG (0 = caustics, 255 = non-caustics)."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.uint8)
    return BinaryMask.from_u8(arr)


def write_mask(path: str | Path, mask: BinaryMask) -> None:
    Image.fromarray(mask.to_u8()).save(path, format="PNG")


def read_calibration(path: str | Path) -> CameraCalibration:
    """Load a calibration JSON with the pinhole + distortion keys."""
    with open(path) as f:
        raw = json.load(f)
    unknown = set(raw) - set(_CALIB_KEYS)
    if unknown:
        raise ParameterError(f"unknown calibration keys: {sorted(unknown)}")
    missing = {"fx", "fy", "cx", "cy"} - set(raw)
    if missing:
        raise ParameterError(f"calibration file missing keys: {sorted(missing)}")
    return CameraCalibration(**raw)


def write_calibration(path: str | Path, calib: CameraCalibration) -> None:
    out = {k: getattr(calib, k) for k in _CALIB_KEYS if getattr(calib, k) is not None}
    with open(path, "w") as f:
        json.dump(out, f, indent=2)
        f.write("\n")


def write_matrix_json(path: str | Path, name: str, matrix: np.ndarray) -> None:
    """Row-major 3x3 matrix dump used for homographies and the fundamental matrix."""
    with open(path, "w") as f:
        json.dump({name: np.asarray(matrix, dtype=float).tolist()}, f, indent=2)
        f.write("\n")


def write_disparity_png(path: str | Path, values: np.ndarray, d_min: float) -> None:
    """16-bit disparity PNG with fixed-point scale 1/16.

    Values are stored as round((d - offset) * 16) where offset = min(d_min, 0),
    so negative search ranges stay representable. The offset is recorded in a
    sidecar JSON next to the PNG.
    """
    offset = min(float(d_min), 0.0)
    fixed = np.clip(np.round((values - offset) * 16.0), 0, 65535).astype(np.uint16)
    Image.fromarray(fixed).save(path, format="PNG")
    meta = {"scale": 16, "offset": offset}
    with open(Path(path).with_suffix(".json"), "w") as f:
        json.dump(meta, f)
        f.write("\n")


def read_disparity_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        fixed = np.asarray(im, dtype=np.uint16)
    meta_path = Path(path).with_suffix(".json")
    offset = 0.0
    if meta_path.exists():
        with open(meta_path) as f:
            offset = float(json.load(f).get("offset", 0.0))
    return fixed.astype(np.float32) / 16.0 + offset


def write_status_png(path: str | Path, status: np.ndarray) -> None:
    """Pre-interpolation pixel status raster (0 valid, 1 occluded, 2 mismatched)."""
    Image.fromarray(status.astype(np.uint8)).save(path, format="PNG")


def write_pfm(path: str | Path, values: np.ndarray) -> None:
    """Single-channel little-endian PFM (rows bottom-up per the format)."""
    arr = np.asarray(values, dtype=np.float32)
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{arr.shape[1]} {arr.shape[0]}\n".encode())
        f.write(b"-1.0\n")
        f.write(arr[::-1].astype("<f4").tobytes())


def read_pfm(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header != b"Pf":
            raise ParameterError("only single-channel Pf files are supported")
        w, h = (int(v) for v in f.readline().split())
        scale = float(f.readline())
        data = np.frombuffer(f.read(), dtype="<f4" if scale < 0 else ">f4")
    return data.reshape(h, w)[::-1].copy()
