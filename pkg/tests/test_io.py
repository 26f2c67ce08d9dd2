"""File format round-trip tests."""

import numpy as np
import pytest
from PIL import Image

from caustics.errors import ParameterError
from caustics.image import BinaryMask, CameraCalibration, RasterImage
from caustics.io import (
    read_calibration,
    read_disparity_png,
    read_image,
    read_mask,
    read_pfm,
    write_calibration,
    write_disparity_png,
    write_image,
    write_mask,
    write_pfm,
)


def test_png_u8_round_trip(tmp_path, rng):
    arr = rng.integers(0, 256, (12, 16, 3), dtype=np.uint8)
    path = tmp_path / "img.png"
    write_image(path, RasterImage(arr))
    assert np.array_equal(read_image(path).data, arr)


def test_float_image_written_as_u8(tmp_path):
    arr = np.linspace(0, 1, 64, dtype=np.float32).reshape(8, 8)
    path = tmp_path / "img.png"
    write_image(path, RasterImage(arr))
    back = read_image(path)
    assert back.depth == "u8"
    assert np.abs(back.as_float() - arr).max() <= 0.5 / 255 + 1e-6


def test_jpeg_read(tmp_path, rng):
    arr = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
    path = tmp_path / "img.jpg"
    Image.fromarray(arr).save(path, format="JPEG", quality=95)
    img = read_image(path)
    assert img.channels == 3
    assert (img.height, img.width) == (16, 16)


def test_grayscale_read_stays_single_channel(tmp_path, rng):
    arr = rng.integers(0, 256, (10, 10), dtype=np.uint8)
    path = tmp_path / "gray.png"
    Image.fromarray(arr).save(path)
    assert read_image(path).channels == 1


def test_mask_round_trip(tmp_path, rng):
    mask = BinaryMask(rng.random((9, 13)) > 0.5)
    path = tmp_path / "mask.png"
    write_mask(path, mask)
    assert np.array_equal(read_mask(path).caustics, mask.caustics)


def test_calibration_round_trip(tmp_path):
    calib = CameraCalibration(
        fx=800.0, fy=790.0, cx=320.0, cy=240.0,
        k1=0.01, k2=-0.002, p1=0.0001, p2=-0.0002, k3=0.0003,
        width=640, height=480,
    )
    path = tmp_path / "calib.json"
    write_calibration(path, calib)
    assert read_calibration(path) == calib


def test_calibration_unknown_key_rejected(tmp_path):
    path = tmp_path / "calib.json"
    path.write_text('{"fx": 1.0, "fy": 1.0, "cx": 1.0, "cy": 1.0, "focal": 2.0}')
    with pytest.raises(ParameterError, match="focal"):
        read_calibration(path)


def test_disparity_png_round_trip_with_negative_range(tmp_path, rng):
    values = rng.uniform(-6.0, 20.0, (8, 10)).astype(np.float32)
    path = tmp_path / "disp.png"
    write_disparity_png(path, values, d_min=-6)
    back = read_disparity_png(path)
    assert np.abs(back - values).max() <= 1 / 16 / 2 + 1e-6


def test_pfm_round_trip(tmp_path, rng):
    values = rng.normal(0, 4, (7, 11)).astype(np.float32)
    path = tmp_path / "disp.pfm"
    write_pfm(path, values)
    assert np.array_equal(read_pfm(path), values)
