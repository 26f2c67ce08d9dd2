"""Image container, color conversion, and filter tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from caustics.errors import DimensionError, ParameterError
from caustics.image import (
    BinaryMask,
    CameraCalibration,
    LabImage,
    RasterImage,
    canny_edges,
    gaussian_blur,
    gaussian_kernel1d,
    lab_to_rgb,
    median_filter,
    normalize_minmax,
    rgb_to_lab,
    undistort,
)

# Independent scalar re-implementation of the conversion chain, kept apart
# from the vectorized production path on purpose.
_RGB2LMS = [
    (0.3811, 0.5783, 0.0402),
    (0.1967, 0.7244, 0.0782),
    (0.0241, 0.1288, 0.8444),
]
_SQ3, _SQ6, _SQ2 = np.sqrt(3.0), np.sqrt(6.0), np.sqrt(2.0)


def scalar_rgb_to_lab(r, g, b):
    lms = []
    for row in _RGB2LMS:
        v = row[0] * r + row[1] * g + row[2] * b
        lms.append(np.log10(max(v, 1.0 / 255.0)))
    ll, mm, ss = lms
    return (
        (ll + mm + ss) / _SQ3,
        (ll + mm - 2 * ss) / _SQ6,
        (ll - mm) / _SQ2,
    )


class TestRasterImage:
    def test_rejects_bad_shapes(self):
        with pytest.raises(DimensionError):
            RasterImage(np.zeros((4, 4, 2), dtype=np.uint8))

    def test_rejects_nan(self):
        data = np.zeros((2, 2), dtype=np.float32)
        data[0, 0] = np.nan
        with pytest.raises(ParameterError):
            RasterImage(data)

    def test_data_is_readonly(self):
        img = RasterImage(np.zeros((2, 2), dtype=np.uint8))
        with pytest.raises(ValueError):
            img.data[0, 0] = 1

    def test_u8_float_round_trip(self):
        arr = np.arange(12, dtype=np.uint8).reshape(2, 2, 3)
        img = RasterImage(arr)
        back = img.to_float_image().to_u8_image()
        assert np.array_equal(back.data, arr)


class TestBinaryMask:
    def test_serialization_values(self):
        mask = BinaryMask(np.array([[True, False]]))
        assert mask.to_u8().tolist() == [[0, 255]]

    def test_from_u8_rejects_other_values(self):
        with pytest.raises(ParameterError):
            BinaryMask.from_u8(np.array([[0, 128]], dtype=np.uint8))


class TestCalibration:
    def test_rejects_nonpositive_focal(self):
        with pytest.raises(ParameterError):
            CameraCalibration(fx=-1.0, fy=1.0, cx=1.0, cy=1.0)

    def test_principal_point_bound_to_image(self):
        with pytest.raises(ParameterError):
            CameraCalibration(fx=1.0, fy=1.0, cx=10.0, cy=1.0, width=8, height=8)


class TestLabConversion:
    def test_gray_image_has_near_zero_opponent_channels(self):
        img = RasterImage(np.full((4, 4, 3), 0.5, dtype=np.float32))
        lab = rgb_to_lab(img)
        assert np.abs(lab.alpha).max() <= 0.02
        assert np.abs(lab.beta).max() <= 0.02

    def test_black_pixel_is_clamped_finite(self):
        img = RasterImage(np.zeros((1, 1, 3), dtype=np.uint8))
        lab = rgb_to_lab(img)
        assert np.isfinite(lab.l).all()
        assert np.isfinite(lab_to_rgb(lab).data).all()

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(3)
        arr = rng.uniform(0.05, 1.0, size=(2, 2, 3)).astype(np.float32)
        lab = rgb_to_lab(RasterImage(arr))
        for y in range(2):
            for x in range(2):
                el, ea, eb = scalar_rgb_to_lab(*(float(v) for v in arr[y, x]))
                assert abs(lab.l[y, x] - el) < 1e-5
                assert abs(lab.alpha[y, x] - ea) < 1e-5
                assert abs(lab.beta[y, x] - eb) < 1e-5

    def test_round_trip_within_tolerance(self):
        rng = np.random.default_rng(11)
        arr = rng.uniform(2 / 255, 1.0, size=(100, 100, 3)).astype(np.float32)
        back = lab_to_rgb(rgb_to_lab(RasterImage(arr)))
        assert np.abs(back.data - arr).max() <= 2 / 255

    def test_zero_lab_gives_constant_image(self):
        lab = LabImage(*(np.zeros((3, 3), dtype=np.float32) for _ in range(3)))
        rgb = lab_to_rgb(lab).data
        assert np.allclose(rgb, rgb[0, 0])

    def test_output_clamped(self):
        lab = LabImage(
            np.full((2, 2), 5.0, dtype=np.float32),
            np.zeros((2, 2), dtype=np.float32),
            np.zeros((2, 2), dtype=np.float32),
        )
        rgb = lab_to_rgb(lab).data
        assert rgb.min() >= 0.0 and rgb.max() <= 1.0

    def test_single_channel_input_rejected(self):
        with pytest.raises(DimensionError):
            rgb_to_lab(RasterImage(np.zeros((2, 2), dtype=np.uint8)))

    @settings(max_examples=30, deadline=None)
    @given(
        st.tuples(
            st.floats(0.02, 1.0), st.floats(0.02, 1.0), st.floats(0.02, 1.0)
        )
    )
    def test_round_trip_property(self, rgb):
        arr = np.array([[rgb]], dtype=np.float32)
        back = lab_to_rgb(rgb_to_lab(RasterImage(arr)))
        assert np.abs(back.data - arr).max() <= 2 / 255

    def test_conversion_is_pure(self):
        rng = np.random.default_rng(21)
        img = RasterImage(rng.random((16, 16, 3)).astype(np.float32))
        first = rgb_to_lab(img)
        second = rgb_to_lab(img)
        assert np.array_equal(first.l, second.l)
        assert np.array_equal(first.alpha, second.alpha)
        assert np.array_equal(first.beta, second.beta)


class TestGaussianBlur:
    def test_constant_image_unchanged(self):
        img = RasterImage(np.full((9, 9), 0.25, dtype=np.float32))
        out = gaussian_blur(img, kernel=3, sigma=1.0)
        assert np.allclose(out.data, 0.25, atol=1e-6)

    def test_impulse_center_equals_kernel_weight(self):
        impulse = np.zeros((7, 7), dtype=np.float32)
        impulse[3, 3] = 1.0
        out = gaussian_blur(RasterImage(impulse), kernel=3, sigma=1.0)
        k = gaussian_kernel1d(3, 1.0)
        assert abs(out.data[3, 3] - k[1] * k[1]) < 1e-6

    def test_even_kernel_rejected(self):
        with pytest.raises(ParameterError):
            gaussian_blur(RasterImage(np.zeros((4, 4), dtype=np.float32)), kernel=4)

    def test_mean_preserved_on_large_image(self):
        rng = np.random.default_rng(0)
        arr = rng.random((128, 128)).astype(np.float32)
        out = gaussian_blur(RasterImage(arr), kernel=5)
        assert abs(float(out.data.mean()) - float(arr.mean())) < 1e-4

    def test_mean_preserved_on_smooth_64(self):
        ys, xs = np.mgrid[0:64, 0:64]
        arr = (0.4 + 0.2 * np.sin(xs / 9.0) * np.cos(ys / 7.0)).astype(np.float32)
        out = gaussian_blur(RasterImage(arr), kernel=5)
        assert abs(float(out.data.mean()) - float(arr.mean())) < 1e-4


class TestMedianFilter:
    def test_constant_unchanged(self):
        img = RasterImage(np.full((5, 5), 7, dtype=np.uint8))
        assert np.array_equal(median_filter(img, 3).data, img.data)

    def test_salt_pixel_removed(self):
        arr = np.full((5, 5), 10, dtype=np.uint8)
        arr[2, 2] = 255
        out = median_filter(RasterImage(arr), 3)
        assert out.data[2, 2] == 10

    def test_hand_sorted_oracle_3x3(self):
        arr = np.array([[1, 5, 2], [8, 3, 9], [4, 7, 6]], dtype=np.uint8)
        out = median_filter(RasterImage(arr), 3)
        # Exhaustive oracle: replicate-pad and sort each window by hand.
        padded = np.pad(arr, 1, mode="edge")
        expected = np.empty_like(arr)
        for y in range(3):
            for x in range(3):
                window = sorted(padded[y : y + 3, x : x + 3].ravel().tolist())
                expected[y, x] = window[4]
        assert np.array_equal(out.data, expected)

    def test_even_window_rejected(self):
        with pytest.raises(ParameterError):
            median_filter(RasterImage(np.zeros((4, 4), dtype=np.uint8)), 4)

    def test_three_channel_rejected(self):
        with pytest.raises(DimensionError):
            median_filter(RasterImage(np.zeros((4, 4, 3), dtype=np.uint8)), 3)


class TestCanny:
    def test_constant_image_no_edges(self):
        img = RasterImage(np.full((16, 16), 0.5, dtype=np.float32))
        assert not canny_edges(img, 0.1, 0.3).any()

    def test_vertical_step_gives_single_line(self):
        arr = np.zeros((16, 16), dtype=np.float32)
        arr[:, 8:] = 1.0
        edges = canny_edges(RasterImage(arr), 0.2, 1.0)
        cols = np.nonzero(edges.any(axis=0))[0]
        assert len(cols) == 1
        assert edges[:, cols[0]].all()

    def test_lower_threshold_is_monotone(self):
        rng = np.random.default_rng(2)
        img = RasterImage(rng.random((32, 32)).astype(np.float32))
        few = canny_edges(img, 1.0, 2.0)
        many = canny_edges(img, 1e-6, 2.0)
        assert many.sum() >= few.sum()

    def test_threshold_order_enforced(self):
        with pytest.raises(ParameterError):
            canny_edges(RasterImage(np.zeros((4, 4), dtype=np.float32)), 0.5, 0.5)


class TestNormalizeMinmax:
    def test_three_levels(self):
        img = RasterImage(np.array([[10, 20, 30]], dtype=np.uint8))
        out, degenerate = normalize_minmax(img)
        assert not degenerate
        assert out.data.tolist() == [[0, 128, 255]]

    def test_full_range_unchanged(self):
        arr = np.array([[0, 100], [200, 255]], dtype=np.uint8)
        out, _ = normalize_minmax(RasterImage(arr))
        assert np.array_equal(out.data, arr)

    def test_degenerate_constant(self):
        with pytest.warns(UserWarning):
            out, degenerate = normalize_minmax(RasterImage(np.full((3, 3), 9, dtype=np.uint8)))
        assert degenerate
        assert not out.data.any()

    def test_extremes_attained(self):
        rng = np.random.default_rng(5)
        out, _ = normalize_minmax(RasterImage(rng.random((8, 8)).astype(np.float32)))
        assert out.data.min() == 0 and out.data.max() == 255


class TestUndistort:
    def test_zero_coefficients_identity(self):
        rng = np.random.default_rng(1)
        arr = rng.random((24, 32)).astype(np.float32)
        calib = CameraCalibration(fx=30.0, fy=30.0, cx=16.0, cy=12.0)
        out, valid = undistort(RasterImage(arr), calib)
        assert np.allclose(out.data, arr, atol=1e-6)
        assert valid.all()

    def test_radial_distortion_straightens_lines(self):
        # Render a barrel-distorted horizontal line, undistort, and check the
        # line-fit residual drops: sample the distorted position of a straight
        # line, then fit a line to the bright pixels before and after.
        h, w = 101, 101
        calib = CameraCalibration(fx=80.0, fy=80.0, cx=50.0, cy=50.0, k1=0.1)
        ys_line = 20.0
        arr = np.zeros((h, w), dtype=np.float32)
        for x in range(w):
            xn = (x - calib.cx) / calib.fx
            yn = (ys_line - calib.cy) / calib.fy
            r2 = xn * xn + yn * yn
            yd = yn * (1 + calib.k1 * r2)
            xd = xn * (1 + calib.k1 * r2)
            col = int(round(xd * calib.fx + calib.cx))
            row = int(round(yd * calib.fy + calib.cy))
            if 0 <= row < h and 0 <= col < w:
                arr[row, col] = 1.0

        def residual(img):
            ys, xs = np.nonzero(img > 0.5)
            coef = np.polyfit(xs, ys, 1)
            return np.abs(np.polyval(coef, xs) - ys).mean()

        out, _ = undistort(RasterImage(arr), calib)
        assert residual(out.data) < residual(arr)
