"""Colormap values, heatmap orientation, PPM files, histogram export."""

import numpy as np
import pytest

from trainscape.errors import FormatError, IncompleteSweepError, InputError
from trainscape.fractal import histogram_mu
from trainscape.model import ModelConfig
from trainscape.render import (
    binary_image,
    colormap,
    colormap_pixel,
    read_ppm,
    render_heatmap,
    write_histogram_csv,
    write_ppm,
)
from trainscape.sweep import GridSpec, SweepResult
from trainscape.training import TrainRunConfig


def fake_result(mu, done=None):
    mu = np.asarray(mu, dtype=np.float64)
    grid = GridSpec(1e-3, 1e-3, mu.shape[0], 1e-3, 1e-3, mu.shape[1])
    result = SweepResult.empty(grid, ModelConfig(), TrainRunConfig(), "digest")
    result.mu = mu
    result.converged = mu > 0.0
    result.done = np.ones(mu.shape, dtype=bool) if done is None else np.asarray(done, dtype=bool)
    return result


class TestColormap:
    def test_anchor_colors(self):
        assert colormap_pixel(1.0) == (0, 0, 255)
        assert colormap_pixel(0.0) == (255, 255, 255)
        assert colormap_pixel(-1.0) == (255, 0, 0)
        assert colormap_pixel(0.5) == (128, 128, 255)
        assert colormap_pixel(-0.5) == (255, 128, 128)

    def test_rounds_half_up(self):
        # 255 * (1 - 0.999) = 0.255 -> 0; 255 * (1 - 0.1) = 229.5 -> 230
        assert colormap_pixel(0.999) == (0, 0, 255)
        assert colormap_pixel(0.1) == (230, 230, 255)

    def test_out_of_range_rejected(self):
        for bad in (1.5, -1.5, float("nan"), float("inf")):
            with pytest.raises(InputError):
                colormap_pixel(bad)

    def test_vectorized_matches_scalar(self):
        values = np.linspace(-1.0, 1.0, 201)
        arr = colormap(values)
        assert arr.shape == (201, 3)
        assert arr.dtype == np.uint8
        for k, v in enumerate(values):
            assert tuple(int(c) for c in arr[k]) == colormap_pixel(float(v)), v

    def test_vectorized_range_check(self):
        with pytest.raises(InputError):
            colormap(np.array([0.0, 1.2]))
        with pytest.raises(InputError):
            colormap(np.array([np.nan]))


class TestHeatmap:
    def test_attention_rate_increases_upward(self):
        # row 0 of the grid (lowest attention rate) must be the bottom row
        # of the image; use an asymmetric grid so the flip is observable
        mu = [[1.0, 0.0], [-1.0, 0.5], [0.25, -0.5]]
        img = render_heatmap(fake_result(mu))
        assert img.shape == (3, 2, 3)
        assert tuple(img[2, 0]) == (0, 0, 255)      # grid (0,0), mu 1, bottom-left
        assert tuple(img[2, 1]) == (255, 255, 255)  # grid (0,1), mu 0
        assert tuple(img[1, 0]) == (255, 0, 0)      # grid (1,0), mu -1
        assert tuple(img[0, 0]) == (191, 191, 255)  # grid (2,0), mu 0.25, top-left

    def test_incomplete_rejected(self):
        result = fake_result([[0.5, 0.1]], done=[[True, False]])
        with pytest.raises(IncompleteSweepError):
            render_heatmap(result)


class TestBinaryImage:
    def test_set_pixels_black_with_flip(self):
        mask = np.array([[True, False], [False, False]])
        img = binary_image(mask)
        assert img.shape == (2, 2, 3)
        assert tuple(img[1, 0]) == (0, 0, 0)        # row 0 lands at the bottom
        assert tuple(img[0, 0]) == (255, 255, 255)

    def test_no_flip(self):
        mask = np.array([[True, False], [False, False]])
        img = binary_image(mask, flip_rows=False)
        assert tuple(img[0, 0]) == (0, 0, 0)

    def test_type_checked(self):
        with pytest.raises(InputError):
            binary_image(np.zeros((2, 2), dtype=np.uint8))


class TestPpm:
    def test_header_bytes_exact(self, tmp_path):
        path = tmp_path / "one.ppm"
        write_ppm(np.zeros((1, 1, 3), dtype=np.uint8), path)
        blob = path.read_bytes()
        assert blob == b"P6\n1 1\n255\n" + b"\x00\x00\x00"
        assert len(blob) == 11 + 3

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
        path = tmp_path / "rt.ppm"
        write_ppm(img, path)
        assert np.array_equal(read_ppm(path), img)

    def test_write_twice_byte_identical(self, tmp_path):
        img = colormap(np.linspace(-1, 1, 12).reshape(3, 4))
        a, b = tmp_path / "a.ppm", tmp_path / "b.ppm"
        write_ppm(img, a)
        write_ppm(img, b)
        assert a.read_bytes() == b.read_bytes()

    def test_width_before_height(self, tmp_path):
        path = tmp_path / "wide.ppm"
        write_ppm(np.zeros((2, 5, 3), dtype=np.uint8), path)
        assert path.read_bytes().startswith(b"P6\n5 2\n255\n")

    def test_input_validation(self, tmp_path):
        path = tmp_path / "bad.ppm"
        with pytest.raises(InputError):
            write_ppm(np.zeros((2, 2), dtype=np.uint8), path)
        with pytest.raises(InputError):
            write_ppm(np.zeros((2, 2, 3), dtype=np.float64), path)

    def test_read_rejects_truncation(self, tmp_path):
        path = tmp_path / "trunc.ppm"
        write_ppm(np.zeros((2, 2, 3), dtype=np.uint8), path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-1])
        with pytest.raises(FormatError):
            read_ppm(path)

    def test_read_rejects_other_magic(self, tmp_path):
        path = tmp_path / "p3.ppm"
        path.write_bytes(b"P3\n1 1\n255\n0 0 0\n")
        with pytest.raises(FormatError):
            read_ppm(path)


class TestHistogramCsv:
    def test_layout_and_values(self, tmp_path):
        hist = histogram_mu(fake_result([[-1.0, -0.5], [0.0, 1.0]]), bins=4)
        path = tmp_path / "hist.csv"
        write_histogram_csv(hist, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "bin_low,bin_high,count"
        assert len(lines) == 5
        low, high, count = lines[1].split(",")
        assert float(low) == -1.0 and float(high) == -0.5 and count == "1"
        # plain decimal floats, no numpy repr noise
        assert "np." not in lines[1]
