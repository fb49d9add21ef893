"""
Tests for PPM image and mask I/O.
"""

import numpy as np
import pytest

from src.core.errors import FormatError
from src.core.image_io import (read_image, read_mask, read_ppm_bytes, to_bytes, to_float, write_image,
                               write_mask, write_ppm_bytes)
from src.core.rng import Rng


def _ppm(width: int, height: int, payload: bytes, header: bytes = None) -> bytes:
    head = header if header is not None else f"P6\n{width} {height}\n255\n".encode("ascii")
    return head + payload


class TestPixelMapping:

    def test_endpoints(self):
        values = to_float(np.array([0, 255], dtype=np.uint8))
        assert values[0] == -1.0
        assert values[1] == 1.0

    def test_every_byte_survives_float_round_trip(self):
        pixels = np.arange(256, dtype=np.uint8)
        assert np.array_equal(to_bytes(to_float(pixels)), pixels)

    def test_round_half_up(self):
        # 2 * 127.5 / 255 - 1 == 0 exactly; (0 + 1) * 127.5 = 127.5 rounds up
        assert to_bytes(np.array([0.0]))[0] == 128

    def test_clipping(self):
        assert to_bytes(np.array([-3.0, 3.0])).tolist() == [0, 255]


class TestFiles:

    def test_write_read_is_byte_identical(self, tmp_path):
        pixels = (Rng(0).uniform((32, 32, 3)) * 256).astype(np.uint8)
        write_ppm_bytes(tmp_path / "a.ppm", pixels)
        image = read_image(tmp_path / "a.ppm")
        write_image(tmp_path / "b.ppm", image)
        assert (tmp_path / "a.ppm").read_bytes() == (tmp_path / "b.ppm").read_bytes()

    def test_header_comments_allowed(self, tmp_path):
        path = tmp_path / "c.ppm"
        path.write_bytes(_ppm(1, 1, bytes([0, 128, 255]), b"P6\n# made by hand\n1 1\n255\n"))
        assert read_ppm_bytes(path).tolist() == [[[0, 128, 255]]]

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "p3.ppm"
        path.write_bytes(b"P3\n1 1\n255\n0 0 0\n")
        with pytest.raises(FormatError):
            read_ppm_bytes(path)

    def test_wrong_maxval(self, tmp_path):
        path = tmp_path / "m.ppm"
        path.write_bytes(_ppm(1, 1, bytes(6), b"P6\n1 1\n65535\n"))
        with pytest.raises(FormatError):
            read_ppm_bytes(path)

    def test_short_raster(self, tmp_path):
        path = tmp_path / "s.ppm"
        path.write_bytes(_ppm(2, 2, bytes(5)))
        with pytest.raises(FormatError):
            read_ppm_bytes(path)

    def test_wrong_dimensions(self, tmp_path):
        path = tmp_path / "d.ppm"
        path.write_bytes(_ppm(16, 16, bytes(16 * 16 * 3)))
        with pytest.raises(FormatError):
            read_image(path)

    def test_mask_round_trip(self, tmp_path):
        mask = np.zeros((32, 32), dtype=bool)
        mask[4:12, 20:30] = True
        write_mask(tmp_path / "mask.ppm", mask)
        assert np.array_equal(read_mask(tmp_path / "mask.ppm"), mask)
