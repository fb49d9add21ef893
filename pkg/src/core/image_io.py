"""
PPM (P6) image and mask I/O.

Pixels map as ``p -> 2p/255 - 1``; writing inverts that with round-half-up,
so any file written here reads back and re-writes byte-identically.
"""

from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from src.core.errors import FormatError

PathLike = Union[str, Path]
IMAGE_SIZE = 32


def _read_token(buf: bytes, pos: int) -> Tuple[bytes, int]:
    while pos < len(buf):
        ch = buf[pos:pos + 1]
        if ch == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < len(buf) and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FormatError("unexpected end of PPM header")
    return buf[start:pos], pos


def read_ppm_bytes(path: PathLike) -> np.ndarray:
    """
    Read a binary PPM as ``uint8 [H, W, 3]``.

    Raises:
        FormatError: If the header is not ``P6`` with maxval 255 or the
            payload is short.
    """
    buf = Path(path).read_bytes()
    magic, pos = _read_token(buf, 0)
    if magic != b"P6":
        raise FormatError(f"{path}: expected P6 magic, got {magic!r}")
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        try:
            fields.append(int(tok))
        except ValueError as exc:
            raise FormatError(f"{path}: malformed header field {tok!r}") from exc
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"{path}: maxval must be 255, got {maxval}")
    pos += 1  # single whitespace byte before the raster
    need = width * height * 3
    raster = buf[pos:pos + need]
    if len(raster) != need:
        raise FormatError(f"{path}: raster has {len(raster)} bytes, expected {need}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)


def write_ppm_bytes(path: PathLike, pixels: np.ndarray) -> None:
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    height, width = pixels.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{width} {height}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def to_float(pixels: np.ndarray) -> np.ndarray:
    return (pixels.astype(np.float64) * 2.0 / 255.0 - 1.0).astype(np.float32)


def to_bytes(image: np.ndarray) -> np.ndarray:
    """Quantize ``[-1, 1]`` floats to bytes, rounding half up."""
    scaled = (np.asarray(image, dtype=np.float64) + 1.0) * 127.5
    return np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)


def read_image(path: PathLike, size: Optional[int] = IMAGE_SIZE) -> np.ndarray:
    """
    Read an RGB image as float32 ``[H, W, 3]`` in ``[-1, 1]``.

    Raises:
        FormatError: On malformed files or when the dimensions differ from
            ``size`` x ``size``.
    """
    pixels = read_ppm_bytes(path)
    if size is not None and pixels.shape[:2] != (size, size):
        raise FormatError(f"{path}: expected {size}x{size}, got {pixels.shape[1]}x{pixels.shape[0]}")
    return to_float(pixels)


def write_image(path: PathLike, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise FormatError(f"expected an [H, W, 3] image, got {image.shape}")
    write_ppm_bytes(path, to_bytes(image))


def read_mask(path: PathLike, size: Optional[int] = IMAGE_SIZE) -> np.ndarray:
    """Read a mask PPM; any nonzero channel marks the pixel."""
    pixels = read_ppm_bytes(path)
    if size is not None and pixels.shape[:2] != (size, size):
        raise FormatError(f"{path}: mask must be {size}x{size}")
    return pixels.max(axis=2) > 0


def write_mask(path: PathLike, mask: np.ndarray) -> None:
    mask = np.asarray(mask, dtype=bool)
    write_ppm_bytes(path, np.repeat((mask * 255).astype(np.uint8)[..., None], 3, axis=2))
