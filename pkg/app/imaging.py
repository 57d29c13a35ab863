# app/imaging.py
"""
8-bit raster buffer and binary netpbm I/O.
Only P5 (PGM) and P6 (PPM) with maxval 255 are accepted; JPEG decoding is an
external preprocessing step.
"""
import logging
import re
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import DataError
from .utils import atomic_write

logger = logging.getLogger("imaging")

_BINARY_MAGICS = (b"P5", b"P6")


@dataclass
class ImageBuf:
    """Row-major interleaved samples, shape (height, width, channels), channels 1 or 3."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ValueError(f"ImageBuf needs (H, W, 1|3) samples, got shape {data.shape}")
        if data.dtype != np.uint8:
            raise ValueError(f"ImageBuf samples must be uint8, got {data.dtype}")
        self.data = np.ascontiguousarray(data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def rgb(self) -> np.ndarray:
        """(H, W, 3) view of the samples; grayscale is promoted to three identical planes."""
        return self.data if self.channels == 3 else np.repeat(self.data, 3, axis=2)


def to_gray(img: ImageBuf) -> np.ndarray:
    """Luminance 0.299R + 0.587G + 0.114B, rounded, as uint8 (H, W)."""
    if img.channels == 1:
        return img.data[:, :, 0]
    rgb = img.data.astype(np.float64)
    lum = 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]
    return np.clip(np.rint(lum), 0, 255).astype(np.uint8)


def image_tensor(img: ImageBuf) -> np.ndarray:
    """Planar channel-first float32 copy of the whole image scaled to [0, 1]: [3, H, W]."""
    return np.ascontiguousarray(img.rgb().transpose(2, 0, 1), dtype=np.float32) / np.float32(255.0)


# ---------- netpbm I/O ----------
_SEP = rb"(?:\s|#[^\n]*\n)+"
_HEADER = re.compile(rb"(P[56])" + _SEP + rb"(\d+)" + _SEP + rb"(\d+)" + _SEP + rb"(\d+)\s")


def _check_header(path: str, head: bytes) -> None:
    if head[:2] not in _BINARY_MAGICS:
        raise DataError(f"{path}: not a binary PGM/PPM (magic {head[:2]!r})")
    match = _HEADER.match(head)
    if match is None:
        raise DataError(f"{path}: malformed netpbm header")
    maxval = int(match.group(4))
    if maxval != 255:
        raise DataError(f"{path}: maxval {maxval} is not supported; maxval must be 255")


def read_image(path: str) -> ImageBuf:
    try:
        with open(path, "rb") as f:
            head = f.read(512)
        _check_header(path, head)
        with Image.open(path) as im:
            im.load()
            if im.format != "PPM" or im.mode not in ("L", "RGB"):
                raise DataError(f"{path}: unsupported netpbm variant (mode {im.mode}); maxval must be 255")
            return ImageBuf(np.array(im, dtype=np.uint8))
    except OSError as e:
        logger.error(f"[Imaging] Failed to read {path}: {e}")
        raise DataError(f"cannot read image {path}: {e}") from e


def _write_netpbm(path: str, pixels: np.ndarray) -> None:
    im = Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8))
    with atomic_write(path, "wb") as f:
        im.save(f, format="PPM")


def write_pgm(path: str, gray: np.ndarray) -> None:
    gray = np.asarray(gray)
    if gray.ndim == 3 and gray.shape[2] == 1:
        gray = gray[:, :, 0]
    if gray.ndim != 2:
        raise ValueError(f"PGM needs a (H, W) array, got {gray.shape}")
    _write_netpbm(path, gray)


def write_ppm(path: str, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"PPM needs a (H, W, 3) array, got {rgb.shape}")
    _write_netpbm(path, rgb)


def write_image(path: str, img: ImageBuf) -> None:
    if img.channels == 1:
        write_pgm(path, img.data)
    else:
        write_ppm(path, img.data)


def unit_to_u8(values: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and scale by 255 (rounded)."""
    return np.rint(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)
