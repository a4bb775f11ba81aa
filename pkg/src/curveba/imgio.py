"""Image file helpers: 8-bit gray / 24-bit RGB PNG and binary PPM/PGM."""

from __future__ import annotations

import numpy as np
from PIL import Image


def read_image(path) -> np.ndarray:
    """Read an image as uint8, shape (h, w) for gray or (h, w, 3) for RGB."""
    img = Image.open(path)
    if img.mode in ("L", "I;16", "I"):
        arr = np.asarray(img)
        if arr.dtype != np.uint8:
            raise ValueError(f"{path}: expected 8-bit image (use read_depth_pgm for 16-bit)")
        return arr
    return np.asarray(img.convert("RGB"))


def write_image(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        raise ValueError("images are written as uint8")
    Image.fromarray(arr).save(path)


def write_pgm(path, arr: np.ndarray) -> None:
    """Binary P5 export, used for edge-mask debugging (255 = edge)."""
    arr = np.asarray(arr)
    if arr.dtype == bool:
        arr = arr.astype(np.uint8) * 255
    Image.fromarray(arr.astype(np.uint8), mode="L").save(path, format="PPM")


def read_depth_pgm(path, scale: float) -> np.ndarray:
    """Read a 16-bit PGM depth map; raw values are divided by ``scale``.

    Zero raw values mean "no depth" and come back as NaN.
    """
    raw = np.asarray(Image.open(path), dtype=np.float64)
    depth = raw / float(scale)
    depth[raw == 0] = np.nan
    return depth


def to_gray(arr: np.ndarray) -> np.ndarray:
    """Luma (float64) from uint8 gray or RGB."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        return arr
    return 0.299 * arr[..., 0] + 0.587 * arr[..., 1] + 0.114 * arr[..., 2]


def bilinear_sample(img: np.ndarray, sx: np.ndarray, sy: np.ndarray, fill: float = np.nan) -> np.ndarray:
    """Bilinear interpolation of ``img`` at continuous (sx, sy); out of bounds -> fill."""
    sx = np.asarray(sx, dtype=float)
    sy = np.asarray(sy, dtype=float)
    h, w = img.shape[:2]
    valid = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
    x = np.clip(sx, 0, w - 1)
    y = np.clip(sy, 0, h - 1)
    x0 = np.clip(np.floor(x).astype(int), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(y).astype(int), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
        valid = valid[..., None]
    out = (
        img[y0, x0] * (1 - fx) * (1 - fy)
        + img[y0, x1] * fx * (1 - fy)
        + img[y1, x0] * (1 - fx) * fy
        + img[y1, x1] * fx * fy
    )
    return np.where(valid, out, fill)
