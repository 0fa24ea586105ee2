"""Low-level image sampling helpers shared by rendering, flow and tracking."""

from __future__ import annotations

import numpy as np


def bilinear_sample(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample img at float positions (xs, ys) with edge clamping.

    Pixel (row i, col j) is treated as the value at coordinates (x=j, y=i).
    xs and ys may have any (matching) shape; the result has that shape.
    """
    h, w = img.shape
    x = np.clip(xs, 0.0, w - 1.0)
    y = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def gather_patches(img: np.ndarray, centers: np.ndarray, radius: int) -> np.ndarray:
    """Extract (2r+1)x(2r+1) windows around float centers, bilinear + clamped.

    centers is (n, 2) as (x, y); returns (n, 2r+1, 2r+1).
    """
    offs = np.arange(-radius, radius + 1, dtype=np.float64)
    ox, oy = np.meshgrid(offs, offs)  # (win, win)
    xs = centers[:, 0][:, None, None] + ox[None, :, :]
    ys = centers[:, 1][:, None, None] + oy[None, :, :]
    return bilinear_sample(img, xs, ys)
