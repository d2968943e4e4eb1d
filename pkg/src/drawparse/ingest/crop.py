"""Rectified crops: inverse-rotate an oriented box region into an upright patch."""

from __future__ import annotations

import math

import numpy as np

from .boxes import GeometryError, OrientedBox

_HALF_PI = math.pi / 2.0


def _gather(image: np.ndarray, rows: np.ndarray, cols: np.ndarray, fill: int) -> np.ndarray:
    """Index image at integer rows x cols; positions outside get the fill value."""
    h, w = image.shape[:2]
    rr = np.clip(rows, 0, h - 1)
    cc = np.clip(cols, 0, w - 1)
    out = image[rr[:, None], cc[None, :]].copy()
    outside = ((rows < 0) | (rows >= h))[:, None] | ((cols < 0) | (cols >= w))[None, :]
    out[outside] = fill
    return out


def _bilinear(image: np.ndarray, xs: np.ndarray, ys: np.ndarray, fill: int) -> np.ndarray:
    h, w = image.shape[:2]
    img = image.astype(np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = (xs - x0)[:, :, None]
    fy = (ys - y0)[:, :, None]

    def sample(yi, xi):
        inside = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        vals = img[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
        return np.where(inside[:, :, None], vals, float(fill))

    v00 = sample(y0, x0)
    v01 = sample(y0, x0 + 1)
    v10 = sample(y0 + 1, x0)
    v11 = sample(y0 + 1, x0 + 1)
    top = v00 * (1.0 - fx) + v01 * fx
    bot = v10 * (1.0 - fx) + v11 * fx
    out = top * (1.0 - fy) + bot * fy
    out = np.rint(np.clip(out, 0, 255)).astype(np.uint8)
    if image.ndim == 2:
        out = out[:, :, 0]
    return out


def rectify_crop(image: np.ndarray, box: OrientedBox, pad: int = 4,
                 fill: int = 255) -> np.ndarray:
    """Extract the box region as an upright patch of size (ceil(w)+2pad, ceil(h)+2pad).

    Output pixel (u, v) samples the source at
    center + (u - (W-1)/2) * e_w + (v - (H-1)/2) * e_h, bilinearly interpolated,
    with e_w = (cos theta, sin theta). theta of exactly 0 or -pi/2 with a
    pixel-aligned grid takes a pure index-permutation path, so those crops are
    bit-exact. Samples outside the source blend toward the fill value.
    """
    if box.w <= 0 or box.h <= 0:
        raise GeometryError("rectify_crop requires a box with positive area")
    if image.dtype != np.uint8:
        raise TypeError(f"expected uint8 image, got {image.dtype}")
    w_out = int(math.ceil(box.w)) + 2 * pad
    h_out = int(math.ceil(box.h)) + 2 * pad
    t = box.theta

    if t == 0.0:
        x0 = box.cx - (w_out - 1) / 2.0
        y0 = box.cy - (h_out - 1) / 2.0
        if x0.is_integer() and y0.is_integer():
            rows = int(y0) + np.arange(h_out)
            cols = int(x0) + np.arange(w_out)
            return _gather(image, rows, cols, fill)
    elif t == -_HALF_PI:
        # e_w = (0, -1), e_h = (1, 0): output columns walk up source rows.
        xs0 = box.cx - (h_out - 1) / 2.0
        ys_top = box.cy + (w_out - 1) / 2.0
        if xs0.is_integer() and ys_top.is_integer():
            rows = int(ys_top) - np.arange(w_out)
            cols = int(xs0) + np.arange(h_out)
            return np.swapaxes(_gather(image, rows, cols, fill), 0, 1).copy()

    du = np.arange(w_out, dtype=np.float64) - (w_out - 1) / 2.0
    dv = np.arange(h_out, dtype=np.float64) - (h_out - 1) / 2.0
    c, s = math.cos(t), math.sin(t)
    xs = box.cx + du[None, :] * c - dv[:, None] * s
    ys = box.cy + du[None, :] * s + dv[:, None] * c
    return _bilinear(image, xs, ys, fill)
