"""Lossless raster IO used throughout the pipeline. Images are uint8 arrays."""

from __future__ import annotations

from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image


def load_image(path: Union[str, Path]) -> np.ndarray:
    """Read an image as uint8, grayscale (H, W) or RGB (H, W, 3)."""
    with Image.open(path) as img:
        if img.mode in ("L", "1", "I;16"):
            return np.asarray(img.convert("L"), dtype=np.uint8)
        if img.mode == "RGB":
            return np.asarray(img, dtype=np.uint8)
        if img.mode in ("RGBA", "P", "LA", "CMYK", "I", "F"):
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
        return np.asarray(img.convert("L"), dtype=np.uint8)


def save_image(arr: np.ndarray, path: Union[str, Path]) -> None:
    """Write uint8 array as PNG (lossless)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if arr.dtype != np.uint8:
        raise TypeError(f"expected uint8 image, got {arr.dtype}")
    Image.fromarray(arr).save(path, format="PNG")


def to_grayscale(arr: np.ndarray) -> np.ndarray:
    """ITU-R BT.601 luma, rounded; grayscale input passes through unchanged."""
    if arr.ndim == 2:
        return arr
    luma = (arr[..., 0] * 0.299 + arr[..., 1] * 0.587 + arr[..., 2] * 0.114)
    return np.rint(luma).astype(np.uint8)
