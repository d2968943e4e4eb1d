"""Seeded photometric/rotation augmentation and (1 + k)-fold dataset expansion.

The transform chain is applied in a fixed order: sharpness, contrast,
quarter-turn rotation, grayscale, inversion. Every random draw comes from a
generator derived from (seed, patch_id, variant index), so expansion is
reproducible and independent of record order or scheduling.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .images import load_image, save_image, to_grayscale
from .ingest.records import (PatchRecord, make_patch_id, read_patch_manifest,
                             resolve_uri, write_patch_manifest)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AugmentConfig:
    k_variants: int = 5
    p_contrast: float = 0.5
    p_gray: float = 0.5
    p_invert: float = 0.5
    contrast_range: tuple[float, float] = (0.6, 1.6)
    seed: int = 0

    def __post_init__(self):
        for name in ("p_contrast", "p_gray", "p_invert"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0,1], got {p}")
        lo, hi = self.contrast_range
        if not (0.0 < lo <= hi):
            raise ValueError(f"bad contrast_range: {self.contrast_range}")
        if self.k_variants < 0:
            raise ValueError("k_variants must be >= 0")


_GAUSS_3X3 = None


def _gauss_kernel() -> np.ndarray:
    global _GAUSS_3X3
    if _GAUSS_3X3 is None:
        xs = np.array([-1.0, 0.0, 1.0])
        g = np.exp(-xs ** 2 / 2.0)  # sigma = 1.0
        g /= g.sum()
        _GAUSS_3X3 = np.outer(g, g)
    return _GAUSS_3X3


def _convolve3x3(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """3x3 convolution with replicated edges, float64 result."""
    arr = img.astype(np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    padded = np.pad(arr, ((1, 1), (1, 1), (0, 0)), mode="edge")
    out = np.zeros_like(arr)
    for dy in range(3):
        for dx in range(3):
            out += kernel[dy, dx] * padded[dy:dy + arr.shape[0], dx:dx + arr.shape[1]]
    if img.ndim == 2:
        out = out[:, :, 0]
    return out


def _to_u8(arr: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(arr, 0, 255)).astype(np.uint8)


def gaussian_blur3(img: np.ndarray) -> np.ndarray:
    return _to_u8(_convolve3x3(img, _gauss_kernel()))


def unsharp_mask(img: np.ndarray, amount: float = 1.0) -> np.ndarray:
    blurred = _convolve3x3(img, _gauss_kernel())
    return _to_u8(img.astype(np.float64) + amount * (img.astype(np.float64) - blurred))


def adjust_contrast(img: np.ndarray, factor: float) -> np.ndarray:
    mean = img.astype(np.float64).mean()
    return _to_u8(mean + factor * (img.astype(np.float64) - mean))


def rotate90(img: np.ndarray, k: int) -> np.ndarray:
    """Lossless quarter-turn rotation; k=0 returns the input unchanged."""
    if k % 4 == 0:
        return img
    return np.ascontiguousarray(np.rot90(img, k % 4))


def invert(img: np.ndarray) -> np.ndarray:
    return (255 - img.astype(np.int16)).astype(np.uint8)


def gray_replicate(img: np.ndarray) -> np.ndarray:
    """Luma conversion that keeps the channel count of the input."""
    if img.ndim == 2:
        return img
    luma = to_grayscale(img)
    return np.repeat(luma[:, :, None], img.shape[2], axis=2)


def augment_patch(image: np.ndarray, rng: np.random.Generator,
                  cfg: AugmentConfig = AugmentConfig()) -> np.ndarray:
    """Apply the five-stage chain with draws taken from rng in a fixed order.

    A draw sequence of (original, no contrast, k=0, no gray, no invert)
    returns the input array unchanged, byte for byte.
    """
    if image.size == 0:
        raise ValueError("cannot augment an empty image")
    out = image

    choice = rng.integers(0, 3)  # 0 blur, 1 original, 2 sharpen
    if choice == 0:
        out = gaussian_blur3(out)
    elif choice == 2:
        out = unsharp_mask(out, amount=1.0)

    if rng.random() < cfg.p_contrast:
        lo, hi = cfg.contrast_range
        out = adjust_contrast(out, rng.uniform(lo, hi))

    out = rotate90(out, int(rng.integers(0, 4)))

    if rng.random() < cfg.p_gray:
        out = gray_replicate(out)

    if rng.random() < cfg.p_invert:
        out = invert(out)
    return out


def variant_rng(seed: int, patch_id: str, variant: int) -> np.random.Generator:
    """Generator keyed by (seed, patch_id, variant), stable across platforms."""
    digest = hashlib.sha256(patch_id.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, *words, variant]))


def expand_dataset(manifest_path: Union[str, Path], cfg: AugmentConfig,
                   out_dir: Union[str, Path]) -> Path:
    """Write each patch plus k_variants augmented copies under out_dir.

    Ground truth is carried to every variant untouched: none of the five
    transforms changes what the callout says. Output is (1 + k) * N records.
    """
    manifest_path = Path(manifest_path)
    out_dir = Path(out_dir)
    image_dir = out_dir / "patches"
    image_dir.mkdir(parents=True, exist_ok=True)
    records = read_patch_manifest(manifest_path)
    for rec in records:
        if rec.ground_truth is None:
            raise ValueError(f"record {rec.patch_id} has no ground_truth; "
                             "expansion requires labeled patches")

    out_records: list[PatchRecord] = []
    for rec in records:
        image = load_image(resolve_uri(manifest_path, rec.image_uri))
        rel = f"patches/{rec.patch_id}.png"
        save_image(image, out_dir / rel)
        out_records.append(PatchRecord(
            patch_id=rec.patch_id, image_uri=rel, category=rec.category,
            source=rec.source, ground_truth=rec.ground_truth.copy(),
            augmentation_tag=rec.augmentation_tag))
        drawing_id, box_index = rec.source
        for variant in range(1, cfg.k_variants + 1):
            rng = variant_rng(cfg.seed, rec.patch_id, variant)
            aug = augment_patch(image, rng, cfg)
            tag = f"aug{variant}"
            patch_id = make_patch_id(drawing_id, box_index, tag)
            rel = f"patches/{patch_id}.png"
            save_image(aug, out_dir / rel)
            out_records.append(PatchRecord(
                patch_id=patch_id, image_uri=rel, category=rec.category,
                source=rec.source, ground_truth=rec.ground_truth.copy(),
                augmentation_tag=tag))

    ids = [r.patch_id for r in out_records]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate patch ids after expansion; "
                         "expand_dataset expects unexpanded input")
    out_path = out_dir / "patches.jsonl"
    write_patch_manifest(out_records, out_path)
    return out_path
