"""Leakage-safe train/val/test splitting of patch manifests."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..schema import Category
from .records import PatchRecord

logger = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "val", "test")


@dataclass
class SplitResult:
    train: list[PatchRecord] = field(default_factory=list)
    val: list[PatchRecord] = field(default_factory=list)
    test: list[PatchRecord] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def __getitem__(self, name: str) -> list[PatchRecord]:
        return {"train": self.train, "val": self.val, "test": self.test}[name]


def _allocate(n: int, ratios) -> list[int]:
    """Largest-remainder apportionment of n items across the ratios."""
    raw = [n * r for r in ratios]
    counts = [int(x) for x in raw]
    short = n - sum(counts)
    order = sorted(range(len(ratios)), key=lambda i: raw[i] - counts[i], reverse=True)
    for i in order[:short]:
        counts[i] += 1
    return counts


def split_manifest(records: list[PatchRecord], ratios: tuple[float, float, float],
                   seed: int) -> SplitResult:
    """Split patches into train/val/test, stratified per category.

    The grouping key is drawing_id: all patches from one drawing land in the
    same split, so near-duplicate crops of a drawing never leak across splits.
    Drawings are handed out category by category in canonical order; a
    multi-category drawing is allocated on its first category and simply
    counts as taken afterwards. A category with fewer drawings than nonzero
    splits goes entirely to train, with a warning.
    """
    if len(ratios) != 3:
        raise ValueError("ratios must be (train, val, test)")
    if any(r < 0 for r in ratios):
        raise ValueError(f"ratios must be non-negative: {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1: {ratios}")

    by_drawing: dict[str, set[Category]] = {}
    for rec in records:
        by_drawing.setdefault(rec.source[0], set()).add(rec.category)

    rng = np.random.default_rng(seed)
    n_splits = sum(1 for r in ratios if r > 0)
    assignment: dict[str, int] = {}
    result = SplitResult()

    for category in Category:
        pool = sorted(d for d, cats in by_drawing.items()
                      if category in cats and d not in assignment)
        if not pool:
            continue
        if len(pool) < n_splits:
            msg = (f"category {category.code}: only {len(pool)} unassigned drawing(s) "
                   f"for {n_splits} splits; placing in train")
            result.warnings.append(msg)
            logger.warning("%s", msg)
            for d in pool:
                assignment[d] = 0
            continue
        order = [pool[i] for i in rng.permutation(len(pool))]
        counts = _allocate(len(order), ratios)
        cursor = 0
        for split_idx, count in enumerate(counts):
            for d in order[cursor:cursor + count]:
                assignment[d] = split_idx
            cursor += count

    buckets = (result.train, result.val, result.test)
    for rec in records:
        buckets[assignment[rec.source[0]]].append(rec)
    return result
