"""Patch extraction: one rectified crop per (drawing, box), plus a JSONL manifest."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from ..images import load_image, save_image
from .crop import rectify_crop
from .records import (DrawingRecord, PatchRecord, make_patch_id,
                      write_patch_manifest)

logger = logging.getLogger(__name__)


@dataclass
class ExtractResult:
    patches: list[PatchRecord] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)
    manifest_path: Optional[Path] = None


def extract_patches(records: list[DrawingRecord], out_dir: Union[str, Path],
                    pad: int = 4, fill: int = 255,
                    images_root: Optional[Union[str, Path]] = None) -> ExtractResult:
    """Crop every box of every drawing into out_dir/patches and write patches.jsonl.

    Output ordering is fixed by (drawing_id, box_index), so reruns over the
    same inputs produce byte-identical manifests. A drawing whose image cannot
    be read becomes a failure entry; the rest of the batch still completes.
    """
    out_dir = Path(out_dir)
    patch_dir = out_dir / "patches"
    patch_dir.mkdir(parents=True, exist_ok=True)
    result = ExtractResult()

    for record in sorted(records, key=lambda r: r.drawing_id):
        uri = Path(record.image_uri)
        if not uri.is_absolute() and images_root is not None:
            uri = Path(images_root) / uri
        try:
            image = load_image(uri)
        except (OSError, ValueError) as err:
            result.failures.append({"drawing_id": record.drawing_id, "error": str(err)})
            logger.warning("skipping drawing %s: %s", record.drawing_id, err)
            continue
        for index, box in enumerate(record.boxes):
            patch = rectify_crop(image, box, pad=pad, fill=fill)
            patch_id = make_patch_id(record.drawing_id, index, "orig")
            rel_uri = f"patches/{patch_id}.png"
            save_image(patch, out_dir / rel_uri)
            result.patches.append(PatchRecord(
                patch_id=patch_id,
                image_uri=rel_uri,
                category=box.category,
                source=(record.drawing_id, index),
                ground_truth=record.annotations.get(index),
                augmentation_tag="orig",
            ))

    result.manifest_path = out_dir / "patches.jsonl"
    write_patch_manifest(result.patches, result.manifest_path)
    return result
