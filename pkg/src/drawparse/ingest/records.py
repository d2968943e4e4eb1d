"""Drawing and patch records plus the JSONL manifest format they travel in.

Manifests are JSONL, one record per line, with image paths relative to the
manifest's directory so a dataset directory can be moved wholesale.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from ..schema import (Category, StructuredAnnotation, annotation_from_json_dict,
                      annotation_to_json_dict)
from .boxes import OrientedBox


class IngestError(Exception):
    pass


@dataclass
class DrawingRecord:
    drawing_id: str
    image_uri: str
    image_size: tuple[int, int]  # (width, height)
    boxes: list[OrientedBox] = field(default_factory=list)
    annotations: dict[int, StructuredAnnotation] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        obj = {
            "drawing_id": self.drawing_id,
            "image_uri": self.image_uri,
            "image_size": [int(self.image_size[0]), int(self.image_size[1])],
            "boxes": [b.to_json_dict() for b in self.boxes],
        }
        if self.annotations:
            obj["annotations"] = {
                str(i): annotation_to_json_dict(a) for i, a in sorted(self.annotations.items())
            }
        return obj

    @classmethod
    def from_json_dict(cls, obj: dict) -> "DrawingRecord":
        return cls(
            drawing_id=obj["drawing_id"],
            image_uri=obj["image_uri"],
            image_size=(int(obj["image_size"][0]), int(obj["image_size"][1])),
            boxes=[OrientedBox.from_json_dict(b) for b in obj.get("boxes", [])],
            annotations={int(i): annotation_from_json_dict(a)
                         for i, a in obj.get("annotations", {}).items()},
        )


def make_patch_id(drawing_id: str, box_index: int, augmentation_tag: str) -> str:
    return f"{drawing_id}_{box_index}_{augmentation_tag}"


@dataclass
class PatchRecord:
    patch_id: str
    image_uri: str
    category: Category
    source: tuple[str, int]  # (drawing_id, box_index)
    ground_truth: Optional[StructuredAnnotation] = None
    augmentation_tag: str = "orig"

    def __post_init__(self):
        expected = make_patch_id(self.source[0], self.source[1], self.augmentation_tag)
        if self.patch_id != expected:
            raise IngestError(
                f"patch_id {self.patch_id!r} does not match source/tag ({expected!r})")

    def to_json_dict(self) -> dict:
        obj = {
            "patch_id": self.patch_id,
            "image_uri": self.image_uri,
            "category": self.category.code,
            "source": {"drawing_id": self.source[0], "box_index": self.source[1]},
            "augmentation_tag": self.augmentation_tag,
        }
        if self.ground_truth is not None:
            obj["ground_truth"] = annotation_to_json_dict(self.ground_truth)
        return obj

    @classmethod
    def from_json_dict(cls, obj: dict) -> "PatchRecord":
        gt = obj.get("ground_truth")
        return cls(
            patch_id=obj["patch_id"],
            image_uri=obj["image_uri"],
            category=Category.from_code(obj["category"]),
            source=(obj["source"]["drawing_id"], int(obj["source"]["box_index"])),
            ground_truth=annotation_from_json_dict(gt) if gt is not None else None,
            augmentation_tag=obj.get("augmentation_tag", "orig"),
        )


def _write_jsonl(objs, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for obj in objs:
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def _read_jsonl(path: Union[str, Path]):
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as err:
                raise IngestError(f"{path}:{line_no}: bad JSON ({err})") from err


def write_patch_manifest(records: list[PatchRecord], path: Union[str, Path]) -> None:
    _write_jsonl((r.to_json_dict() for r in records), path)


def read_patch_manifest(path: Union[str, Path]) -> list[PatchRecord]:
    return [PatchRecord.from_json_dict(obj) for obj in _read_jsonl(path)]


def write_drawing_manifest(records: list[DrawingRecord], path: Union[str, Path]) -> None:
    _write_jsonl((r.to_json_dict() for r in records), path)


def read_drawing_manifest(path: Union[str, Path]) -> list[DrawingRecord]:
    return [DrawingRecord.from_json_dict(obj) for obj in _read_jsonl(path)]


def resolve_uri(manifest_path: Union[str, Path], uri: str) -> Path:
    """Resolve a manifest-relative image path; absolute paths pass through."""
    p = Path(uri)
    if p.is_absolute():
        return p
    return Path(manifest_path).parent / p
