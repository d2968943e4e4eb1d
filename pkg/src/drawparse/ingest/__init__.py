from .boxes import GeometryError, OrientedBox, box_from_corners, normalize_theta, rotated_iou
from .crop import rectify_crop
from .cvat import DEFAULT_LABEL_ALIASES, CvatParseResult, parse_cvat
from .patches import ExtractResult, extract_patches
from .records import (DrawingRecord, IngestError, PatchRecord, make_patch_id,
                      read_drawing_manifest, read_patch_manifest, resolve_uri,
                      write_drawing_manifest, write_patch_manifest)
from .split import SplitResult, split_manifest

__all__ = [
    "GeometryError", "OrientedBox", "box_from_corners", "normalize_theta", "rotated_iou",
    "rectify_crop",
    "DEFAULT_LABEL_ALIASES", "CvatParseResult", "parse_cvat",
    "ExtractResult", "extract_patches",
    "DrawingRecord", "IngestError", "PatchRecord", "make_patch_id",
    "read_drawing_manifest", "read_patch_manifest", "resolve_uri",
    "write_drawing_manifest", "write_patch_manifest",
    "SplitResult", "split_manifest",
]
