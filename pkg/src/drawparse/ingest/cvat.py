"""Parser for CVAT "images" XML exports with rotated-box shapes."""

from __future__ import annotations

import json
import logging
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from ..schema import (Category, annotation_from_json_dict, validate)
from .boxes import OrientedBox
from .records import DrawingRecord, IngestError

logger = logging.getLogger(__name__)

# Labels seen in annotation exports, mapped to category codes. Lookup is
# case-insensitive with spaces, dashes and ampersands folded.
DEFAULT_LABEL_ALIASES = {
    "gdt": "gdt",
    "gd_t": "gdt",
    "gdts": "gdt",
    "geometric_tolerancing": "gdt",
    "general_tolerances": "general_tolerances",
    "general_tolerance": "general_tolerances",
    "measures": "measures",
    "measure": "measures",
    "dimensions": "measures",
    "materials": "materials",
    "material": "materials",
    "notes": "notes",
    "note": "notes",
    "radii": "radii",
    "radius": "radii",
    "surface_roughness": "surface_roughness",
    "surface_finish": "surface_roughness",
    "threads": "threads",
    "thread": "threads",
    "title_block": "title_block",
    "title_blocks": "title_block",
}


def _fold_label(label: str) -> str:
    out = label.strip().lower()
    for ch in (" ", "-", "&", "/"):
        out = out.replace(ch, "_")
    while "__" in out:
        out = out.replace("__", "_")
    return out.strip("_")


@dataclass
class CvatParseResult:
    records: list[DrawingRecord] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def parse_cvat(xml_path: Union[str, Path],
               label_map: Optional[dict[str, str]] = None,
               strict: bool = True) -> CvatParseResult:
    """Turn a CVAT images export into DrawingRecords.

    Each <box> becomes an OrientedBox: center from the corner attributes,
    rotation (degrees about the center) normalized into the canonical theta
    range, confidence 1.0. An optional "ground_truth" attribute holding
    canonical annotation JSON populates the record's annotations map.

    strict mode raises on unknown labels, off-image centers and invalid
    ground truth; lenient mode skips the offender and records a warning.
    """
    aliases = dict(DEFAULT_LABEL_ALIASES)
    if label_map:
        aliases.update({_fold_label(k): v for k, v in label_map.items()})

    try:
        tree = ET.parse(str(xml_path))
    except ET.ParseError as err:
        line, col = err.position
        raise IngestError(f"{xml_path}: malformed XML at line {line}, column {col}") from err

    result = CvatParseResult()
    for image_el in tree.getroot().iter("image"):
        name = image_el.get("name")
        if name is None:
            raise IngestError(f"{xml_path}: <image> element without a name attribute")
        try:
            width = int(float(image_el.get("width")))
            height = int(float(image_el.get("height")))
        except (TypeError, ValueError):
            raise IngestError(f"{xml_path}: image {name!r} lacks width/height") from None
        record = DrawingRecord(drawing_id=Path(name).stem, image_uri=name,
                               image_size=(width, height))
        for box_el in image_el.iter("box"):
            label = box_el.get("label", "")
            code = aliases.get(_fold_label(label))
            if code is None:
                msg = f"image {name!r}: unknown label {label!r}"
                if strict:
                    raise IngestError(f"{xml_path}: {msg}")
                result.warnings.append(msg)
                logger.warning("%s", msg)
                continue
            xtl, ytl = float(box_el.get("xtl")), float(box_el.get("ytl"))
            xbr, ybr = float(box_el.get("xbr")), float(box_el.get("ybr"))
            rotation = float(box_el.get("rotation", 0.0))
            box = OrientedBox(cx=(xtl + xbr) / 2.0, cy=(ytl + ybr) / 2.0,
                              w=xbr - xtl, h=ybr - ytl,
                              theta=math.radians(rotation),
                              category=Category.from_code(code))
            if not (0 <= box.cx < width and 0 <= box.cy < height):
                msg = f"image {name!r}: box center ({box.cx}, {box.cy}) outside image"
                if strict:
                    raise IngestError(f"{xml_path}: {msg}")
                result.warnings.append(msg)
                logger.warning("%s", msg)
                continue
            try:
                gt = _read_ground_truth(box_el)
            except IngestError as err:
                msg = f"image {name!r}: {err}"
                if strict:
                    raise IngestError(f"{xml_path}: {msg}") from err
                result.warnings.append(msg)
                logger.warning("%s", msg)
                gt = None
            index = len(record.boxes)
            record.boxes.append(box)
            if gt is not None:
                report = validate(gt, "strict")
                if not report.valid:
                    msg = (f"image {name!r} box {index}: invalid ground truth: "
                           + "; ".join(report.violations))
                    if strict:
                        raise IngestError(f"{xml_path}: {msg}")
                    result.warnings.append(msg)
                    logger.warning("%s", msg)
                else:
                    record.annotations[index] = gt
        result.records.append(record)
    return result


def _read_ground_truth(box_el):
    for attr in box_el.iter("attribute"):
        if attr.get("name") == "ground_truth" and attr.text and attr.text.strip():
            try:
                return annotation_from_json_dict(json.loads(attr.text))
            except (json.JSONDecodeError, ValueError) as err:
                raise IngestError(f"bad ground_truth attribute: {err}") from err
    return None
