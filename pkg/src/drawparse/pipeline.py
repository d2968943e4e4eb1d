"""End-to-end inference: detect regions, rectify crops, parse, assemble JSON."""

from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Protocol, Union

import numpy as np

from .images import load_image
from .ingest.boxes import OrientedBox
from .ingest.crop import rectify_crop
from .ingest.records import DrawingRecord, resolve_uri
from .schema import (Category, ParseFailure, StructuredAnnotation,
                     annotation_from_json_dict, annotation_to_json_dict)
from .train.detector import DetectorBackend, DetectorError, detect
from .train.pairs import SINGLE_KEY
from .train.trainer import load_parser

logger = logging.getLogger(__name__)


class PatchParser(Protocol):
    def parse(self, image: np.ndarray, expected: Optional[Category] = None
              ) -> tuple[Union[StructuredAnnotation, ParseFailure], str]: ...


@dataclass
class PipelineConfig:
    confidence_threshold: float = 0.25
    pad: int = 4
    fill: int = 255


@dataclass
class ModelBundle:
    strategy: str  # "single" or "per_category"
    parsers: dict[str, PatchParser]  # keyed "all" (single) or category code

    def parser_for(self, category: Category) -> Optional[PatchParser]:
        if self.strategy == "single":
            return self.parsers.get(SINGLE_KEY)
        return self.parsers.get(category.code)


def load_model_bundle(models_dir: Union[str, Path], strategy: str) -> ModelBundle:
    """Load checkpoints from the {models_dir}/{strategy}/{key} layout."""
    root = Path(models_dir) / strategy
    if not root.is_dir():
        raise FileNotFoundError(f"no checkpoints under {root}")
    parsers: dict[str, PatchParser] = {}
    for sub in sorted(root.iterdir()):
        if (sub / "metadata.json").is_file():
            parsers[sub.name] = load_parser(sub)
    if not parsers:
        raise FileNotFoundError(f"no loadable checkpoints under {root}")
    return ModelBundle(strategy=strategy, parsers=parsers)


@dataclass
class RegionResult:
    box: OrientedBox
    annotation: Optional[StructuredAnnotation]
    failure: Optional[ParseFailure]
    raw_tokens: str = ""
    flags: list[str] = field(default_factory=list)

    def __post_init__(self):
        if (self.annotation is None) == (self.failure is None):
            raise ValueError("a region carries exactly one of annotation/failure")

    def to_json_dict(self) -> dict:
        obj: dict = {"box": self.box.to_json_dict()}
        if self.annotation is not None:
            obj["annotation"] = annotation_to_json_dict(self.annotation)
            obj["failure"] = None
        else:
            obj["annotation"] = None
            obj["failure"] = {"reason": self.failure.reason,
                              "detail": self.failure.detail}
        obj["raw_tokens"] = self.raw_tokens
        obj["flags"] = self.flags
        return obj


@dataclass
class DrawingExtraction:
    drawing_id: str
    regions: list[RegionResult]
    pipeline_meta: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {"drawing_id": self.drawing_id,
                "regions": [r.to_json_dict() for r in self.regions],
                "pipeline_meta": self.pipeline_meta}


def extract_drawing(image: np.ndarray, detector: DetectorBackend,
                    bundle: ModelBundle, cfg: PipelineConfig = PipelineConfig(),
                    drawing_id: str = "") -> DrawingExtraction:
    """Detect regions, crop and parse each, and assemble the extraction.

    Regions are ordered by confidence (ties by position). The detector's
    category routes per-category models and is kept for grouping even when the
    single model disagrees; the disagreement is flagged, not resolved.
    Per-region parse problems never abort the drawing.
    """
    boxes = detect(detector, image, cfg.confidence_threshold)
    regions: list[RegionResult] = []
    for box in boxes:
        parser = bundle.parser_for(box.category)
        if parser is None:
            regions.append(RegionResult(
                box=box, annotation=None,
                failure=ParseFailure("model_unavailable", "",
                                     f"no model for {box.category.code}")))
            continue
        crop = rectify_crop(image, box, pad=cfg.pad, fill=cfg.fill)
        expected = box.category if bundle.strategy == "per_category" else None
        result, raw = parser.parse(crop, expected)
        if isinstance(result, StructuredAnnotation):
            flags = []
            if result.category is not box.category:
                flags.append("category_disagreement")
            regions.append(RegionResult(box=box, annotation=result, failure=None,
                                        raw_tokens=raw, flags=flags))
        else:
            regions.append(RegionResult(box=box, annotation=None, failure=result,
                                        raw_tokens=raw))
    meta = {
        "detector": type(detector).__name__,
        "strategy": bundle.strategy,
        "models": sorted(bundle.parsers),
        "confidence_threshold": cfg.confidence_threshold,
        "pad": cfg.pad,
        "fill": cfg.fill,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    return DrawingExtraction(drawing_id=drawing_id, regions=regions,
                             pipeline_meta=meta)


def extraction_to_predictions(obj: Union[dict, DrawingExtraction]
                              ) -> tuple[str, list[tuple[OrientedBox, object]]]:
    """Convert an extraction (object or its JSON dict) into evaluator input."""
    if isinstance(obj, DrawingExtraction):
        obj = obj.to_json_dict()
    preds = []
    for region in obj["regions"]:
        box = OrientedBox.from_json_dict(region["box"])
        if region.get("annotation") is not None:
            preds.append((box, annotation_from_json_dict(region["annotation"])))
        else:
            failure = region.get("failure") or {}
            preds.append((box, ParseFailure(failure.get("reason", "unknown"),
                                            region.get("raw_tokens", ""),
                                            failure.get("detail", ""))))
    return obj["drawing_id"], preds


def _atomic_write_json(obj: dict, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, ensure_ascii=False, indent=2)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def extract_batch(records: list[DrawingRecord], manifest_path: Union[str, Path],
                  detector: DetectorBackend, bundle: ModelBundle,
                  cfg: PipelineConfig, out_dir: Union[str, Path],
                  force: bool = False) -> dict:
    """Extract every drawing to {out_dir}/{drawing_id}.json; returns the summary.

    Existing outputs are skipped unless force, so an interrupted batch resumes
    where it stopped (skipped files still count in the summary). Whole-drawing
    failures are recorded and do not stop the batch.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = {"drawings": 0, "processed": 0, "skipped_existing": 0,
               "regions": 0, "parse_failures": 0,
               "per_category_regions": {c.code: 0 for c in Category},
               "whole_drawing_failures": []}

    def tally(extraction_obj: dict) -> None:
        for region in extraction_obj["regions"]:
            summary["regions"] += 1
            summary["per_category_regions"][region["box"]["category"]] += 1
            if region.get("annotation") is None:
                summary["parse_failures"] += 1

    for record in sorted(records, key=lambda r: r.drawing_id):
        summary["drawings"] += 1
        out_path = out_dir / f"{record.drawing_id}.json"
        if out_path.exists() and not force:
            summary["skipped_existing"] += 1
            tally(json.loads(out_path.read_text(encoding="utf-8")))
            continue
        try:
            image = load_image(resolve_uri(manifest_path, record.image_uri))
            extraction = extract_drawing(image, detector, bundle, cfg,
                                         drawing_id=record.drawing_id)
        except (OSError, ValueError, DetectorError) as err:
            summary["whole_drawing_failures"].append(
                {"drawing_id": record.drawing_id, "error": str(err)})
            logger.error("drawing %s failed: %s", record.drawing_id, err)
            continue
        obj = extraction.to_json_dict()
        _atomic_write_json(obj, out_path)
        summary["processed"] += 1
        tally(obj)

    _atomic_write_json(summary, out_dir / "summary.json")
    return summary
