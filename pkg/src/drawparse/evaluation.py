"""Field-level scoring: precision, recall, F1 and hallucination rate.

Predictions and ground truth are flattened to multisets of (path, normalized
value) pairs and matched exactly. A matched pair is a true positive, an
unmatched predicted pair a false positive, an unmatched ground-truth pair a
false negative. Hallucination is the false-positive share of everything the
model produced: fp / (tp + fp), the exact complement of precision.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from .ingest.boxes import OrientedBox, rotated_iou
from .ingest.records import DrawingRecord, PatchRecord
from .schema import Category, ParseFailure, StructuredAnnotation, flatten

logger = logging.getLogger(__name__)


class EvalError(Exception):
    pass


@dataclass
class FieldMatch:
    tp: int
    fp: int
    fn: int
    matched: list[tuple[str, str]] = field(default_factory=list)
    spurious: list[tuple[str, str]] = field(default_factory=list)
    missed: list[tuple[str, str]] = field(default_factory=list)
    category_mismatch: bool = False


def _pairs(counter: Counter) -> list[tuple[str, str]]:
    out = []
    for fp_, n in counter.items():
        out.extend([(fp_.dotted(), fp_.value)] * n)
    return sorted(out)


def match_fields(pred: Union[StructuredAnnotation, ParseFailure, None],
                 gt: StructuredAnnotation) -> FieldMatch:
    """Score one prediction against one ground-truth annotation.

    A parse failure (or missing prediction) contributes nothing: zero TP and
    FP, every ground-truth field an FN. A category mismatch voids all matches:
    every predicted field is an FP and every ground-truth field an FN.
    """
    gt_flat = flatten(gt)
    if not isinstance(pred, StructuredAnnotation):
        return FieldMatch(tp=0, fp=0, fn=sum(gt_flat.values()),
                          missed=_pairs(gt_flat))
    pred_flat = flatten(pred)
    if pred.category is not gt.category:
        return FieldMatch(tp=0, fp=sum(pred_flat.values()), fn=sum(gt_flat.values()),
                          spurious=_pairs(pred_flat), missed=_pairs(gt_flat),
                          category_mismatch=True)
    common = pred_flat & gt_flat
    spurious = pred_flat - gt_flat
    missed = gt_flat - pred_flat
    return FieldMatch(tp=sum(common.values()), fp=sum(spurious.values()),
                      fn=sum(missed.values()), matched=_pairs(common),
                      spurious=_pairs(spurious), missed=_pairs(missed))


@dataclass
class RegionPairing:
    pairs: list[tuple[int, int, float]]  # (pred index, gt index, iou)
    unmatched_pred: list[int]
    unmatched_gt: list[int]


def match_regions(pred_boxes: list[OrientedBox], gt_boxes: list[OrientedBox],
                  iou_threshold: float = 0.5) -> RegionPairing:
    """Greedy one-to-one pairing of same-category regions by descending IoU."""
    if not 0.0 < iou_threshold <= 1.0:
        raise EvalError(f"iou_threshold must be in (0,1], got {iou_threshold}")
    candidates = []
    for pi, pb in enumerate(pred_boxes):
        for gi, gb in enumerate(gt_boxes):
            if pb.category is not gb.category:
                continue
            iou = rotated_iou(pb, gb)
            if iou >= iou_threshold:
                candidates.append((iou, pi, gi))
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    used_pred: set[int] = set()
    used_gt: set[int] = set()
    pairs = []
    for iou, pi, gi in candidates:
        if pi in used_pred or gi in used_gt:
            continue
        used_pred.add(pi)
        used_gt.add(gi)
        pairs.append((pi, gi, iou))
    return RegionPairing(
        pairs=pairs,
        unmatched_pred=[i for i in range(len(pred_boxes)) if i not in used_pred],
        unmatched_gt=[i for i in range(len(gt_boxes)) if i not in used_gt],
    )


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def add(self, other: "FieldMatch | Counts") -> None:
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn


@dataclass
class MetricRow:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    hallucination: float


def _metric_row(c: Counts) -> MetricRow:
    if c.tp < 0 or c.fp < 0 or c.fn < 0:
        raise EvalError(f"negative counts: {c}")
    produced = c.tp + c.fp
    if produced > 0:
        precision = c.tp / produced
        hallucination = c.fp / produced
    else:
        # Nothing predicted: vacuous precision when nothing was expected either,
        # and nothing hallucinated in any case.
        precision = 1.0 if c.fn == 0 else 0.0
        hallucination = 0.0
    expected = c.tp + c.fn
    recall = c.tp / expected if expected > 0 else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return MetricRow(c.tp, c.fp, c.fn, precision, recall, f1, hallucination)


@dataclass
class EvalReport:
    per_category: dict[str, MetricRow]
    aggregate: MetricRow
    metadata: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        def row(r: MetricRow) -> dict:
            return {"tp": r.tp, "fp": r.fp, "fn": r.fn,
                    "precision": r.precision, "recall": r.recall,
                    "f1": r.f1, "hallucination": r.hallucination}
        return {"metadata": self.metadata,
                "per_category": {c: row(r) for c, r in self.per_category.items()},
                "aggregate": row(self.aggregate)}

    def format_table(self) -> str:
        header = (f"{'Category':<20} {'TP':>6} {'FP':>6} {'FN':>6} "
                  f"{'Precision':>10} {'Recall':>8} {'F1':>8} {'Halluc.':>8}")
        lines = [header, "-" * len(header)]
        rows = list(self.per_category.items()) + [("micro_avg", self.aggregate)]
        for name, r in rows:
            lines.append(f"{name:<20} {r.tp:>6} {r.fp:>6} {r.fn:>6} "
                         f"{r.precision:>10.4f} {r.recall:>8.4f} {r.f1:>8.4f} "
                         f"{r.hallucination:>8.4f}")
        return "\n".join(lines)


def compute_metrics(counts: dict[Category, Counts],
                    metadata: Optional[dict] = None) -> EvalReport:
    """Per-category rows plus a micro-averaged aggregate over raw counts."""
    per_category = {}
    total = Counts()
    for category in Category:
        c = counts.get(category, Counts())
        per_category[category.code] = _metric_row(c)
        total.add(c)
    return EvalReport(per_category=per_category, aggregate=_metric_row(total),
                      metadata=metadata or {})


# ---------------------------------------------------------------------------
# Corpus-level evaluation
# ---------------------------------------------------------------------------

Prediction = Union[StructuredAnnotation, ParseFailure, None]


def evaluate_patches(predictions: dict[str, Prediction],
                     gt_records: list[PatchRecord],
                     metadata: Optional[dict] = None
                     ) -> tuple[EvalReport, list[dict]]:
    """Pair predictions with ground truth by patch_id and score fields.

    A ground-truth patch without a prediction counts like a parse failure
    (all fields FN). A prediction whose patch_id has no ground truth counts
    all its fields as FP under its own category.
    """
    counts: dict[Category, Counts] = {c: Counts() for c in Category}
    details: list[dict] = []
    gt_ids = set()
    for rec in gt_records:
        if rec.ground_truth is None:
            raise EvalError(f"ground-truth record {rec.patch_id} has no annotation")
        gt_ids.add(rec.patch_id)
        pred = predictions.get(rec.patch_id)
        match = match_fields(pred, rec.ground_truth)
        counts[rec.category].add(match)
        details.append(_detail("patch", rec.patch_id, rec.category, pred, match))
    for pid, pred in predictions.items():
        if pid in gt_ids or not isinstance(pred, StructuredAnnotation):
            continue
        flat = flatten(pred)
        fp = sum(flat.values())
        counts[pred.category].add(Counts(fp=fp))
        details.append({"kind": "patch", "id": pid, "category": pred.category.code,
                        "status": "no_ground_truth", "tp": 0, "fp": fp, "fn": 0,
                        "spurious": _pairs(flat)})
    return compute_metrics(counts, metadata), details


def _detail(kind: str, ident: str, category: Category, pred: Prediction,
            match: FieldMatch) -> dict:
    status = "ok"
    if pred is None:
        status = "missing_prediction"
    elif isinstance(pred, ParseFailure):
        status = f"parse_failure:{pred.reason}"
    elif match.category_mismatch:
        status = "category_mismatch"
    return {"kind": kind, "id": ident, "category": category.code, "status": status,
            "tp": match.tp, "fp": match.fp, "fn": match.fn,
            "matched": match.matched, "spurious": match.spurious,
            "missed": match.missed}


def evaluate_end_to_end(pred_drawings: dict[str, list[tuple[OrientedBox, Prediction]]],
                        gt_records: list[DrawingRecord],
                        iou_threshold: float = 0.5,
                        metadata: Optional[dict] = None
                        ) -> tuple[EvalReport, list[dict]]:
    """Score whole-drawing extractions against annotated drawing records.

    Regions are paired per drawing by rotated IoU (same category only); paired
    regions are scored field-by-field, spurious detections contribute all their
    fields as FP, missed ground-truth regions all theirs as FN.
    """
    counts: dict[Category, Counts] = {c: Counts() for c in Category}
    details: list[dict] = []
    seen_ids: set[str] = set()
    for rec in gt_records:
        seen_ids.add(rec.drawing_id)
        gt_regions = [(b, rec.annotations.get(i)) for i, b in enumerate(rec.boxes)]
        for i, (box, ann) in enumerate(gt_regions):
            if ann is None:
                raise EvalError(f"drawing {rec.drawing_id} box {i} has no annotation")
        preds = pred_drawings.get(rec.drawing_id, [])
        pairing = match_regions([b for b, _ in preds], [b for b, _ in gt_regions],
                                iou_threshold)
        for pi, gi, iou in pairing.pairs:
            box, ann = gt_regions[gi]
            match = match_fields(preds[pi][1], ann)
            counts[box.category].add(match)
            d = _detail("region", f"{rec.drawing_id}#{gi}", box.category,
                        preds[pi][1], match)
            d["iou"] = iou
            details.append(d)
        for gi in pairing.unmatched_gt:
            box, ann = gt_regions[gi]
            match = match_fields(None, ann)
            counts[box.category].add(match)
            d = _detail("region", f"{rec.drawing_id}#{gi}", box.category, None, match)
            d["status"] = "missed_region"
            details.append(d)
        for pi in pairing.unmatched_pred:
            box, pred = preds[pi]
            fp = sum(flatten(pred).values()) if isinstance(pred, StructuredAnnotation) else 0
            counts[box.category].add(Counts(fp=fp))
            details.append({"kind": "region", "id": f"{rec.drawing_id}#pred{pi}",
                            "category": box.category.code, "status": "spurious_region",
                            "tp": 0, "fp": fp, "fn": 0})
    for drawing_id, preds in pred_drawings.items():
        if drawing_id in seen_ids:
            continue
        for pi, (box, pred) in enumerate(preds):
            fp = sum(flatten(pred).values()) if isinstance(pred, StructuredAnnotation) else 0
            counts[box.category].add(Counts(fp=fp))
            details.append({"kind": "region", "id": f"{drawing_id}#pred{pi}",
                            "category": box.category.code,
                            "status": "no_ground_truth_drawing",
                            "tp": 0, "fp": fp, "fn": 0})
    return compute_metrics(counts, metadata), details


# ---------------------------------------------------------------------------
# File-level entry point (used by the CLI)
# ---------------------------------------------------------------------------

def _load_sidecar_dataset_id(path: Path) -> Optional[str]:
    meta = path / "meta.json" if path.is_dir() else path.parent / "meta.json"
    if meta.is_file():
        try:
            return json.loads(meta.read_text(encoding="utf-8")).get("dataset_id")
        except json.JSONDecodeError:
            logger.warning("ignoring unreadable sidecar %s", meta)
    return None


def check_dataset_ids(pred_path: Union[str, Path], gt_path: Union[str, Path],
                      allow_mismatch: bool = False) -> None:
    """Refuse to score across datasets when both sides declare different ids."""
    pred_id = _load_sidecar_dataset_id(Path(pred_path))
    gt_id = _load_sidecar_dataset_id(Path(gt_path))
    if pred_id and gt_id and pred_id != gt_id:
        msg = f"dataset id mismatch: predictions={pred_id!r} vs ground truth={gt_id!r}"
        if not allow_mismatch:
            raise EvalError(msg + " (pass --allow-mismatch to override)")
        logger.warning("%s (continuing: mismatch allowed)", msg)


def write_report(report: EvalReport, details: list[dict], out_json: Union[str, Path],
                 out_table: Optional[Union[str, Path]] = None,
                 out_details: Optional[Union[str, Path]] = None) -> None:
    out_json = Path(out_json)
    out_json.parent.mkdir(parents=True, exist_ok=True)
    out_json.write_text(json.dumps(report.to_json_dict(), ensure_ascii=False, indent=2) + "\n",
                        encoding="utf-8")
    if out_table is not None:
        Path(out_table).write_text(report.format_table() + "\n", encoding="utf-8")
    if out_details is not None:
        with open(out_details, "w", encoding="utf-8") as fh:
            for d in details:
                fh.write(json.dumps(d, ensure_ascii=False) + "\n")
