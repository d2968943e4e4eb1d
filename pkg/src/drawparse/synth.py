"""Synthetic callout patches with exact ground truth.

Each patch renders a single annotation sampled from a category-specific value
grammar onto a white canvas. The sampled annotation is returned alongside the
image, so the generator doubles as its own labeling oracle: every value in the
annotation appears verbatim in the rendered text.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .images import save_image
from .ingest.records import PatchRecord, make_patch_id, write_patch_manifest
from .schema import Category, StructuredAnnotation

logger = logging.getLogger(__name__)

_FONT_SIZE_RANGE = (20, 28)
_JITTER_PX = 2


def discover_fonts() -> list[str]:
    """Locate TrueType fonts covering the drawing-symbol glyphs.

    Prefers the DejaVu family (bundled with matplotlib, common on Linux).
    Returns an empty list when none is found; rendering then falls back to
    Pillow's default font, which covers ASCII plus a few symbols only.
    """
    candidates: list[Path] = []
    try:
        import matplotlib
        ttf = Path(matplotlib.get_data_path()) / "fonts" / "ttf"
        candidates += [ttf / "DejaVuSans.ttf", ttf / "DejaVuSansMono.ttf"]
    except ImportError:
        pass
    for root in (Path("/usr/share/fonts"), Path("/usr/local/share/fonts")):
        if root.is_dir():
            candidates += sorted(root.rglob("DejaVuSans.ttf"))
            candidates += sorted(root.rglob("DejaVuSansMono.ttf"))
    seen: list[str] = []
    for p in candidates:
        if p.is_file() and str(p) not in seen:
            seen.append(str(p))
    return seen


@dataclass(frozen=True)
class SynthSpec:
    per_category_count: int = 20
    image_size_range: tuple[int, int] = (32, 640)  # min/max canvas side
    font_set: tuple[str, ...] = ()
    noise_level: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.per_category_count < 1:
            raise ValueError("per_category_count must be >= 1")
        if self.image_size_range[0] < 32:
            raise ValueError("minimum image side is 32 px")
        if not 0.0 <= self.noise_level <= 1.0:
            raise ValueError("noise_level must be in [0,1]")
        if not self.font_set:
            object.__setattr__(self, "font_set", tuple(discover_fonts()))


@lru_cache(maxsize=64)
def _load_font(path: str, size: int):
    if path == "":
        return ImageFont.load_default(size=size)
    return ImageFont.truetype(path, size)


# ---------------------------------------------------------------------------
# Value grammars
# ---------------------------------------------------------------------------

_GDT_SYMBOLS = ("⟂", "∥", "⌖", "○")  # ⟂ ∥ ⌖ ○
_GDT_TOLERANCES = ("0.01", "0.02", "0.05", "0.1", "0.2", "0.5")
_DATUMS = ("A", "B", "C")
_STANDARDS = ("ISO 2768", "ISO 8015", "DIN 7168")
_TOL_CLASSES = ("f", "m", "c", "v")
_NOMINALS = ("2", "2.5", "3", "4", "5", "6", "8", "10", "12", "12.5", "15", "16",
             "20", "25", "30", "32", "40", "50", "60", "80", "100", "120")
_DEVIATIONS = ("0.01", "0.02", "0.05", "0.1", "0.2")
_MATERIAL_NAMES = ("S355JR", "C45", "42CrMo4", "X5CrNi18-10", "AlMg3",
                   "EN-GJL-250", "CuZn37", "S235JR", "16MnCr5", "Ti6Al4V")
_MATERIAL_STANDARDS = ("EN 10025", "EN 10083", "EN 10088", "EN 573")
_NOTE_BANK = (
    "DEBURR ALL EDGES",
    "BREAK SHARP EDGES",
    "ALL DIMENSIONS IN MM",
    "REMOVE ALL BURRS",
    "DO NOT SCALE DRAWING",
    "SEE DETAIL A",
    "HEAT TREAT TO 45 HRC",
    "CHAMFER ALL EDGES 0.5 X 45°",
    "PAINT RAL 7035",
    "MARK PART NUMBER",
    "SURFACE TREATMENT: ANODIZED",
    "MATERIAL CERTIFICATE REQUIRED",
)
_RADII_VALUES = ("0.5", "1", "1.5", "2", "2.5", "3", "4", "5", "6", "8", "10",
                 "12", "16", "20", "25")
_SR_PARAMS = ("Ra", "Rz")
_SR_VALUES = ("0.4", "0.8", "1.6", "3.2", "6.3", "12.5", "25")
_SR_NOTES = ("turned", "ground", "milled")
_THREAD_DIAMETERS = ("4", "5", "6", "8", "10", "12", "16", "20", "24")
_THREAD_PITCHES = ("0.5", "0.7", "0.8", "1", "1.25", "1.5", "2")
_THREAD_CLASSES = ("6H", "6g", "7H")
_THREAD_DEPTHS = ("8", "10", "12", "16", "20")
_PART_NAMES = ("BRACKET", "HOUSING", "SHAFT", "FLANGE", "COVER", "PLATE",
               "GEAR", "SPACER", "ADAPTER", "BUSHING", "CLAMP", "LEVER")
_REVISIONS = ("A", "B", "C", "D")
_SCALES = ("1:1", "1:2", "2:1", "1:5")
_AUTHORS = ("JD", "MK", "AL", "RS", "TW", "PB")
_MONTH_DAYS = ("05", "10", "12", "15", "20", "22", "28")


def _pick(rng: np.random.Generator, options):
    return options[int(rng.integers(0, len(options)))]


def _maybe(rng: np.random.Generator, p: float) -> bool:
    return bool(rng.random() < p)


def sample_annotation(category: Category, rng: np.random.Generator) -> StructuredAnnotation:
    """Draw a strictly valid annotation from the category's value grammar."""
    if category is Category.GDT:
        frame = {"symbol": _pick(rng, _GDT_SYMBOLS)}
        tol = _pick(rng, _GDT_TOLERANCES)
        if _maybe(rng, 0.3):
            tol = "⌀" + tol
        frame["tolerance_value"] = tol
        if _maybe(rng, 0.25):
            frame["modifiers"] = [_pick(rng, ("M", "L"))]
        if _maybe(rng, 0.7):
            count = 1 + int(_maybe(rng, 0.5))
            frame["datums"] = [str(d) for d in rng.permutation(_DATUMS)[:count]]
        return StructuredAnnotation(category, {"frames": [frame]})
    if category is Category.GENERAL_TOLERANCES:
        return StructuredAnnotation(category, {
            "standard": _pick(rng, _STANDARDS), "class": _pick(rng, _TOL_CLASSES)})
    if category is Category.MEASURES:
        payload = {}
        if _maybe(rng, 0.35):
            payload["prefix"] = _pick(rng, ("⌀", "□"))
        payload["nominal"] = _pick(rng, _NOMINALS)
        if _maybe(rng, 0.45):
            payload["upper_deviation"] = "+" + _pick(rng, _DEVIATIONS)
            if _maybe(rng, 0.8):
                payload["lower_deviation"] = "-" + _pick(rng, _DEVIATIONS)
        if _maybe(rng, 0.2):
            payload["unit"] = "mm"
        return StructuredAnnotation(category, payload)
    if category is Category.MATERIALS:
        payload = {"name": _pick(rng, _MATERIAL_NAMES)}
        if _maybe(rng, 0.4):
            payload["standard"] = _pick(rng, _MATERIAL_STANDARDS)
        return StructuredAnnotation(category, payload)
    if category is Category.NOTES:
        return StructuredAnnotation(category, {"text": _pick(rng, _NOTE_BANK)})
    if category is Category.RADII:
        payload = {"value": _pick(rng, _RADII_VALUES)}
        if _maybe(rng, 0.3):
            payload["unit"] = "mm"
        return StructuredAnnotation(category, payload)
    if category is Category.SURFACE_ROUGHNESS:
        payload = {"parameter": _pick(rng, _SR_PARAMS), "value": _pick(rng, _SR_VALUES)}
        if _maybe(rng, 0.4):
            payload["unit"] = "μm"
        if _maybe(rng, 0.3):
            payload["process_note"] = _pick(rng, _SR_NOTES)
        return StructuredAnnotation(category, payload)
    if category is Category.THREADS:
        payload = {"designation": f"M{_pick(rng, _THREAD_DIAMETERS)}x{_pick(rng, _THREAD_PITCHES)}"}
        if _maybe(rng, 0.4):
            payload["tolerance_class"] = _pick(rng, _THREAD_CLASSES)
        if _maybe(rng, 0.3):
            payload["depth"] = _pick(rng, _THREAD_DEPTHS)
        return StructuredAnnotation(category, payload)
    if category is Category.TITLE_BLOCK:
        payload = {}
        if _maybe(rng, 0.9):
            payload["part_name"] = _pick(rng, _PART_NAMES)
        if _maybe(rng, 0.7):
            payload["drawing_number"] = f"DWG-{int(rng.integers(100, 1000))}"
        if _maybe(rng, 0.6):
            payload["revision"] = _pick(rng, _REVISIONS)
        if _maybe(rng, 0.6):
            payload["scale"] = _pick(rng, _SCALES)
        if _maybe(rng, 0.4):
            payload["author"] = _pick(rng, _AUTHORS)
        if _maybe(rng, 0.5):
            year = int(rng.integers(2021, 2026))
            payload["date"] = f"{year}-{_pick(rng, ('02', '04', '06', '09', '11'))}-{_pick(rng, _MONTH_DAYS)}"
        if _maybe(rng, 0.4):
            payload["material"] = _pick(rng, _MATERIAL_NAMES)
        if _maybe(rng, 0.3):
            payload["units"] = "mm"
        if not payload:
            payload["part_name"] = _pick(rng, _PART_NAMES)
        return StructuredAnnotation(category, payload)
    raise ValueError(f"no grammar for {category}")


_TITLE_LABELS = {"part_name": "", "drawing_number": "NO. ", "revision": "REV ",
                 "scale": "SCALE ", "author": "DRAWN ", "date": "DATE ",
                 "material": "MAT. ", "units": "UNITS "}


def display_text(ann: StructuredAnnotation) -> str:
    """The text a drawing would show for this annotation (newline-separated lines)."""
    p = ann.payload
    cat = ann.category
    if cat is Category.GDT:
        cells = []
        for frame in p["frames"]:
            parts = [frame["symbol"], frame["tolerance_value"]]
            if "modifiers" in frame:
                parts[1] = parts[1] + " " + " ".join(frame["modifiers"])
            parts.extend(frame.get("datums", []))
            cells.append(" | ".join(parts))
        return "\n".join(cells)
    if cat is Category.GENERAL_TOLERANCES:
        return f"{p['standard']}-{p['class']}"
    if cat is Category.MEASURES:
        text = p.get("prefix", "") + p["nominal"]
        if "upper_deviation" in p:
            text += " " + p["upper_deviation"]
        if "lower_deviation" in p:
            text += " " + p["lower_deviation"]
        if "unit" in p:
            text += " " + p["unit"]
        return text
    if cat is Category.MATERIALS:
        return p["name"] + (" " + p["standard"] if "standard" in p else "")
    if cat is Category.NOTES:
        return p["text"]
    if cat is Category.RADII:
        return "R" + p["value"] + (" " + p["unit"] if "unit" in p else "")
    if cat is Category.SURFACE_ROUGHNESS:
        text = f"{p['parameter']} {p['value']}"
        if "unit" in p:
            text += " " + p["unit"]
        if "process_note" in p:
            text += " " + p["process_note"]
        return text
    if cat is Category.THREADS:
        text = p["designation"]
        if "tolerance_class" in p:
            text += " - " + p["tolerance_class"]
        if "depth" in p:
            text += " DEEP " + p["depth"]
        return text
    if cat is Category.TITLE_BLOCK:
        return "\n".join(_TITLE_LABELS[k] + v for k, v in p.items())
    raise ValueError(f"no display rule for {cat}")


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def _render_text(text: str, font, jitter: tuple[int, int],
                 min_side: int) -> np.ndarray:
    lines = text.split("\n")
    probe = Image.new("L", (8, 8), 255)
    draw = ImageDraw.Draw(probe)
    line_h = font.size + 6
    widths = [draw.textlength(line, font=font) for line in lines]
    text_w = int(max(widths)) + 1
    text_h = line_h * len(lines)
    margin = 10
    width = max(text_w + 2 * margin, min_side)
    height = max(text_h + 2 * margin, min_side)
    canvas = Image.new("L", (width, height), 255)
    draw = ImageDraw.Draw(canvas)
    x = margin + jitter[0]
    y = margin + jitter[1]
    for i, line in enumerate(lines):
        draw.text((x, y + i * line_h), line, font=font, fill=0)
    return np.asarray(canvas, dtype=np.uint8).copy()


def _speckle(image: np.ndarray, rng: np.random.Generator, level: float) -> np.ndarray:
    if level <= 0.0:
        return image
    out = image.copy()
    count = int(level * 0.02 * image.size)
    ys = rng.integers(0, image.shape[0], size=count)
    xs = rng.integers(0, image.shape[1], size=count)
    vals = rng.integers(0, 256, size=count)
    out[ys, xs] = vals
    return out


def generate_patch(category: Category, rng: np.random.Generator,
                   spec: SynthSpec = SynthSpec()) -> tuple[np.ndarray, StructuredAnnotation]:
    """Sample an annotation and render it; the annotation is exact ground truth."""
    ann = sample_annotation(category, rng)
    text = display_text(ann)
    size = int(rng.integers(_FONT_SIZE_RANGE[0], _FONT_SIZE_RANGE[1] + 1))
    font_path = _pick(rng, spec.font_set) if spec.font_set else ""
    font = _load_font(font_path, size)
    jitter = (int(rng.integers(-_JITTER_PX, _JITTER_PX + 1)),
              int(rng.integers(-_JITTER_PX, _JITTER_PX + 1)))
    image = _render_text(text, font, jitter, spec.image_size_range[0])
    if max(image.shape) > spec.image_size_range[1]:
        raise ValueError(f"rendered patch {image.shape} exceeds the size cap "
                         f"{spec.image_size_range[1]}")
    image = _speckle(image, rng, spec.noise_level)
    return image, ann


def generate_corpus(spec: SynthSpec, out_dir: Union[str, Path],
                    id_prefix: Optional[str] = None) -> Path:
    """Render per_category_count patches for each category; write the manifest.

    Balanced by construction. Patch ids embed the seed (and optional prefix),
    so corpora from different seeds never collide.
    """
    out_dir = Path(out_dir)
    (out_dir / "patches").mkdir(parents=True, exist_ok=True)
    prefix = id_prefix if id_prefix is not None else f"synth{spec.seed}"
    records: list[PatchRecord] = []
    for cat_index, category in enumerate(Category):
        for i in range(spec.per_category_count):
            rng = np.random.default_rng(
                np.random.SeedSequence([spec.seed & 0xFFFFFFFF, cat_index, i]))
            image, ann = generate_patch(category, rng, spec)
            drawing_id = f"{prefix}_{category.code}_{i:04d}"
            patch_id = make_patch_id(drawing_id, 0, "orig")
            rel = f"patches/{patch_id}.png"
            save_image(image, out_dir / rel)
            records.append(PatchRecord(
                patch_id=patch_id, image_uri=rel, category=category,
                source=(drawing_id, 0), ground_truth=ann,
                augmentation_tag="orig"))
    manifest = out_dir / "patches.jsonl"
    write_patch_manifest(records, manifest)
    return manifest
