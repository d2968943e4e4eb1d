"""Pluggable oriented-region detector backends.

Three implementations share one contract: detect(image, confidence_threshold)
returns canonical-theta boxes with confidences. The oracle replays known
ground-truth boxes (optionally jittered) for pipeline verification, the stub
returns a fixed list, and the external adapter shells out to a detector
toolchain through files.
"""

from __future__ import annotations

import hashlib
import json
import logging
import shutil
import subprocess
import tempfile
from pathlib import Path
from typing import Optional, Protocol, Sequence, Union

import numpy as np

from ..images import load_image, save_image
from ..ingest.boxes import OrientedBox
from ..ingest.records import DrawingRecord

logger = logging.getLogger(__name__)


class DetectorError(Exception):
    pass


class DetectorConfigError(DetectorError):
    """The backend is not set up correctly (missing command, no trained state)."""


class DetectorInferenceError(DetectorError):
    """The backend failed while detecting (bad output, unknown image, crash)."""


class DetectorBackend(Protocol):
    def detect(self, image: np.ndarray,
               confidence_threshold: float) -> list[OrientedBox]: ...


def detect(backend: DetectorBackend, image: np.ndarray,
           confidence_threshold: float = 0.25) -> list[OrientedBox]:
    """Run a backend and order the surviving boxes by confidence, then position."""
    boxes = backend.detect(image, confidence_threshold)
    return sorted(boxes, key=lambda b: (-b.confidence, b.cy, b.cx))


def _image_key(image: np.ndarray) -> str:
    return hashlib.sha256(
        image.tobytes() + repr(image.shape).encode()).hexdigest()


class StubDetector:
    """Returns the same fixed list for every image; handy in unit tests."""

    def __init__(self, boxes: Sequence[OrientedBox]):
        self._boxes = list(boxes)

    def detect(self, image, confidence_threshold):
        return [b for b in self._boxes if b.confidence >= confidence_threshold]


class OracleDetector:
    """Replays ground-truth boxes for images it was fitted on.

    With jitter_sigma > 0, box centers are shifted by truncated Gaussian noise
    (per-axis cap: min(2 sigma, 5% of the box side)), which keeps the jittered
    box at IoU >= 0.8 with its source. Jitter is seeded per image, so replays
    are deterministic.
    """

    def __init__(self, jitter_sigma: float = 0.0, seed: int = 0):
        self.jitter_sigma = jitter_sigma
        self.seed = seed
        self._by_key: dict[str, list[OrientedBox]] = {}

    def train(self, records: Sequence[DrawingRecord],
              images_root: Optional[Union[str, Path]] = None) -> "OracleDetector":
        """"Training" an oracle just memorizes image -> ground-truth boxes."""
        for rec in records:
            uri = Path(rec.image_uri)
            if not uri.is_absolute() and images_root is not None:
                uri = Path(images_root) / uri
            self.add(load_image(uri), rec.boxes)
        return self

    def add(self, image: np.ndarray, boxes: Sequence[OrientedBox]) -> None:
        self._by_key[_image_key(image)] = list(boxes)

    def detect(self, image, confidence_threshold):
        key = _image_key(image)
        if key not in self._by_key:
            raise DetectorInferenceError("oracle has no boxes for this image")
        out = []
        rng = np.random.default_rng(
            np.random.SeedSequence([self.seed & 0xFFFFFFFF,
                                    int(key[:8], 16)]))
        for box in self._by_key[key]:
            if self.jitter_sigma > 0.0:
                cap_x = min(2.0 * self.jitter_sigma, 0.05 * box.w)
                cap_y = min(2.0 * self.jitter_sigma, 0.05 * box.h)
                dx = float(np.clip(rng.normal(0.0, self.jitter_sigma), -cap_x, cap_x))
                dy = float(np.clip(rng.normal(0.0, self.jitter_sigma), -cap_y, cap_y))
                box = OrientedBox(box.cx + dx, box.cy + dy, box.w, box.h,
                                  box.theta, box.category, box.confidence)
            if box.confidence >= confidence_threshold:
                out.append(box)
        return out


class ExternalDetector:
    """File-based adapter for an external OBB detector toolchain.

    The detect command is a template whose "{image}" and "{out}" placeholders
    are substituted with a PNG path and an output JSON path. The output must
    be {"image": ..., "boxes": [{"cx", "cy", "w", "h", "theta", "category",
    "confidence"}, ...]}.
    """

    def __init__(self, detect_command: Optional[Sequence[str]] = None,
                 train_command: Optional[Sequence[str]] = None):
        self.detect_command = list(detect_command) if detect_command else None
        self.train_command = list(train_command) if train_command else None

    def train(self, manifest_path: Union[str, Path]) -> "ExternalDetector":
        if not self.train_command:
            raise DetectorConfigError("external detector has no train command")
        cmd = [arg.format(manifest=str(manifest_path)) for arg in self.train_command]
        proc = subprocess.run(cmd, capture_output=True, text=True)
        if proc.returncode != 0:
            raise DetectorInferenceError(
                f"external training failed ({proc.returncode}): {proc.stderr.strip()}")
        return self

    def detect(self, image, confidence_threshold):
        if not self.detect_command:
            raise DetectorConfigError("external detector has no detect command")
        executable = self.detect_command[0]
        if shutil.which(executable) is None and not Path(executable).exists():
            raise DetectorConfigError(f"detector executable not found: {executable}")
        with tempfile.TemporaryDirectory(prefix="drawparse_det_") as tmp:
            image_path = Path(tmp) / "image.png"
            out_path = Path(tmp) / "boxes.json"
            save_image(image, image_path)
            cmd = [arg.format(image=str(image_path), out=str(out_path))
                   for arg in self.detect_command]
            proc = subprocess.run(cmd, capture_output=True, text=True)
            if proc.returncode != 0:
                raise DetectorInferenceError(
                    f"detector exited {proc.returncode}: {proc.stderr.strip()}")
            try:
                payload = json.loads(out_path.read_text(encoding="utf-8"))
                boxes = [OrientedBox.from_json_dict(b) for b in payload["boxes"]]
            except (OSError, json.JSONDecodeError, KeyError, ValueError) as err:
                raise DetectorInferenceError(f"bad detector output: {err}") from err
        return [b for b in boxes if b.confidence >= confidence_threshold]
