"""Oriented-box geometry: canonical parameterization and exact rotated IoU."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..schema import Category


class GeometryError(ValueError):
    pass


def normalize_theta(theta: float) -> float:
    """Map any angle to the canonical range [-pi/2, pi/2).

    Adding or subtracting pi keeps the box's point set unchanged (the w-axis
    line is preserved, its direction reverses), so the rectangle is identical;
    only the rectified-crop orientation flips by 180 degrees for inputs that
    started outside the range.
    """
    t = math.fmod(theta + math.pi / 2.0, math.pi)
    if t < 0.0:
        t += math.pi
    return t - math.pi / 2.0


@dataclass(frozen=True)
class OrientedBox:
    """Rotated rectangle in image coordinates (origin top-left, y down).

    theta is the rotation of the w-axis from the image x-axis, so the w-axis
    unit vector is (cos theta, sin theta). Stored theta is always canonical.
    """
    cx: float
    cy: float
    w: float
    h: float
    theta: float
    category: Category
    confidence: float = 1.0

    def __post_init__(self):
        if self.w < 0 or self.h < 0:
            raise GeometryError(f"negative box size: w={self.w}, h={self.h}")
        if not 0.0 <= self.confidence <= 1.0:
            raise GeometryError(f"confidence outside [0,1]: {self.confidence}")
        object.__setattr__(self, "theta", normalize_theta(float(self.theta)))

    @property
    def area(self) -> float:
        return self.w * self.h

    def corner_points(self) -> np.ndarray:
        """4x2 array of corners in consistent counterclockwise order."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        ex = np.array([c, s])
        ey = np.array([-s, c])
        ctr = np.array([self.cx, self.cy])
        hw, hh = self.w / 2.0, self.h / 2.0
        return np.array([
            ctr - hw * ex - hh * ey,
            ctr + hw * ex - hh * ey,
            ctr + hw * ex + hh * ey,
            ctr - hw * ex + hh * ey,
        ])

    def to_json_dict(self) -> dict:
        return {"cx": self.cx, "cy": self.cy, "w": self.w, "h": self.h,
                "theta": self.theta, "category": self.category.code,
                "confidence": self.confidence}

    @classmethod
    def from_json_dict(cls, obj: dict) -> "OrientedBox":
        return cls(cx=float(obj["cx"]), cy=float(obj["cy"]), w=float(obj["w"]),
                   h=float(obj["h"]), theta=float(obj.get("theta", 0.0)),
                   category=Category.from_code(obj["category"]),
                   confidence=float(obj.get("confidence", 1.0)))


def box_from_corners(corners, category: Category,
                     confidence: float = 1.0) -> OrientedBox:
    """Inverse of corner_points; theta lands in the canonical range."""
    pts = np.asarray(corners, dtype=float)
    if pts.shape != (4, 2):
        raise GeometryError(f"expected 4 corners, got shape {pts.shape}")
    ctr = pts.mean(axis=0)
    w_edge = pts[1] - pts[0]
    h_edge = pts[3] - pts[0]
    return OrientedBox(cx=float(ctr[0]), cy=float(ctr[1]),
                       w=float(np.hypot(*w_edge)), h=float(np.hypot(*h_edge)),
                       theta=math.atan2(w_edge[1], w_edge[0]),
                       category=category, confidence=confidence)


def _shoelace(poly) -> float:
    total = 0.0
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        total += x1 * y2 - x2 * y1
    return abs(total) / 2.0


def _clip_halfplane(poly, a, b, eps):
    """Sutherland-Hodgman step: keep the part of poly left of directed edge a->b."""
    ex, ey = b[0] - a[0], b[1] - a[1]
    out = []
    n = len(poly)
    for i in range(n):
        cur = poly[i]
        prev = poly[i - 1]
        cur_in = ex * (cur[1] - a[1]) - ey * (cur[0] - a[0]) >= -eps
        prev_in = ex * (prev[1] - a[1]) - ey * (prev[0] - a[0]) >= -eps
        if cur_in != prev_in:
            dx, dy = cur[0] - prev[0], cur[1] - prev[1]
            denom = ex * dy - ey * dx
            if denom != 0.0:
                t = (ex * (a[1] - prev[1]) - ey * (a[0] - prev[0])) / denom
                out.append((prev[0] + t * dx, prev[1] + t * dy))
        if cur_in:
            out.append(cur)
    return out


def _same_corner_set(pa: np.ndarray, pb: np.ndarray, tol: float) -> bool:
    for p in pb:
        if not np.any(np.all(np.abs(pa - p) <= tol, axis=1)):
            return False
    return True


def rotated_iou(a: OrientedBox, b: OrientedBox) -> float:
    """Exact intersection-over-union of two oriented boxes via polygon clipping.

    Symmetric by construction (arguments are canonically ordered before
    clipping) and exactly 1.0 for boxes with the same point set, including
    the w/h-swap-with-theta±pi/2 representation of the same rectangle.
    """
    if a.area <= 0.0 or b.area <= 0.0:
        raise GeometryError("rotated_iou requires boxes with positive area")
    if (b.cx, b.cy, b.w, b.h, b.theta) < (a.cx, a.cy, a.w, a.h, a.theta):
        a, b = b, a
    pa = a.corner_points()
    pb = b.corner_points()
    scale = max(a.w, a.h, b.w, b.h)
    if _same_corner_set(pa, pb, 1e-9 * scale) and _same_corner_set(pb, pa, 1e-9 * scale):
        return 1.0
    eps = 1e-9 * scale * scale
    poly = [tuple(p) for p in pa]
    clip = [tuple(p) for p in pb]
    for i in range(4):
        if not poly:
            break
        poly = _clip_halfplane(poly, clip[i], clip[(i + 1) % 4], eps)
    inter = _shoelace(poly) if len(poly) >= 3 else 0.0
    area_a = _shoelace([tuple(p) for p in pa])
    area_b = _shoelace([tuple(p) for p in pb])
    union = area_a + area_b - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)
