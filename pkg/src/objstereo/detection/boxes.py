"""Oriented 3D boxes: BEV / 3D IoU by convex polygon clipping, and NMS.

Boxes use camera coordinates (x right, y down, z forward) with the centre at
the geometric middle of the box. ``yaw`` rotates about the y axis and the
length runs along the box's local x axis, as in KITTI labels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DIFFICULTIES = ("easy", "moderate", "hard")


def wrap_angle(a):
    """Map to (-pi, pi]."""
    a = math.fmod(float(a), 2 * math.pi)
    if a <= -math.pi:
        a += 2 * math.pi
    elif a > math.pi:
        a -= 2 * math.pi
    return a


@dataclass
class ObjectBox:
    center: tuple  # metric (x, y, z)
    size: tuple  # (w, h, l) metres
    yaw: float
    confidence: float = 1.0
    center_uvd: tuple | None = None

    def __post_init__(self):
        self.center = tuple(float(c) for c in self.center)
        self.size = tuple(float(s) for s in self.size)
        if min(self.size) < 0:
            raise ValueError(f"box size must be non-negative, got {self.size}")
        self.yaw = wrap_angle(self.yaw)

    @property
    def w(self):
        return self.size[0]

    @property
    def h(self):
        return self.size[1]

    @property
    def l(self):
        return self.size[2]

    def footprint(self):
        """Counter-clockwise BEV polygon (4, 2) in (x, z)."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        hl, hw = self.l / 2, self.w / 2
        local = [(hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw)]
        x0, _, z0 = self.center
        pts = [(x0 + c * a + s * b, z0 - s * a + c * b) for a, b in local]
        if _signed_area(pts) < 0:
            pts = pts[::-1]
        return np.array(pts)

    def corners(self):
        """(8, 3) corners; first four on the top face (smaller y)."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        hl, hh, hw = self.l / 2, self.h / 2, self.w / 2
        out = []
        for dy in (-hh, hh):
            for a, b in ((hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw)):
                out.append((self.center[0] + c * a + s * b, self.center[1] + dy, self.center[2] - s * a + c * b))
        return np.array(out)

    def volume(self):
        return self.w * self.h * self.l


@dataclass
class DetectionLabelSet:
    boxes: list
    difficulties: list

    def __post_init__(self):
        if len(self.boxes) != len(self.difficulties):
            raise ValueError("one difficulty tag per box required")
        for t in self.difficulties:
            if t not in DIFFICULTIES:
                raise ValueError(f"unknown difficulty {t!r}")
        for b in self.boxes:
            if not all(np.isfinite(b.center + b.size + (b.yaw,))):
                raise ValueError("label box has non-finite values")


def _signed_area(pts):
    a = 0.0
    n = len(pts)
    for i in range(n):
        x1, y1 = pts[i]
        x2, y2 = pts[(i + 1) % n]
        a += x1 * y2 - x2 * y1
    return 0.5 * a


def polygon_area(pts):
    return abs(_signed_area(pts)) if len(pts) >= 3 else 0.0


def clip_polygon(subject, clipper):
    """Sutherland-Hodgman clipping of ``subject`` by convex CCW ``clipper``."""
    out = [tuple(p) for p in subject]
    n = len(clipper)
    for i in range(n):
        if not out:
            break
        ax, ay = clipper[i]
        bx, by = clipper[(i + 1) % n]
        ex, ey = bx - ax, by - ay

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        inp, out = out, []
        for j in range(len(inp)):
            p, q = inp[j - 1], inp[j]
            sp, sq = side(p), side(q)
            if sq >= 0:
                if sp < 0:
                    t = sp / (sp - sq)
                    out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
                out.append(q)
            elif sp >= 0:
                t = sp / (sp - sq)
                out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    return out


def bev_intersection(a, b):
    return polygon_area(clip_polygon(a.footprint(), b.footprint()))


def bev_iou(a, b):
    area_a, area_b = a.w * a.l, b.w * b.l
    if area_a <= 0 or area_b <= 0:
        return 0.0
    inter = bev_intersection(a, b)
    union = area_a + area_b - inter
    return float(min(max(inter / union, 0.0), 1.0)) if union > 0 else 0.0


def iou_3d(a, b):
    if a.volume() <= 0 or b.volume() <= 0:
        return 0.0
    ya0, ya1 = a.center[1] - a.h / 2, a.center[1] + a.h / 2
    yb0, yb1 = b.center[1] - b.h / 2, b.center[1] + b.h / 2
    dy = max(0.0, min(ya1, yb1) - max(ya0, yb0))
    if dy <= 0:
        return 0.0
    inter = bev_intersection(a, b) * dy
    union = a.volume() + b.volume() - inter
    return float(min(max(inter / union, 0.0), 1.0)) if union > 0 else 0.0


def nms(boxes, iou_threshold=0.1):
    """Greedy suppression by descending confidence, ties kept in input order."""
    order = sorted(range(len(boxes)), key=lambda i: -boxes[i].confidence)
    keep = []
    for i in order:
        if all(bev_iou(boxes[i], boxes[j]) <= iou_threshold for j in keep):
            keep.append(i)
    return [boxes[i] for i in keep]
