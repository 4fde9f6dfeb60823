"""Oriented bounding-box geometry: footprints, convex clipping, IoU and DIoU.

Everything here is exact up to floating error: footprints are convex
quadrilaterals, their intersection is computed by half-plane clipping, and
IoU/DIoU follow from areas and center distances. No sampling anywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import AssetSpec, Pose

Point2 = tuple[float, float]
Segment2 = tuple[Point2, Point2]


@dataclass(frozen=True)
class Obb2:
    """A yaw-rotated rectangle in the xy plane."""

    center: tuple[float, float]
    half_extents: tuple[float, float]
    theta: float

    def __post_init__(self) -> None:
        if any(h <= 0 for h in self.half_extents):
            raise ValueError(f"half_extents must be positive, got {self.half_extents}")

    @property
    def area(self) -> float:
        hx, hy = self.half_extents
        return 4.0 * hx * hy


@dataclass(frozen=True)
class Obb3:
    """An Obb2 footprint extruded over a z interval."""

    footprint: Obb2
    z_min: float
    z_max: float

    def __post_init__(self) -> None:
        if self.z_max <= self.z_min:
            raise ValueError(f"z_max must exceed z_min, got [{self.z_min}, {self.z_max}]")

    @property
    def volume(self) -> float:
        return self.footprint.area * (self.z_max - self.z_min)

    @property
    def center(self) -> tuple[float, float, float]:
        cx, cy = self.footprint.center
        return (cx, cy, 0.5 * (self.z_min + self.z_max))


def footprint(pose: Pose, dims: Sequence[float]) -> Obb2:
    """Footprint of an asset's oriented bounding box at the given pose."""
    return Obb2((pose.x, pose.y), (dims[0] / 2.0, dims[1] / 2.0), pose.theta)


def box3(pose: Pose, dims: Sequence[float]) -> Obb3:
    """3D oriented bounding box centered at the pose (z is the centroid)."""
    h = dims[2]
    return Obb3(footprint(pose, dims), pose.z - h / 2.0, pose.z + h / 2.0)


def box3_of(spec: AssetSpec, pose: Pose) -> Obb3:
    return box3(pose, spec.dims)


def corners(box: Obb2) -> np.ndarray:
    """The four footprint corners, counterclockwise from (+hx, +hy).

    Each corner is center + R(theta) @ (+-hx, +-hy).
    """
    cx, cy = box.center
    hx, hy = box.half_extents
    c, s = math.cos(box.theta), math.sin(box.theta)
    local = np.array([(hx, hy), (-hx, hy), (-hx, -hy), (hx, -hy)], dtype=float)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([cx, cy])


def polygon_area(poly: Sequence[Point2] | np.ndarray) -> float:
    """Signed shoelace area; positive for counterclockwise polygons."""
    pts = np.asarray(poly, dtype=float)
    if len(pts) < 3:
        return 0.0
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _clip_half_plane(poly: list[Point2], a: Point2, b: Point2) -> list[Point2]:
    """Keep the part of poly on the left of the directed line a->b."""
    out: list[Point2] = []
    n = len(poly)
    ex, ey = b[0] - a[0], b[1] - a[1]

    def side(p: Point2) -> float:
        return ex * (p[1] - a[1]) - ey * (p[0] - a[0])

    for i in range(n):
        cur, nxt = poly[i], poly[(i + 1) % n]
        s_cur, s_nxt = side(cur), side(nxt)
        if s_cur >= 0.0:
            out.append(cur)
        if (s_cur > 0.0) != (s_nxt > 0.0) and (s_cur < 0.0) != (s_nxt < 0.0):
            # Edge crosses the clip line strictly.
            t = s_cur / (s_cur - s_nxt)
            out.append((cur[0] + t * (nxt[0] - cur[0]), cur[1] + t * (nxt[1] - cur[1])))
    return out


def polygon_intersection_area(a: Sequence[Point2], b: Sequence[Point2]) -> float:
    """Area of the intersection of two convex counterclockwise polygons."""
    poly = [tuple(map(float, p)) for p in a]
    if len(poly) < 3 or len(b) < 3:
        return 0.0
    for i in range(len(b)):
        poly = _clip_half_plane(poly, tuple(b[i]), tuple(b[(i + 1) % len(b)]))
        if len(poly) < 3:
            return 0.0
    return max(0.0, polygon_area(poly))


def _z_overlap(a: Obb3, b: Obb3) -> float:
    return max(0.0, min(a.z_max, b.z_max) - max(a.z_min, b.z_min))


def iou(a: Obb3, b: Obb3, mode: str = "xyz") -> float:
    """Intersection over union of two boxes.

    mode "xy" uses footprint areas only; mode "xyz" multiplies the footprint
    intersection by the z-overlap length and divides by the 3D union volume.
    """
    inter_area = polygon_intersection_area(corners(a.footprint), corners(b.footprint))
    if mode == "xy":
        union = a.footprint.area + b.footprint.area - inter_area
        return inter_area / union if union > 0 else 0.0
    if mode == "xyz":
        inter_vol = inter_area * _z_overlap(a, b)
        union = a.volume + b.volume - inter_vol
        return inter_vol / union if union > 0 else 0.0
    raise ValueError(f"unknown iou mode {mode!r}")


def _enclosing_diag_sq(a: Obb3, b: Obb3, mode: str) -> float:
    pts = np.vstack([corners(a.footprint), corners(b.footprint)])
    spans = pts.max(axis=0) - pts.min(axis=0)
    d2 = float(spans[0] ** 2 + spans[1] ** 2)
    if mode == "xyz":
        z_span = max(a.z_max, b.z_max) - min(a.z_min, b.z_min)
        d2 += z_span**2
    return d2


def diou(a: Obb3, b: Obb3, mode: str = "xyz") -> float:
    """Distance-IoU metric: IoU minus the squared normalized center distance.

    The normalizer is the diagonal of the smallest axis-aligned box enclosing
    both OBBs, in the dimensionality selected by ``mode``, so the penalty term
    rho^2/c^2 stays in [0, 1] and the result in (-1, 1].
    """
    if mode not in ("xy", "xyz"):
        raise ValueError(f"unknown diou mode {mode!r}")
    ca, cb = a.center, b.center
    if mode == "xy":
        rho2 = (ca[0] - cb[0]) ** 2 + (ca[1] - cb[1]) ** 2
    else:
        rho2 = (ca[0] - cb[0]) ** 2 + (ca[1] - cb[1]) ** 2 + (ca[2] - cb[2]) ** 2
    c2 = _enclosing_diag_sq(a, b, mode)
    return iou(a, b, mode) - (rho2 / c2 if c2 > 0 else 0.0)


def point_segment_distance(p: Point2, seg: Segment2) -> float:
    """Minimum distance from a point to any point of a segment."""
    (ax, ay), (bx, by) = seg
    dx, dy = bx - ax, by - ay
    len2 = dx * dx + dy * dy
    if len2 == 0.0:
        raise ValueError("segment endpoints must be distinct")
    t = ((p[0] - ax) * dx + (p[1] - ay) * dy) / len2
    t = min(1.0, max(0.0, t))
    qx, qy = ax + t * dx, ay + t * dy
    return math.hypot(p[0] - qx, p[1] - qy)


def footprint_hull_protrusion(box: Obb2, width: float, depth: float) -> float:
    """How far the footprint pokes out of [0, width] x [0, depth].

    Returns the maximum per-axis deficit over the four corners; 0 when the
    footprint hull is inside the rectangle.
    """
    pts = corners(box)
    deficits = np.maximum.reduce(
        [
            -pts[:, 0],
            pts[:, 0] - width,
            -pts[:, 1],
            pts[:, 1] - depth,
        ]
    )
    return max(0.0, float(deficits.max()))
