"""Angle arithmetic and oriented-box geometry in the bird's-eye-view plane.

Full-range angles live in (-180, 180] degrees and distinguish a vehicle's
front from its back; half-range angles live in (-90, 90] and are blind to
180-degree flips.  Geometry is computed in radians in memory; degrees are
used at every file and CLI boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi

# IoU ratios this close to an endpoint are float noise from polygon
# clipping (e.g. clipping a box against its own 180-degree rotation) and
# snap to the exact value.
_IOU_SNAP = 1e-12


def _wrap(angle, period, upper):
    a = np.asarray(angle, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError("angle must be finite")
    r = np.mod(a, period)
    r = np.where(r > upper, r - period, r)
    return float(r) if np.ndim(angle) == 0 else r


def wrap_full(angle_rad):
    """Wrap an angle in radians to the full range (-pi, pi]."""
    return _wrap(angle_rad, TWO_PI, math.pi)


def wrap_half(angle_rad):
    """Wrap an angle in radians to the half range (-pi/2, pi/2]."""
    return _wrap(angle_rad, math.pi, math.pi / 2.0)


def wrap_full_deg(angle_deg):
    """Wrap an angle in degrees to (-180, 180]."""
    return _wrap(angle_deg, 360.0, 180.0)


def wrap_half_deg(angle_deg):
    """Wrap an angle in degrees to (-90, 90]."""
    return _wrap(angle_deg, 180.0, 90.0)


def foe_deg(gt_deg, pred_deg):
    """Full-range orientation error in degrees, in [0, 180]."""
    return np.abs(wrap_full_deg(np.asarray(gt_deg, dtype=float) - pred_deg))


def hoe_deg(gt_deg, pred_deg):
    """Half-range orientation error in degrees, in [0, 90].

    Invisible to 180-degree flips: hoe(g, p) == hoe(g, p + 180).
    """
    return np.abs(wrap_half_deg(np.asarray(gt_deg, dtype=float) - pred_deg))


@dataclass(frozen=True)
class OrientedBox:
    """Axis box in the BEV plane: center (m), dimensions (m), yaw (rad).

    ``yaw`` is the heading of the vehicle front, full-range.  Dimensions
    must be strictly positive.
    """

    cx: float
    cy: float
    length: float
    width: float
    yaw: float

    def __post_init__(self):
        for name in ("cx", "cy", "length", "width", "yaw"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v)):
                raise ValueError(f"OrientedBox.{name} must be a finite number, got {v!r}")
        if self.length <= 0.0 or self.width <= 0.0:
            raise ValueError("OrientedBox dimensions must be positive")
        object.__setattr__(self, "yaw", wrap_full(self.yaw))

    @classmethod
    def from_deg(cls, cx, cy, length, width, yaw_deg):
        return cls(cx, cy, length, width, math.radians(yaw_deg))

    @property
    def yaw_deg(self):
        return math.degrees(self.yaw)

    @property
    def area(self):
        return self.length * self.width

    def corners(self):
        """Return the 4 corners as a (4, 2) array in CCW order."""
        return box_corners(self)


def box_corners(box: OrientedBox) -> np.ndarray:
    """Corners of an oriented box, CCW starting at the front-left.

    Local offsets (+l/2, +w/2), (-l/2, +w/2), (-l/2, -w/2), (+l/2, -w/2)
    rotated by yaw and translated to the center.
    """
    hl, hw = 0.5 * box.length, 0.5 * box.width
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([box.cx, box.cy])


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def clip_polygons(subject: np.ndarray, clipper: np.ndarray) -> np.ndarray:
    """Intersection of two CCW convex polygons (Sutherland-Hodgman).

    Points exactly on a clipper edge count as inside, so touching or
    collinear configurations yield a degenerate (zero-area) polygon
    rather than nothing.  Returns a (k, 2) array, possibly empty.
    """
    output = [tuple(p) for p in np.asarray(subject, dtype=float)]
    clip = np.asarray(clipper, dtype=float)
    for i in range(len(clip)):
        if not output:
            break
        p = clip[i]
        q = clip[(i + 1) % len(clip)]
        inputs = output
        output = []
        prev = inputs[-1]
        prev_side = _cross(p, q, prev)
        for cur in inputs:
            cur_side = _cross(p, q, cur)
            if cur_side >= 0.0:
                if prev_side < 0.0:
                    output.append(_edge_intersect(prev, cur, prev_side, cur_side))
                output.append(cur)
            elif prev_side >= 0.0:
                output.append(_edge_intersect(prev, cur, prev_side, cur_side))
            prev, prev_side = cur, cur_side
    if not output:
        return np.zeros((0, 2))
    return np.asarray(output, dtype=float)


def _edge_intersect(a, b, side_a, side_b):
    # side_a and side_b have opposite signs, so the denominator is nonzero.
    t = side_a / (side_a - side_b)
    return (a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]))


def polygon_area(polygon: np.ndarray) -> float:
    """Shoelace area; polygons with fewer than 3 vertices have area 0."""
    pts = np.asarray(polygon, dtype=float)
    if len(pts) < 3:
        return 0.0
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def rotated_iou(a: OrientedBox, b: OrientedBox) -> float:
    """Intersection-over-union of two oriented boxes, in [0, 1].

    Boxes are centrally symmetric, so a box and its 180-degree rotation
    have IoU exactly 1; ratios within 1e-12 of 0 or 1 snap to the exact
    endpoint to absorb clipping round-off.
    """
    inter = polygon_area(clip_polygons(box_corners(a), box_corners(b)))
    union = a.area + b.area - inter
    iou = inter / union
    if iou >= 1.0 - _IOU_SNAP:
        return 1.0
    if iou <= _IOU_SNAP:
        return 0.0
    return float(iou)
