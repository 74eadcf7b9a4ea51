"""Oriented 3D boxes and rotated-rectangle overlap geometry.

BEV rectangles put the box length ``l`` along the heading ``theta`` and the
width ``w`` across it.  Intersection areas come from Sutherland-Hodgman
clipping of the two 4-vertex convex polygons followed by the shoelace
formula, which is exact for convex inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def normalize_angle(theta):
    """Wrap an angle (scalar or array) into (-pi, pi]."""
    wrapped = np.mod(np.asarray(theta, dtype=np.float64) + math.pi, TWO_PI)
    wrapped = np.where(wrapped == 0.0, TWO_PI, wrapped) - math.pi
    if np.isscalar(theta) or np.ndim(theta) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class Box3D:
    """Oriented box with volumetric-center z and BEV yaw in radians.

    ``theta`` is normalized to (-pi, pi] at construction.  Anchors and
    labels that reference the bottom face are converted on the way in;
    internally every box uses the volumetric center.
    """

    cx: float
    cy: float
    cz: float
    w: float
    l: float
    h: float
    theta: float
    class_id: int = 0

    def __post_init__(self):
        for dim in ("w", "l", "h"):
            if not getattr(self, dim) > 0:
                raise ValueError(f"box {dim} must be > 0, got {getattr(self, dim)}")
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    @classmethod
    def from_bottom_z(cls, cx, cy, z_bottom, w, l, h, theta, class_id=0) -> "Box3D":
        return cls(cx, cy, z_bottom + 0.5 * h, w, l, h, theta, class_id)

    @property
    def z_bottom(self) -> float:
        return self.cz - 0.5 * self.h

    @property
    def volume(self) -> float:
        return self.w * self.l * self.h

    @property
    def bev_area(self) -> float:
        return self.w * self.l

    def corners_bev(self) -> np.ndarray:
        """4x2 array of BEV corners in counter-clockwise order."""
        return np.array(_corners(self.cx, self.cy, self.w, self.l, self.theta))

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz,
                         self.w, self.l, self.h, self.theta])


def _corners(cx, cy, w, l, theta):
    """CCW corners of a rotated rectangle as a list of (x, y) tuples."""
    c, s = math.cos(theta), math.sin(theta)
    hl, hw = 0.5 * l, 0.5 * w
    out = []
    for u, v in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)):
        out.append((cx + u * c - v * s, cy + u * s + v * c))
    return out


def _clip(subject, clip_poly):
    """Sutherland-Hodgman clip of a convex CCW subject by a convex CCW poly."""
    output = subject
    n = len(clip_poly)
    for i in range(n):
        if not output:
            return output
        e1 = clip_poly[i]
        e2 = clip_poly[(i + 1) % n]
        ex, ey = e2[0] - e1[0], e2[1] - e1[1]
        inp = output
        output = []
        prev = inp[-1]
        prev_side = ex * (prev[1] - e1[1]) - ey * (prev[0] - e1[0])
        for cur in inp:
            cur_side = ex * (cur[1] - e1[1]) - ey * (cur[0] - e1[0])
            if cur_side >= 0.0:
                if prev_side < 0.0:
                    output.append(_intersect(prev, cur, prev_side, cur_side))
                output.append(cur)
            elif prev_side >= 0.0:
                output.append(_intersect(prev, cur, prev_side, cur_side))
            prev, prev_side = cur, cur_side
    return output


def _intersect(p, q, sp, sq):
    # sp and sq are signed areas of opposite sign; the edge crossing sits
    # at the root of their linear interpolation.
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def _shoelace(poly):
    area = 0.0
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        area += x1 * y2 - x2 * y1
    return 0.5 * area


def _bev_intersection_area(a: "Box3D", b: "Box3D") -> float:
    inter = _clip(_corners(a.cx, a.cy, a.w, a.l, a.theta),
                  _corners(b.cx, b.cy, b.w, b.l, b.theta))
    if len(inter) < 3:
        return 0.0
    return max(0.0, _shoelace(inter))


def iou_bev(a: Box3D, b: Box3D) -> float:
    """Intersection over union of the two rotated BEV rectangles."""
    inter = _bev_intersection_area(a, b)
    if inter <= 0.0:
        return 0.0
    union = a.bev_area + b.bev_area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def iou_3d(a: Box3D, b: Box3D) -> float:
    """3D IoU: BEV intersection times vertical overlap over volume union."""
    z_overlap = min(a.cz + 0.5 * a.h, b.cz + 0.5 * b.h) - \
        max(a.cz - 0.5 * a.h, b.cz - 0.5 * b.h)
    if z_overlap <= 0.0:
        return 0.0
    inter_bev = _bev_intersection_area(a, b)
    if inter_bev <= 0.0:
        return 0.0
    inter = inter_bev * z_overlap
    union = a.volume + b.volume - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def iou_matrix(boxes_a, boxes_b, mode: str = "bev") -> np.ndarray:
    """Pairwise IoU table between two box sequences.

    Pairs whose BEV circumcircles cannot overlap are skipped and reported
    as exactly 0, which leaves the result identical to the dense loop.
    """
    fn = iou_bev if mode == "bev" else iou_3d
    out = np.zeros((len(boxes_a), len(boxes_b)))
    if not len(boxes_a) or not len(boxes_b):
        return out
    ca = np.array([(b.cx, b.cy) for b in boxes_a])
    cb = np.array([(b.cx, b.cy) for b in boxes_b])
    ra = np.array([0.5 * math.hypot(b.w, b.l) for b in boxes_a])
    rb = np.array([0.5 * math.hypot(b.w, b.l) for b in boxes_b])
    d2 = ((ca[:, None, :] - cb[None, :, :]) ** 2).sum(axis=2)
    reach = (ra[:, None] + rb[None, :]) ** 2
    for i, j in zip(*np.nonzero(d2 <= reach)):
        out[i, j] = fn(boxes_a[i], boxes_b[j])
    return out


def points_in_box(xyz: np.ndarray, box: Box3D) -> np.ndarray:
    """Boolean mask of points inside the oriented box (boundary inclusive)."""
    xyz = np.asarray(xyz, dtype=np.float64)
    if xyz.size == 0:
        return np.zeros((0,), dtype=bool)
    c, s = math.cos(box.theta), math.sin(box.theta)
    dx = xyz[:, 0] - box.cx
    dy = xyz[:, 1] - box.cy
    u = dx * c + dy * s
    v = -dx * s + dy * c
    return ((np.abs(u) <= 0.5 * box.l)
            & (np.abs(v) <= 0.5 * box.w)
            & (np.abs(xyz[:, 2] - box.cz) <= 0.5 * box.h))
