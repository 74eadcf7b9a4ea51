"""Anchor lattices, IoU-based target assignment, and box residual codes.

Anchors tile the BEV canvas: one box per (class, row, col, rotation)
with fixed per-class dimensions and bottom height.  Ground-truth boxes
are matched to anchors by rotated BEV overlap, producing per-anchor
labels and, for positives, a 7-field regression residual plus a two-way
heading bin that disambiguates the sine-encoded yaw.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cloud import Roi3D
from .geometry import Box3D, iou_3d, iou_bev, normalize_angle

LABEL_NEGATIVE = -1
LABEL_IGNORE = -2

_ROTATIONS = (0.0, math.pi / 2)


@dataclass(frozen=True)
class AnchorSpec:
    """Per-class anchor template: dimensions, bottom height, yaw set."""

    class_id: int
    w: float
    l: float
    h: float
    z_bottom: float
    rotations: tuple[float, ...] = _ROTATIONS
    match_thr: float = 0.6
    unmatch_thr: float = 0.45

    def __post_init__(self):
        for name in ("w", "l", "h"):
            if getattr(self, name) <= 0:
                raise ValueError(f"anchor {name} must be > 0")
        if not self.rotations:
            raise ValueError("anchor needs at least one rotation")
        object.__setattr__(self, "rotations", tuple(float(r) for r in self.rotations))
        if not 0.0 <= self.unmatch_thr <= self.match_thr <= 1.0:
            raise ValueError(
                f"need 0 <= unmatch_thr <= match_thr <= 1, got "
                f"{self.unmatch_thr}/{self.match_thr}")

    @property
    def cz(self) -> float:
        return self.z_bottom + self.h / 2


@dataclass(frozen=True)
class AnchorGrid:
    """Flat anchor lattice in (class, row, col, rotation) nesting order.

    Box parameters live in ``params`` columns (cx, cy, cz, w, l, h,
    theta) with the matching class in ``class_ids``.
    """

    params: np.ndarray
    class_ids: np.ndarray
    h: int
    w: int
    stride_x: float
    stride_y: float

    def __len__(self) -> int:
        return self.params.shape[0]

    @property
    def n_anchors(self) -> int:
        return self.params.shape[0]

    def box(self, i: int) -> Box3D:
        cx, cy, cz, w, l, h, theta = self.params[i]
        return Box3D(cx, cy, cz, w, l, h, theta, class_id=int(self.class_ids[i]))

    def boxes(self) -> list[Box3D]:
        return [self.box(i) for i in range(len(self))]


@dataclass(frozen=True)
class Assignment:
    """Per-anchor labels plus regression and heading targets for positives.

    ``labels[i]`` is the matched class id for positives, LABEL_NEGATIVE or
    LABEL_IGNORE otherwise.  Row k of ``reg_targets`` belongs to anchor
    ``positive_indices[k]`` matched to ``matched_gt[k]``.
    """

    labels: np.ndarray
    positive_indices: np.ndarray
    matched_gt: np.ndarray
    reg_targets: np.ndarray
    dir_targets: np.ndarray

    def __post_init__(self):
        n_pos = self.positive_indices.size
        if self.reg_targets.shape != (n_pos, 7):
            raise ValueError(f"reg_targets shape {self.reg_targets.shape} != "
                             f"({n_pos}, 7)")
        if self.dir_targets.shape != (n_pos,) or self.matched_gt.shape != (n_pos,):
            raise ValueError("per-positive arrays disagree on N_pos")

    @property
    def n_pos(self) -> int:
        return self.positive_indices.size


def generate_anchors(specs, h: int, w: int, roi: Roi3D) -> AnchorGrid:
    """One anchor per class, BEV cell center, and rotation."""
    specs = list(specs)
    if h < 1 or w < 1:
        raise ValueError(f"lattice must be at least 1 x 1, got {h} x {w}")
    if not specs:
        raise ValueError("generate_anchors needs at least one AnchorSpec")
    stride_x = (roi.x_max - roi.x_min) / w
    stride_y = (roi.y_max - roi.y_min) / h
    xs = roi.x_min + (np.arange(w) + 0.5) * stride_x
    ys = roi.y_min + (np.arange(h) + 0.5) * stride_y
    blocks = []
    classes = []
    for spec in specs:
        n_rot = len(spec.rotations)
        block = np.empty((h, w, n_rot, 7))
        block[..., 0] = xs[None, :, None]
        block[..., 1] = ys[:, None, None]
        block[..., 2] = spec.cz
        block[..., 3] = spec.w
        block[..., 4] = spec.l
        block[..., 5] = spec.h
        block[..., 6] = normalize_angle(np.array(spec.rotations))[None, None, :]
        blocks.append(block.reshape(-1, 7))
        classes.append(np.full(h * w * n_rot, spec.class_id, dtype=np.int64))
    return AnchorGrid(params=np.concatenate(blocks, axis=0),
                      class_ids=np.concatenate(classes),
                      h=h, w=w, stride_x=stride_x, stride_y=stride_y)


def encode_box(anchor: Box3D, gt: Box3D) -> np.ndarray:
    """7-field residual of gt relative to anchor.

    Center offsets are normalized by the anchor's BEV diagonal (x, y) or
    height (z); dimensions are log ratios; yaw is sin of the difference.
    """
    diag = math.hypot(anchor.w, anchor.l)
    return np.array([
        (gt.cx - anchor.cx) / diag,
        (gt.cy - anchor.cy) / diag,
        (gt.cz - anchor.cz) / anchor.h,
        math.log(gt.w / anchor.w),
        math.log(gt.l / anchor.l),
        math.log(gt.h / anchor.h),
        math.sin(gt.theta - anchor.theta),
    ])


def decode_box(anchor: Box3D, delta: np.ndarray, dir_bin: int) -> Box3D:
    """Invert encode_box on the principal arcsin branch.

    The sine code cannot tell a heading from its opposite; when the
    decoded heading lands in the other bin than ``dir_bin`` requests,
    half a turn is added.
    """
    delta = np.asarray(delta, dtype=np.float64).reshape(7)
    if abs(delta[6]) > 1:
        raise ValueError(f"sinus residual out of range: {delta[6]}")
    diag = math.hypot(anchor.w, anchor.l)
    theta = anchor.theta + math.asin(delta[6])
    if direction_target(theta, anchor.theta) != dir_bin:
        theta += math.pi
    return Box3D(
        cx=anchor.cx + delta[0] * diag,
        cy=anchor.cy + delta[1] * diag,
        cz=anchor.cz + delta[2] * anchor.h,
        w=anchor.w * math.exp(delta[3]),
        l=anchor.l * math.exp(delta[4]),
        h=anchor.h * math.exp(delta[5]),
        theta=theta,
        class_id=anchor.class_id,
    )


def direction_target(theta_g: float, theta_a: float) -> int:
    """Heading bin: 0 when the yaw difference wraps into [0, pi), else 1."""
    return 0 if (theta_g - theta_a) % (2 * math.pi) < math.pi else 1


def _iou_columns(grid: AnchorGrid, anchor_idx: np.ndarray, gt: Box3D,
                 mode: str) -> np.ndarray:
    """IoU of one GT against a set of anchors, distance-prefiltered."""
    out = np.zeros(anchor_idx.size)
    if anchor_idx.size == 0:
        return out
    p = grid.params[anchor_idx]
    d2 = np.square(p[:, 0] - gt.cx) + np.square(p[:, 1] - gt.cy)
    reach = 0.5 * np.hypot(p[:, 3], p[:, 4]) + 0.5 * math.hypot(gt.w, gt.l)
    iou_fn = iou_bev if mode == "bev" else iou_3d
    for k in np.flatnonzero(d2 <= np.square(reach)):
        out[k] = iou_fn(grid.box(int(anchor_idx[k])), gt)
    return out


def assign_targets(anchors: AnchorGrid, gts, specs, *,
                   iou_mode: str = "bev") -> Assignment:
    """Label every anchor against same-class ground truth.

    Overlap at or above the class match threshold makes an anchor
    positive toward its best GT; at or below the unmatch threshold,
    negative; between the two, ignored.  Each GT additionally forces its
    single best-overlap anchor positive, ties going to the lowest anchor
    index, so no GT goes unrepresented.
    """
    if iou_mode not in ("bev", "3d"):
        raise ValueError(f"iou_mode must be 'bev' or '3d', got {iou_mode!r}")
    gts = list(gts)
    spec_by_class = {s.class_id: s for s in specs}
    n = anchors.n_anchors
    labels = np.full(n, LABEL_NEGATIVE, dtype=np.int64)
    matched = np.full(n, -1, dtype=np.int64)

    by_class: dict[int, list[int]] = {}
    for g, gt in enumerate(gts):
        if gt.class_id in spec_by_class:
            by_class.setdefault(gt.class_id, []).append(g)

    forced: list[tuple[int, int]] = []
    for class_id, gt_ids in by_class.items():
        spec = spec_by_class[class_id]
        anchor_idx = np.flatnonzero(anchors.class_ids == class_id)
        if anchor_idx.size == 0:
            continue
        table = np.stack([_iou_columns(anchors, anchor_idx, gts[g], iou_mode)
                          for g in gt_ids], axis=1)
        best_iou = table.max(axis=1)
        best_gt = table.argmax(axis=1)
        positive = best_iou >= spec.match_thr
        ignore = (best_iou > spec.unmatch_thr) & ~positive
        labels[anchor_idx[positive]] = class_id
        labels[anchor_idx[ignore]] = LABEL_IGNORE
        matched[anchor_idx[positive]] = np.asarray(gt_ids)[best_gt[positive]]
        for j, g in enumerate(gt_ids):
            forced.append((g, int(anchor_idx[table[:, j].argmax()])))

    # Force in GT order so a later GT deterministically wins a contested anchor.
    for g, a in sorted(forced):
        labels[a] = gts[g].class_id
        matched[a] = g

    positive_indices = np.flatnonzero(labels >= 0)
    reg = np.zeros((positive_indices.size, 7))
    dirs = np.zeros(positive_indices.size, dtype=np.int64)
    for k, a in enumerate(positive_indices):
        gt = gts[matched[a]]
        anchor = anchors.box(int(a))
        reg[k] = encode_box(anchor, gt)
        dirs[k] = direction_target(gt.theta, anchor.theta)
    return Assignment(labels=labels, positive_indices=positive_indices,
                      matched_gt=matched[positive_indices],
                      reg_targets=reg, dir_targets=dirs)


def assignment_record(assignment: Assignment) -> dict:
    """JSON-ready dict with run-length-encoded labels."""
    runs = []
    labels = assignment.labels
    i = 0
    while i < labels.size:
        j = i
        while j < labels.size and labels[j] == labels[i]:
            j += 1
        runs.append([int(labels[i]), j - i])
        i = j
    return {
        "n_anchors": int(labels.size),
        "n_pos": assignment.n_pos,
        "labels_rle": runs,
        "positive_indices": assignment.positive_indices.tolist(),
        "matched_gt": assignment.matched_gt.tolist(),
        "reg_targets": [[float(v) for v in row] for row in assignment.reg_targets],
        "dir_targets": assignment.dir_targets.tolist(),
    }
