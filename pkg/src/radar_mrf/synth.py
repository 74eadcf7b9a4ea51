"""Seeded synthetic radar scenes: clustered objects plus uniform clutter.

Object points are Gaussian around each box center, truncated to the box
extents; clutter is uniform over the ROI.  Everything flows from one
seeded generator in a fixed draw order, so a spec reproduces its scene
bit for bit.  Per-point provenance (generating object index, or -1 for
clutter) supports density-separation and matching tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cloud import FeatureSchema, PointCloud, Roi3D
from .geometry import Box3D

CLUTTER = -1

_VOD_FIELDS = ("x", "y", "z", "rcs", "v_r", "v_rc", "t")

#: Plausible (w, l, h) sampling ranges per object kind.
_DIM_RANGES = {
    "Car": ((1.5, 2.0), (3.5, 4.6), (1.4, 1.8)),
    "Pedestrian": ((0.5, 0.8), (0.5, 0.9), (1.5, 1.9)),
    "Cyclist": ((0.5, 0.9), (1.5, 2.0), (1.5, 1.9)),
    "Truck": ((2.2, 2.9), (8.0, 12.0), (2.8, 3.8)),
}


@dataclass(frozen=True)
class ObjectSpec:
    """One clustered object: box dimension ranges and point statistics."""

    class_name: str
    class_id: int
    w_range: tuple[float, float]
    l_range: tuple[float, float]
    h_range: tuple[float, float]
    n_points: tuple[int, int]
    cluster_std: float = 0.35
    doppler_mean: float = 0.0
    doppler_std: float = 1.0

    def __post_init__(self):
        if self.cluster_std <= 0:
            raise ValueError("cluster_std must be > 0")
        if self.doppler_std <= 0:
            raise ValueError("doppler_std must be > 0")
        if self.n_points[0] < 0 or self.n_points[1] < self.n_points[0]:
            raise ValueError(f"bad point-count range {self.n_points}")


@dataclass(frozen=True)
class SceneSpec:
    roi: Roi3D
    objects: tuple[ObjectSpec, ...] = ()
    clutter_count: tuple[int, int] = (0, 0)
    seed: int = 0
    schema: FeatureSchema = field(
        default_factory=lambda: FeatureSchema.from_names(_VOD_FIELDS))

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        lo, hi = self.clutter_count
        if lo < 0 or hi < lo:
            raise ValueError(f"bad clutter range {self.clutter_count}")


def _draw_in(rng: np.random.Generator, lo: float, hi: float) -> float:
    return float(rng.uniform(lo, hi)) if hi > lo else float(lo)


def _truncated_normal(rng: np.random.Generator, n: int, std: np.ndarray,
                      half: np.ndarray) -> np.ndarray:
    """n x 3 Gaussian draws with each axis confined to [-half, half].

    Out-of-range rows are redrawn up to 1000 times, then clamped.
    """
    out = rng.normal(0.0, 1.0, (n, 3)) * std
    for _ in range(1000):
        bad = np.flatnonzero((np.abs(out) > half).any(axis=1))
        if bad.size == 0:
            return out
        out[bad] = rng.normal(0.0, 1.0, (bad.size, 3)) * std
    return np.clip(out, -half, half)


def _feature_rows(rng: np.random.Generator, schema: FeatureSchema,
                  xyz: np.ndarray, doppler: np.ndarray) -> np.ndarray:
    """Fill non-spatial columns: Doppler fields share the object draw."""
    rows = np.zeros((xyz.shape[0], len(schema)))
    rows[:, :3] = xyz
    for c, name in enumerate(schema.names[3:], start=3):
        if name in ("v_r", "v_rc"):
            rows[:, c] = doppler
        elif name in ("rcs", "snr"):
            rows[:, c] = rng.normal(5.0, 2.0, xyz.shape[0])
        # remaining fields (scan index etc.) stay zero
    return rows


def gen_scene(spec: SceneSpec) -> tuple[PointCloud, list[Box3D], np.ndarray]:
    """Build (cloud, ground-truth boxes, per-point provenance)."""
    rng = np.random.default_rng(spec.seed)
    roi = spec.roi
    blocks = []
    provenance = []
    boxes = []
    for obj_idx, obj in enumerate(spec.objects):
        w = _draw_in(rng, *obj.w_range)
        l = _draw_in(rng, *obj.l_range)
        h = _draw_in(rng, *obj.h_range)
        reach = 0.5 * math.hypot(w, l)
        cx = _draw_in(rng, min(roi.x_min + reach, roi.x_max),
                      max(roi.x_max - reach, roi.x_min))
        cy = _draw_in(rng, min(roi.y_min + reach, roi.y_max),
                      max(roi.y_max - reach, roi.y_min))
        cz = _draw_in(rng, min(roi.z_min + h / 2, roi.z_max),
                      max(roi.z_max - h / 2, roi.z_min))
        theta = float(rng.uniform(-math.pi, math.pi))
        box = Box3D(cx, cy, cz, w, l, h, theta, class_id=obj.class_id)
        boxes.append(box)
        n = int(rng.integers(obj.n_points[0], obj.n_points[1] + 1))
        # Tiny inward margin keeps rotated points numerically inside the box.
        half = np.array([l / 2, w / 2, h / 2]) * (1.0 - 1e-9)
        std = np.minimum(np.full(3, obj.cluster_std), half)
        local = _truncated_normal(rng, n, std, half)
        cos_t, sin_t = math.cos(theta), math.sin(theta)
        xyz = np.empty((n, 3))
        xyz[:, 0] = cx + local[:, 0] * cos_t - local[:, 1] * sin_t
        xyz[:, 1] = cy + local[:, 0] * sin_t + local[:, 1] * cos_t
        xyz[:, 2] = cz + local[:, 2]
        doppler = rng.normal(obj.doppler_mean, obj.doppler_std, n)
        blocks.append(_feature_rows(rng, spec.schema, xyz, doppler))
        provenance.append(np.full(n, obj_idx, dtype=np.int64))

    lo, hi = spec.clutter_count
    m = int(rng.integers(lo, hi + 1)) if hi > lo else lo
    if m:
        xyz = rng.uniform(roi.mins, roi.maxs, (m, 3))
        doppler = rng.normal(0.0, 2.0, m)
        blocks.append(_feature_rows(rng, spec.schema, xyz, doppler))
        provenance.append(np.full(m, CLUTTER, dtype=np.int64))

    if blocks:
        values = np.concatenate(blocks, axis=0)
        labels = np.concatenate(provenance)
    else:
        values = np.zeros((0, len(spec.schema)))
        labels = np.zeros(0, dtype=np.int64)
    return PointCloud(schema=spec.schema, values=values), boxes, labels


def make_scene_spec(roi: Roi3D, *, n_objects: int = 3,
                    points_range: tuple[int, int] = (20, 60),
                    clutter_range: tuple[int, int] = (50, 120),
                    cluster_std: float = 0.35, seed: int = 0,
                    schema: FeatureSchema | None = None,
                    class_ids: dict | None = None) -> SceneSpec:
    """Convenience spec: objects cycle through the known kinds."""
    if class_ids is None:
        class_ids = {"Car": 0, "Pedestrian": 1, "Cyclist": 2, "Truck": 3}
    kinds = [k for k in _DIM_RANGES if k in class_ids]
    objects = []
    for i in range(n_objects):
        kind = kinds[i % len(kinds)]
        wr, lr, hr = _DIM_RANGES[kind]
        objects.append(ObjectSpec(
            class_name=kind, class_id=class_ids[kind],
            w_range=wr, l_range=lr, h_range=hr,
            n_points=points_range, cluster_std=cluster_std))
    kwargs = {} if schema is None else {"schema": schema}
    return SceneSpec(roi=roi, objects=tuple(objects),
                     clutter_count=clutter_range, seed=seed, **kwargs)
