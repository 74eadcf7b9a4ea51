"""Average-precision evaluation for rotated 3D detections.

Detections are greedily matched to same-frame, same-class ground truth
in descending score order; a detection becomes a true positive when its
best still-unmatched ground-truth overlap clears the class threshold.
Precision is interpolated (max precision at recall >= r) and sampled at
equally spaced recall positions.  Classes with no ground truth have no
defined AP and are excluded from the mean.

Reports cover each configured region filter with both volumetric and
bird's-eye-view overlap, mirroring the two AP families.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cloud import PointCloud, Roi3D
from .errors import ConfigError
from .geometry import Box3D, iou_3d, iou_bev, points_in_box


@dataclass(frozen=True)
class Detection:
    frame: str
    class_name: str
    score: float
    box: Box3D

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError(f"detection score must be finite, got {self.score}")


@dataclass(frozen=True)
class GroundTruth:
    frame: str
    class_name: str
    box: Box3D


@dataclass(frozen=True)
class EvalConfig:
    """Per-class IoU thresholds plus region and recall settings.

    ``regions`` maps a region name to a bounding Roi3D, or None for no
    spatial filter.  A region present with value None under the name
    "corridor" is treated as unset and must be configured before use.
    """

    iou_thresholds: dict
    regions: dict = field(default_factory=lambda: {"all": None})
    recall_positions: int = 40
    max_range_m: float | None = None
    require_points_in_gt: bool = False

    def __post_init__(self):
        if not self.iou_thresholds:
            raise ConfigError("iou_thresholds must name at least one class")
        for name, thr in self.iou_thresholds.items():
            if not 0.0 < thr <= 1.0:
                raise ConfigError(
                    f"IoU threshold for {name!r} must lie in (0, 1], got {thr}")
        if self.recall_positions < 2:
            raise ConfigError(
                f"recall_positions must be >= 2, got {self.recall_positions}")
        if self.max_range_m is not None and self.max_range_m <= 0:
            raise ConfigError(f"max_range_m must be > 0, got {self.max_range_m}")


@dataclass(frozen=True)
class APReport:
    """AP per region x class x overlap kind, plus the per-region means.

    ``per_class[region][class]`` is a dict with "ap_3d" and "ap_bev"
    entries (None when the class has no ground truth in the region);
    ``maps[region]`` carries "map_3d" and "map_bev".
    """

    per_class: dict
    maps: dict

    def to_dict(self) -> dict:
        return {"regions": {
            region: {"classes": dict(classes), **self.maps[region]}
            for region, classes in self.per_class.items()}}


def match_detections(dets, gts, iou_fn, thr: float):
    """Greedy score-descending matching within (frame, class) groups.

    Returns (tp_flags, scores, n_gt) with flags and scores sorted by
    descending score (stable for ties).  Each ground truth is consumed
    by at most one detection; overlap ties go to the lowest GT index.
    """
    dets = list(dets)
    gts = list(gts)
    pools: dict[tuple[str, str], list[list]] = {}
    for g in gts:
        pools.setdefault((g.frame, g.class_name), []).append([g.box, False])
    scores = np.array([d.score for d in dets], dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    flags = np.zeros(len(dets), dtype=bool)
    for rank, i in enumerate(order):
        det = dets[i]
        pool = pools.get((det.frame, det.class_name), ())
        best_iou = 0.0
        best = None
        for entry in pool:
            if entry[1]:
                continue
            iou = iou_fn(det.box, entry[0])
            if iou > best_iou:
                best_iou = iou
                best = entry
        if best is not None and best_iou >= thr:
            flags[rank] = True
            best[1] = True
    return flags, scores[order], len(gts)


def average_precision(flags: np.ndarray, scores: np.ndarray, n_gt: int,
                      recall_positions: int = 40) -> float | None:
    """Mean interpolated precision over equally spaced recall samples.

    None when no ground truth exists (the AP is undefined, not zero).
    """
    if n_gt < 0:
        raise ValueError(f"n_gt must be >= 0, got {n_gt}")
    if n_gt == 0:
        return None
    flags = np.asarray(flags, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    flags = flags[order]
    if flags.size == 0:
        return 0.0
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    recall = tp / n_gt
    precision = tp / (tp + fp)
    best_from = np.maximum.accumulate(precision[::-1])[::-1]
    samples = np.linspace(0.0, 1.0, recall_positions)
    idx = np.searchsorted(recall, samples, side="left")
    values = np.where(idx < flags.size, best_from[np.minimum(idx, flags.size - 1)], 0.0)
    return float(values.mean())


def _in_region(box: Box3D, region: Roi3D | None, max_range_m: float | None) -> bool:
    if max_range_m is not None and math.hypot(box.cx, box.cy) > max_range_m:
        return False
    if region is None:
        return True
    center = np.array([[box.cx, box.cy, box.cz]])
    return bool(region.contains(center)[0])


def _gt_has_points(gt: GroundTruth, clouds) -> bool:
    pc: PointCloud | None = clouds.get(gt.frame)
    if pc is None or pc.n_points == 0:
        return False
    return bool(points_in_box(pc.xyz, gt.box).any())


def evaluate(dets, gts, cfg: EvalConfig, *, clouds=None) -> APReport:
    """Full region x class x overlap-kind AP lattice.

    ``clouds`` (frame -> PointCloud) is only needed when
    ``cfg.require_points_in_gt`` asks to drop ground-truth boxes that
    contain no radar points.
    """
    dets = list(dets)
    gts = list(gts)
    present = {g.class_name for g in gts} | {d.class_name for d in dets}
    missing = sorted(present - set(cfg.iou_thresholds))
    if missing:
        raise ConfigError(
            f"no IoU threshold configured for class(es): {', '.join(missing)}")
    if cfg.require_points_in_gt:
        if clouds is None:
            raise ConfigError(
                "require_points_in_gt needs per-frame point clouds")
        gts = [g for g in gts if _gt_has_points(g, clouds)]

    per_class: dict = {}
    maps: dict = {}
    for region_name, region in cfg.regions.items():
        if region_name == "corridor" and region is None:
            raise ConfigError(
                "corridor region requested but its bounds are not set")
        r_dets = [d for d in dets if _in_region(d.box, region, cfg.max_range_m)]
        r_gts = [g for g in gts if _in_region(g.box, region, cfg.max_range_m)]
        classes: dict = {}
        for class_name in sorted(cfg.iou_thresholds):
            thr = cfg.iou_thresholds[class_name]
            c_dets = [d for d in r_dets if d.class_name == class_name]
            c_gts = [g for g in r_gts if g.class_name == class_name]
            entry = {}
            for kind, iou_fn in (("ap_3d", iou_3d), ("ap_bev", iou_bev)):
                flags, scores, n_gt = match_detections(c_dets, c_gts, iou_fn, thr)
                entry[kind] = average_precision(flags, scores, n_gt,
                                                cfg.recall_positions)
            classes[class_name] = entry
        per_class[region_name] = classes
        maps[region_name] = {
            "map_3d": _mean_ap(classes, "ap_3d"),
            "map_bev": _mean_ap(classes, "ap_bev"),
        }
    return APReport(per_class=per_class, maps=maps)


def _mean_ap(classes: dict, kind: str) -> float | None:
    defined = [v[kind] for v in classes.values() if v[kind] is not None]
    return float(np.mean(defined)) if defined else None


def format_report(report: APReport) -> str:
    """Fixed-width text table, one block per region."""
    lines = []
    for region, classes in report.per_class.items():
        lines.append(f"region: {region}")
        lines.append(f"  {'class':<12} {'AP_3D':>8} {'AP_BEV':>8}")
        for name, entry in classes.items():
            lines.append(f"  {name:<12} {_fmt(entry['ap_3d']):>8} "
                         f"{_fmt(entry['ap_bev']):>8}")
        m = report.maps[region]
        lines.append(f"  {'mAP':<12} {_fmt(m['map_3d']):>8} "
                     f"{_fmt(m['map_bev']):>8}")
    return "\n".join(lines)


def _fmt(value: float | None) -> str:
    return "-" if value is None else f"{value:.4f}"
