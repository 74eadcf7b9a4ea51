"""Array-in/array-out entry points over the radar-mrf pipeline.

Training loops and notebooks hand numpy arrays straight to these six
functions instead of shuttling files through the command-line tool.
Every call delegates to the corresponding radar-mrf function, so outputs
are bitwise identical to direct use of that package, input buffers are
never written to, and error messages come from the wrapped code.

Boxes are rows of (cx, cy, cz, w, l, h, theta); regions of interest are
6-tuples (x_min, x_max, y_min, y_max, z_min, z_max).  Column names for
point arrays default to x, y, z, f3, f4, ... unless ``field_names`` says
otherwise.
"""

from __future__ import annotations

import numpy as np

import radar_mrf
from radar_mrf.cloud import FeatureSchema, PointCloud, Roi3D
from radar_mrf.errors import ConfigError
from radar_mrf.evaluation import Detection, EvalConfig, GroundTruth, evaluate
from radar_mrf.geometry import Box3D
from radar_mrf.kde import DensityField, KdeConfig, kde_multiband
from radar_mrf.losses import (LossWeights, loss_bbox, loss_cls, loss_dir,
                              loss_total)
from radar_mrf.pillars import PillarConfig, pillarize
from radar_mrf.targets import AnchorSpec, assign_targets, generate_anchors
from radar_mrf.voxels import VoxelConfig, voxelize

#: The bindings track the wrapped package release for release.
__version__ = radar_mrf.__version__

__all__ = [
    "bind_kde_multiband", "bind_pillarize", "bind_voxelize",
    "bind_assign_targets", "bind_losses", "bind_evaluate",
]

_SPATIAL = ("x", "y", "z")


def _as_cloud(points, field_names) -> PointCloud:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError(f"points must be a 2-D array, got shape {pts.shape}")
    n_cols = pts.shape[1]
    if field_names is None:
        if n_cols < 3:
            raise ValueError("need at least the 3 spatial columns")
        names = _SPATIAL + tuple(f"f{i}" for i in range(3, n_cols))
    else:
        names = tuple(str(name) for name in field_names)
        if len(names) != n_cols:
            raise ValueError(f"field_names has {len(names)} entries for "
                             f"{n_cols} columns")
    return PointCloud(FeatureSchema.from_names(names), pts)


def _as_roi(roi) -> Roi3D:
    vals = tuple(float(v) for v in roi)
    if len(vals) != 6:
        raise ValueError(f"roi needs 6 numbers, got {len(vals)}")
    return Roi3D(*vals)


def _as_boxes(arr, what: str, with_class: bool) -> np.ndarray:
    width = 8 if with_class else 7
    boxes = np.asarray(arr, dtype=np.float64)
    if boxes.ndim != 2 or boxes.shape[1] != width:
        raise ValueError(f"{what} must be (M, {width}), got shape "
                         f"{boxes.shape}")
    return boxes


def bind_kde_multiband(points, bandwidths, *, kernel_dims=_SPATIAL,
                       epsilon=1e-5, exclude_self=True,
                       field_names=None) -> np.ndarray:
    """Normalized multi-bandwidth densities, one column per bandwidth."""
    pc = _as_cloud(points, field_names)
    cfgs = [KdeConfig(radius=float(r), kernel_dims=tuple(kernel_dims),
                      epsilon=float(epsilon), exclude_self=bool(exclude_self))
            for r in bandwidths]
    if not cfgs:
        raise ValueError("bandwidths must not be empty")
    return kde_multiband(pc, cfgs).normalized


def bind_pillarize(points, *, roi, cell_x=0.16, cell_y=0.16, max_points_n=32,
                   seed=0, densities=None, field_names=None) -> dict:
    """Sparse pillar tensor as {"values", "coords", "counts"} arrays.

    ``densities`` optionally appends per-point feature columns (N x B)
    between the raw fields and the positional offsets.
    """
    pc = _as_cloud(points, field_names)
    cfg = PillarConfig(roi=_as_roi(roi), cell_x=float(cell_x),
                       cell_y=float(cell_y), max_points_n=int(max_points_n),
                       seed=int(seed))
    field = None
    if densities is not None:
        cols = np.asarray(densities, dtype=np.float64)
        if cols.ndim != 2:
            raise ValueError(f"densities must be (N, B), got shape "
                             f"{cols.shape}")
        field = DensityField(raw=cols, normalized=cols)
    tensor = pillarize(pc, cfg, densities=field)
    return {"values": tensor.values, "coords": tensor.coords,
            "counts": tensor.counts}


def bind_voxelize(points, density, *, roi, cell=(0.16, 0.16, 0.24),
                  reduce="mean", field_names=None) -> dict:
    """Sparse voxel grid as {"coords", "values", "dims"} arrays."""
    pc = _as_cloud(points, field_names)
    cx, cy, cz = (float(v) for v in cell)
    cfg = VoxelConfig(roi=_as_roi(roi), cell_x=cx, cell_y=cy, cell_z=cz,
                      reduce=str(reduce))
    grid = voxelize(pc, np.asarray(density, dtype=np.float64), cfg)
    return {"coords": grid.coords, "values": grid.values,
            "dims": np.asarray(grid.dims, dtype=np.int64)}


def bind_assign_targets(gt_boxes, *, lattice, roi, anchor_table,
                        rotations=(0.0, np.pi / 2), iou_mode="bev") -> dict:
    """Anchor labels and per-positive regression targets.

    ``gt_boxes`` rows are (cx, cy, cz, w, l, h, theta, class_id);
    ``anchor_table`` rows are (class_id, w, l, h, z_bottom, match_thr,
    unmatch_thr), one per class.
    """
    boxes = _as_boxes(gt_boxes, "gt_boxes", with_class=True)
    h, w = (int(v) for v in lattice)
    specs = [AnchorSpec(class_id=int(row[0]), w=float(row[1]), l=float(row[2]),
                        h=float(row[3]), z_bottom=float(row[4]),
                        rotations=tuple(float(r) for r in rotations),
                        match_thr=float(row[5]), unmatch_thr=float(row[6]))
             for row in np.asarray(anchor_table, dtype=np.float64)]
    grid = generate_anchors(specs, h, w, _as_roi(roi))
    gts = [Box3D(*row[:7], class_id=int(row[7])) for row in boxes]
    assignment = assign_targets(grid, gts, specs, iou_mode=str(iou_mode))
    return {"labels": assignment.labels,
            "positive_indices": assignment.positive_indices,
            "matched_gt": assignment.matched_gt,
            "reg_targets": assignment.reg_targets,
            "dir_targets": assignment.dir_targets,
            "n_pos": assignment.n_pos}


def bind_losses(bbox_pred, bbox_target, cls_probs, true_class, dir_logits,
                dir_targets, *, beta=(2.0, 1.0, 0.2), alpha=0.25,
                gamma=2.0) -> dict:
    """All three loss terms, their weighted total, and the gradients."""
    b1, b2, b3 = (float(v) for v in beta)
    weights = LossWeights(beta1=b1, beta2=b2, beta3=b3, alpha=float(alpha),
                          gamma=float(gamma))
    report = loss_total(
        loss_bbox(np.asarray(bbox_pred, dtype=np.float64),
                  np.asarray(bbox_target, dtype=np.float64)),
        loss_cls(np.asarray(cls_probs, dtype=np.float64),
                 np.asarray(true_class), weights),
        loss_dir(np.asarray(dir_logits, dtype=np.float64),
                 np.asarray(dir_targets)),
        weights)
    return {"l_bbox": report.l_bbox, "l_cls": report.l_cls,
            "l_dir": report.l_dir, "l_total": report.l_total,
            "gradients": dict(report.gradients)}


_EVAL_KEYS = {"class_names", "iou_thresholds", "regions", "recall_positions",
              "max_range_m"}


def bind_evaluate(det_boxes, det_scores, det_classes, det_frames,
                  gt_boxes, gt_classes, gt_frames, config) -> dict:
    """Average-precision report as a plain mapping.

    Boxes are (M, 7) rows; classes are integer indices into
    ``config["class_names"]``; frames are any hashable per-row ids.
    Recognized config keys: class_names, iou_thresholds, regions,
    recall_positions, max_range_m.
    """
    config = dict(config)
    unknown = sorted(set(config) - _EVAL_KEYS)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    try:
        class_names = [str(n) for n in config["class_names"]]
        thresholds = {str(k): float(v)
                      for k, v in config["iou_thresholds"].items()}
    except KeyError as exc:
        raise ConfigError(f"config is missing required key: {exc.args[0]}") \
            from None

    regions = {"all": None}
    if "regions" in config:
        regions = {str(name): None if bounds is None else _as_roi(bounds)
                   for name, bounds in config["regions"].items()}
    cfg = EvalConfig(
        iou_thresholds=thresholds, regions=regions,
        recall_positions=int(config.get("recall_positions", 40)),
        max_range_m=(None if config.get("max_range_m") is None
                     else float(config["max_range_m"])))

    def name_of(idx) -> str:
        i = int(idx)
        if not 0 <= i < len(class_names):
            raise ValueError(f"class index {i} outside "
                             f"[0, {len(class_names)})")
        return class_names[i]

    d_boxes = _as_boxes(det_boxes, "det_boxes", with_class=False)
    g_boxes = _as_boxes(gt_boxes, "gt_boxes", with_class=False)
    scores = np.asarray(det_scores, dtype=np.float64).reshape(-1)
    if scores.size != d_boxes.shape[0]:
        raise ValueError(f"{scores.size} scores for {d_boxes.shape[0]} "
                         f"detection boxes")
    dets = [Detection(str(frame), name_of(cls), float(score), Box3D(*row))
            for row, score, cls, frame
            in zip(d_boxes, scores, det_classes, det_frames)]
    gts = [GroundTruth(str(frame), name_of(cls), Box3D(*row))
           for row, cls, frame in zip(g_boxes, gt_classes, gt_frames)]
    return evaluate(dets, gts, cfg).to_dict()
