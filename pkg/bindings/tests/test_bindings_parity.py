"""Bitwise parity between the bound entry points and direct library calls."""
from __future__ import annotations

import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

bindings = pytest.importorskip("radar_mrf_bindings")

import radar_mrf
from radar_mrf import io
from radar_mrf.cli import main as cli_main
from radar_mrf.cloud import FeatureSchema, PointCloud
from radar_mrf.evaluation import Detection, EvalConfig, GroundTruth, evaluate
from radar_mrf.geometry import Box3D
from radar_mrf.kde import KdeConfig, kde_multiband
from radar_mrf.losses import (LossWeights, loss_bbox, loss_cls, loss_dir,
                              loss_total)
from radar_mrf.pillars import pillarize
from radar_mrf.profiles import get_profile
from radar_mrf.targets import assign_targets, generate_anchors
from radar_mrf.voxels import voxelize

VOD = get_profile("vod")
ROI6 = (VOD.roi.x_min, VOD.roi.x_max, VOD.roi.y_min, VOD.roi.y_max,
        VOD.roi.z_min, VOD.roi.z_max)


def seeded_points(seed: int, n: int = 300) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.column_stack([
        rng.uniform(0.0, 50.0, n), rng.uniform(-25.0, 25.0, n),
        rng.uniform(-3.0, 2.0, n), rng.normal(5.0, 2.0, n),
        rng.normal(0.0, 3.0, n), rng.normal(0.0, 3.0, n), np.zeros(n)])


def vod_cloud(points: np.ndarray) -> PointCloud:
    return PointCloud(VOD.schema, points)


class TestDensityParity:
    def test_twenty_seeded_clouds_bitwise(self):
        for seed in range(20):
            points = seeded_points(seed)
            before = points.copy()
            bound = bindings.bind_kde_multiband(
                points, VOD.bandwidths, kernel_dims=VOD.kernel_dims,
                epsilon=VOD.epsilon, field_names=VOD.schema.names)
            direct = kde_multiband(vod_cloud(points), VOD.kde_configs())
            assert np.array_equal(bound, direct.normalized)
            assert np.array_equal(points, before)

    def test_matches_cli_density_export(self, tmp_path):
        stem = str(tmp_path / "scene")
        assert cli_main(["synth", stem, "--objects", "4",
                         "--points", "30,60", "--clutter", "900,950",
                         "--seed", "13"]) == 0
        assert cli_main(["encode", stem + ".bin"]) == 0
        schema = io.read_schema(stem + ".schema.json")
        pc = io.load_pointcloud(stem + ".bin", schema)
        assert pc.n_points >= 1000
        bound = bindings.bind_kde_multiband(
            pc.values, VOD.bandwidths, kernel_dims=VOD.kernel_dims,
            epsilon=VOD.epsilon, field_names=schema.names)
        file_bytes = Path(stem + ".density.bin").read_bytes()
        assert bound.astype(np.float32).tobytes() == file_bytes

    def test_default_field_names(self):
        rng = np.random.default_rng(3)
        points = rng.uniform(-5.0, 5.0, (50, 4))
        bound = bindings.bind_kde_multiband(points, (1.0,))
        schema = FeatureSchema.from_names(("x", "y", "z", "f3"))
        direct = kde_multiband(PointCloud(schema, points),
                               [KdeConfig(radius=1.0)])
        assert np.array_equal(bound, direct.normalized)


class TestPillarParity:
    def test_tensor_arrays_bitwise(self):
        for seed in (0, 7):
            points = seeded_points(seed)
            before = points.copy()
            field = kde_multiband(vod_cloud(points), VOD.kde_configs())
            bound = bindings.bind_pillarize(
                points, roi=ROI6, cell_x=VOD.pillar_cell,
                cell_y=VOD.pillar_cell, max_points_n=VOD.max_points_n,
                seed=4, densities=field.normalized,
                field_names=VOD.schema.names)
            direct = pillarize(vod_cloud(points), VOD.pillar_config(seed=4),
                               densities=field)
            assert np.array_equal(bound["values"], direct.values)
            assert np.array_equal(bound["coords"], direct.coords)
            assert np.array_equal(bound["counts"], direct.counts)
            assert np.array_equal(points, before)

    def test_without_density_columns(self):
        points = seeded_points(1)
        bound = bindings.bind_pillarize(points, roi=ROI6,
                                        field_names=VOD.schema.names)
        direct = pillarize(vod_cloud(points), VOD.pillar_config(seed=0))
        assert np.array_equal(bound["values"], direct.values)


class TestVoxelParity:
    def test_grid_arrays_bitwise(self):
        for seed in (2, 9):
            points = seeded_points(seed)
            field = kde_multiband(vod_cloud(points), VOD.kde_configs())
            density = field.normalized
            before_p, before_d = points.copy(), density.copy()
            bound = bindings.bind_voxelize(
                points, density, roi=ROI6, cell=VOD.voxel_cell,
                reduce="max", field_names=VOD.schema.names)
            direct = voxelize(vod_cloud(points), density,
                              VOD.voxel_config("max"))
            assert np.array_equal(bound["coords"], direct.coords)
            assert np.array_equal(bound["values"], direct.values)
            assert tuple(bound["dims"]) == tuple(direct.dims)
            assert np.array_equal(points, before_p)
            assert np.array_equal(density, before_d)


class TestAssignParity:
    ANCHOR_TABLE = [(a.class_id, a.w, a.l, a.h, a.z_bottom, a.match_thr,
                     a.unmatch_thr) for a in VOD.anchors]

    def test_assignment_arrays_bitwise(self):
        rng = np.random.default_rng(5)
        gt_rows = np.array([
            [10.0, 2.0, -1.0, 1.6, 3.9, 1.56, 0.3, 0],
            [20.0, -5.0, -0.2, 0.6, 0.8, 1.73, 1.2, 1],
            [30.0, 8.0, -0.2, 0.6, 1.76, 1.73, -0.8, 2],
        ])
        gt_rows[:, 0] += rng.uniform(-1, 1, 3)
        before = gt_rows.copy()
        bound = bindings.bind_assign_targets(
            gt_rows, lattice=(16, 16), roi=ROI6,
            anchor_table=self.ANCHOR_TABLE)
        grid = generate_anchors(VOD.anchors, 16, 16, VOD.roi)
        gts = [Box3D(*row[:7], class_id=int(row[7])) for row in gt_rows]
        direct = assign_targets(grid, gts, VOD.anchors)
        assert np.array_equal(bound["labels"], direct.labels)
        assert np.array_equal(bound["positive_indices"],
                              direct.positive_indices)
        assert np.array_equal(bound["matched_gt"], direct.matched_gt)
        assert np.array_equal(bound["reg_targets"], direct.reg_targets)
        assert np.array_equal(bound["dir_targets"], direct.dir_targets)
        assert bound["n_pos"] == direct.n_pos
        assert np.array_equal(gt_rows, before)

    def test_volumetric_mode_forwarded(self):
        gt_rows = np.array([[10.0, 2.0, -1.0, 1.6, 3.9, 1.56, 0.0, 0]])
        bound = bindings.bind_assign_targets(
            gt_rows, lattice=(16, 16), roi=ROI6,
            anchor_table=self.ANCHOR_TABLE, iou_mode="3d")
        grid = generate_anchors(VOD.anchors, 16, 16, VOD.roi)
        direct = assign_targets(grid, [Box3D(*gt_rows[0, :7], class_id=0)],
                                VOD.anchors, iou_mode="3d")
        assert np.array_equal(bound["labels"], direct.labels)


class TestLossParity:
    def _instance(self, seed: int):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 9))
        target = rng.normal(0.0, 2.0, (n, 7))
        pred = target + rng.normal(0.0, 2.0, (n, 7))
        probs = rng.uniform(0.05, 0.95, (n, 3))
        true_class = rng.integers(0, 3, n)
        logits = rng.normal(0.0, 3.0, (n, 2))
        bins = rng.integers(0, 2, n)
        return pred, target, probs, true_class, logits, bins

    def test_twenty_seeded_instances_bitwise(self):
        weights = LossWeights()
        for seed in range(20):
            pred, target, probs, true_class, logits, bins = \
                self._instance(seed)
            copies = [a.copy() for a in
                      (pred, target, probs, true_class, logits, bins)]
            bound = bindings.bind_losses(pred, target, probs, true_class,
                                         logits, bins)
            direct = loss_total(loss_bbox(pred, target),
                                loss_cls(probs, true_class, weights),
                                loss_dir(logits, bins), weights)
            assert bound["l_bbox"] == direct.l_bbox
            assert bound["l_cls"] == direct.l_cls
            assert bound["l_dir"] == direct.l_dir
            assert bound["l_total"] == direct.l_total
            for key in ("bbox", "cls", "dir"):
                assert np.array_equal(bound["gradients"][key],
                                      direct.gradients[key])
            for arr, copy in zip(
                    (pred, target, probs, true_class, logits, bins), copies):
                assert np.array_equal(arr, copy)

    def test_identical_prediction_zeroes_bbox_term(self):
        target = np.ones((3, 7))
        out = bindings.bind_losses(target, target, np.full((3, 3), 0.5),
                                   np.zeros(3, dtype=np.int64),
                                   np.zeros((3, 2)),
                                   np.zeros(3, dtype=np.int64))
        assert out["l_bbox"] == 0.0
        assert np.array_equal(out["gradients"]["bbox"], np.zeros((3, 7)))

    def test_custom_weights_forwarded(self):
        pred, target, probs, true_class, logits, bins = self._instance(33)
        bound = bindings.bind_losses(pred, target, probs, true_class, logits,
                                     bins, beta=(1.0, 3.0, 0.5), alpha=0.4,
                                     gamma=1.0)
        weights = LossWeights(beta1=1.0, beta2=3.0, beta3=0.5, alpha=0.4,
                              gamma=1.0)
        direct = loss_total(loss_bbox(pred, target),
                            loss_cls(probs, true_class, weights),
                            loss_dir(logits, bins), weights)
        assert bound["l_total"] == direct.l_total


class TestEvaluateParity:
    CONFIG = {"class_names": list(VOD.class_names),
              "iou_thresholds": dict(VOD.eval_thresholds)}

    def _arrays(self, seed: int):
        rng = np.random.default_rng(seed)
        n = 6
        boxes = np.column_stack([
            rng.uniform(5.0, 45.0, n), rng.uniform(-20.0, 20.0, n),
            rng.uniform(-1.0, 0.0, n), rng.uniform(0.5, 2.0, n),
            rng.uniform(1.0, 5.0, n), rng.uniform(1.0, 2.0, n),
            rng.uniform(-3.0, 3.0, n)])
        classes = rng.integers(0, 3, n)
        frames = np.zeros(n, dtype=np.int64)
        scores = rng.uniform(0.1, 1.0, n)
        return boxes, classes, frames, scores

    def test_report_matches_direct_evaluate(self):
        boxes, classes, frames, scores = self._arrays(11)
        det_boxes = boxes + 0.05  # slightly off-target detections
        bound = bindings.bind_evaluate(det_boxes, scores, classes, frames,
                                       boxes, classes, frames, self.CONFIG)
        names = self.CONFIG["class_names"]
        dets = [Detection(str(f), names[int(c)], float(s), Box3D(*row))
                for row, s, c, f in zip(det_boxes, scores, classes, frames)]
        gts = [GroundTruth(str(f), names[int(c)], Box3D(*row))
               for row, c, f in zip(boxes, classes, frames)]
        direct = evaluate(dets, gts, EvalConfig(
            iou_thresholds=self.CONFIG["iou_thresholds"]))
        assert bound == direct.to_dict()

    def test_perfect_detections_score_one(self):
        boxes, classes, frames, scores = self._arrays(12)
        out = bindings.bind_evaluate(boxes, scores, classes, frames,
                                     boxes, classes, frames, self.CONFIG)
        seen = {self.CONFIG["class_names"][int(c)] for c in classes}
        for name in seen:
            assert out["regions"]["all"]["classes"][name]["ap_3d"] == 1.0
            assert out["regions"]["all"]["classes"][name]["ap_bev"] == 1.0

    def test_region_and_recall_settings_forwarded(self):
        boxes, classes, frames, scores = self._arrays(14)
        config = dict(self.CONFIG)
        config["regions"] = {"all": None, "near": (0, 25.6, -25.6, 25.6, -3, 2)}
        config["recall_positions"] = 11
        out = bindings.bind_evaluate(boxes, scores, classes, frames,
                                     boxes, classes, frames, config)
        assert set(out["regions"]) == {"all", "near"}


class TestPackaging:
    def test_version_mirrors_wrapped_package(self):
        assert bindings.__version__ == radar_mrf.__version__

    def test_wrapped_package_never_imports_bindings(self):
        code = ("import sys; import radar_mrf, radar_mrf.cli; "
                "sys.exit(1 if 'radar_mrf_bindings' in sys.modules else 0)")
        proc = subprocess.run([sys.executable, "-c", code],
                              capture_output=True)
        assert proc.returncode == 0, proc.stderr.decode()
