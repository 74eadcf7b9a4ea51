"""Multi-representation preprocessing for 4D radar point clouds.

Non-learned building blocks of a radar detection pipeline: per-point
multi-bandwidth density features, pillar and voxel encodings of a scan,
anchor target assignment with box residual codes, the detection loss
stack with analytic gradients, rotated-box average-precision evaluation,
a seeded synthetic scene generator, and dataset profiles tying the
hyper-parameters together.
"""

from .cloud import FeatureSchema, PointCloud, Roi3D, filter_roi
from .errors import ConfigError, InputFormatError, RadarMrfError
from .estimators import KdeDensityTransformer
from .evaluation import (APReport, Detection, EvalConfig, GroundTruth,
                         average_precision, evaluate, format_report,
                         match_detections)
from .geometry import Box3D, iou_3d, iou_bev, iou_matrix, normalize_angle, \
    points_in_box
from .kde import (DensityField, GridIndex, KdeConfig, build_grid_index,
                  default_kernel_dims, kde_bruteforce, kde_densities,
                  kde_multiband, multiband_configs, normalize_densities)
from .losses import (LossReport, LossWeights, finite_difference, loss_bbox,
                     loss_cls, loss_dir, loss_total, smooth_l1)
from .pillars import (PillarConfig, PillarTensor, PseudoImage, canvas_shape,
                      concat_channels, pillar_feature_names, pillarize,
                      scatter_to_canvas)
from .profiles import PipelineProfile, get_profile, list_profiles
from .synth import CLUTTER, ObjectSpec, SceneSpec, gen_scene, make_scene_spec
from .targets import (LABEL_IGNORE, LABEL_NEGATIVE, AnchorGrid, AnchorSpec,
                      Assignment, assign_targets, assignment_record,
                      decode_box, direction_target, encode_box,
                      generate_anchors)
from .voxels import SparseVoxelGrid, VoxelConfig, bev_max_project, to_dense, \
    voxelize

__version__ = "0.1.0"

__all__ = [
    "APReport", "AnchorGrid", "AnchorSpec", "Assignment", "Box3D", "CLUTTER",
    "ConfigError", "DensityField", "Detection", "EvalConfig", "FeatureSchema",
    "GridIndex", "GroundTruth", "InputFormatError", "KdeConfig",
    "KdeDensityTransformer", "LABEL_IGNORE", "LABEL_NEGATIVE", "LossReport",
    "LossWeights", "ObjectSpec", "PillarConfig", "PillarTensor",
    "PipelineProfile", "PointCloud", "PseudoImage", "RadarMrfError", "Roi3D",
    "SceneSpec", "SparseVoxelGrid", "VoxelConfig", "assign_targets",
    "assignment_record", "average_precision", "bev_max_project",
    "build_grid_index", "canvas_shape", "concat_channels", "decode_box",
    "default_kernel_dims", "direction_target", "encode_box", "evaluate",
    "filter_roi", "finite_difference", "format_report", "gen_scene",
    "generate_anchors", "get_profile", "iou_3d", "iou_bev", "iou_matrix",
    "kde_bruteforce", "kde_densities", "kde_multiband", "list_profiles",
    "loss_bbox", "loss_cls", "loss_dir", "loss_total", "make_scene_spec",
    "match_detections", "multiband_configs", "normalize_angle",
    "normalize_densities", "pillar_feature_names", "pillarize",
    "points_in_box", "scatter_to_canvas", "smooth_l1", "to_dense", "voxelize",
]
