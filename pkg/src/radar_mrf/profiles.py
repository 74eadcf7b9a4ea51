"""Named dataset profiles bundling every pipeline hyper-parameter.

A profile fixes the scan schema, ROI, KDE bandwidths, pillar/voxel cell
sizes, anchor tables, and evaluation thresholds for one dataset family,
and hands out ready-made per-module configs.  The ``vod`` and ``tj4d``
profiles carry the published values; ``custom`` starts from ``vod`` and
expects overrides.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .cloud import FeatureSchema, Roi3D
from .errors import ConfigError
from .evaluation import EvalConfig
from .kde import KdeConfig
from .pillars import PillarConfig, canvas_shape
from .targets import AnchorSpec
from .voxels import VoxelConfig

_HALF_PI = math.pi / 2


@dataclass(frozen=True)
class PipelineProfile:
    """One dataset family's full set of preprocessing parameters."""

    name: str
    schema: FeatureSchema
    roi: Roi3D
    bandwidths: tuple[float, ...]
    kernel_dims: tuple[str, ...]
    class_names: tuple[str, ...]
    anchors: tuple[AnchorSpec, ...]
    eval_thresholds: dict
    epsilon: float = 1e-5
    pillar_cell: float = 0.16
    max_points_n: int = 32
    voxel_cell: tuple[float, float, float] = (0.16, 0.16, 0.24)
    max_range_m: float | None = None
    channel_meta: dict = field(default_factory=dict)

    def kde_configs(self) -> list[KdeConfig]:
        return [KdeConfig(radius=r, kernel_dims=self.kernel_dims,
                          epsilon=self.epsilon) for r in self.bandwidths]

    def pillar_config(self, seed: int = 0) -> PillarConfig:
        return PillarConfig(roi=self.roi, cell_x=self.pillar_cell,
                            cell_y=self.pillar_cell,
                            max_points_n=self.max_points_n, seed=seed)

    def voxel_config(self, reduce: str = "mean") -> VoxelConfig:
        cx, cy, cz = self.voxel_cell
        return VoxelConfig(roi=self.roi, cell_x=cx, cell_y=cy, cell_z=cz,
                           reduce=reduce)

    def eval_config(self, recall_positions: int = 40,
                    regions: dict | None = None,
                    require_points_in_gt: bool = False) -> EvalConfig:
        return EvalConfig(iou_thresholds=dict(self.eval_thresholds),
                          regions={"all": None} if regions is None else regions,
                          recall_positions=recall_positions,
                          max_range_m=self.max_range_m,
                          require_points_in_gt=require_points_in_gt)

    @property
    def canvas(self) -> tuple[int, int]:
        return canvas_shape(self.roi, self.pillar_cell, self.pillar_cell)

    def class_id(self, name: str) -> int:
        try:
            return self.class_names.index(name)
        except ValueError:
            raise ConfigError(f"unknown class {name!r} for profile "
                              f"{self.name!r}") from None


def _vod_profile() -> PipelineProfile:
    car, ped, cyc = 0, 1, 2
    return PipelineProfile(
        name="vod",
        schema=FeatureSchema.from_names(("x", "y", "z", "rcs", "v_r",
                                         "v_rc", "t")),
        roi=Roi3D(0.0, 51.2, -25.6, 25.6, -3.0, 2.0),
        bandwidths=(1.5, 2.0),
        kernel_dims=("x", "y", "z", "v_rc"),
        class_names=("Car", "Pedestrian", "Cyclist"),
        anchors=(
            AnchorSpec(car, w=1.6, l=3.9, h=1.56, z_bottom=-1.78,
                       rotations=(0.0, _HALF_PI),
                       match_thr=0.6, unmatch_thr=0.45),
            AnchorSpec(ped, w=0.6, l=0.8, h=1.73, z_bottom=-0.6,
                       rotations=(0.0, _HALF_PI),
                       match_thr=0.5, unmatch_thr=0.35),
            AnchorSpec(cyc, w=0.6, l=1.76, h=1.73, z_bottom=-0.6,
                       rotations=(0.0, _HALF_PI),
                       match_thr=0.5, unmatch_thr=0.35),
        ),
        eval_thresholds={"Car": 0.5, "Pedestrian": 0.25, "Cyclist": 0.25},
        channel_meta={"c1": 64, "c2": 1, "c2_1": 1, "c2_2": 1, "cf": 66,
                      "cm": None},
    )


def _tj4d_profile() -> PipelineProfile:
    car, ped, cyc, truck = 0, 1, 2, 3
    return PipelineProfile(
        name="tj4d",
        schema=FeatureSchema.from_names(("x", "y", "z", "v_r", "snr")),
        roi=Roi3D(0.0, 69.12, -39.68, 39.68, -4.0, 2.0),
        bandwidths=(0.6, 1.0),
        kernel_dims=("x", "y", "z", "v_r"),
        class_names=("Car", "Pedestrian", "Cyclist", "Truck"),
        anchors=(
            AnchorSpec(car, w=1.84, l=4.56, h=1.70, z_bottom=-1.363,
                       rotations=(0.0, _HALF_PI),
                       match_thr=0.6, unmatch_thr=0.45),
            AnchorSpec(ped, w=0.6, l=0.8, h=1.69, z_bottom=-1.163,
                       rotations=(0.0, _HALF_PI),
                       match_thr=0.5, unmatch_thr=0.35),
            AnchorSpec(cyc, w=0.78, l=1.77, h=1.60, z_bottom=-1.353,
                       rotations=(0.0, _HALF_PI),
                       match_thr=0.5, unmatch_thr=0.35),
            AnchorSpec(truck, w=2.66, l=10.76, h=3.47, z_bottom=-1.403,
                       rotations=(0.0, _HALF_PI),
                       match_thr=0.6, unmatch_thr=0.45),
        ),
        eval_thresholds={"Car": 0.5, "Pedestrian": 0.25, "Cyclist": 0.25,
                         "Truck": 0.5},
        max_range_m=70.0,
        channel_meta={"c1": 64, "c2": 1, "c2_1": 1, "c2_2": 1, "cf": 66,
                      "cm": None},
    )


_BUILDERS = {"vod": _vod_profile, "tj4d": _tj4d_profile}


def list_profiles() -> tuple[str, ...]:
    return tuple(sorted(_BUILDERS)) + ("custom",)


def get_profile(name: str) -> PipelineProfile:
    """A fresh profile instance; ``custom`` clones ``vod`` for overriding."""
    if name == "custom":
        return replace(_vod_profile(), name="custom")
    try:
        return _BUILDERS[name]()
    except KeyError:
        raise ConfigError(
            f"unknown profile {name!r}; choose from {', '.join(list_profiles())}"
        ) from None
