"""Sparse 3D voxelization of density-annotated point clouds.

Points are binned into a (D, H, W) grid anchored at the ROI minimum
corner.  The x/y extents must tile exactly; the z extent may not, in
which case the top row of voxels is truncated at z_max and D rounds up.
Each occupied voxel stores a reduction (mean or max) of its members'
density values; empty voxels are simply absent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud, Roi3D
from .pillars import PseudoImage, _exact_cells
from .validation import check_positive

_REDUCERS = ("mean", "max")


@dataclass(frozen=True)
class VoxelConfig:
    roi: Roi3D
    cell_x: float = 0.16
    cell_y: float = 0.16
    cell_z: float = 0.24
    reduce: str = "mean"

    def __post_init__(self):
        check_positive(self.cell_x, "cell_x")
        check_positive(self.cell_y, "cell_y")
        check_positive(self.cell_z, "cell_z")
        if self.reduce not in _REDUCERS:
            raise ValueError(f"reduce must be one of {_REDUCERS}, "
                             f"got {self.reduce!r}")

    @property
    def grid_dims(self) -> tuple[int, int, int]:
        """(D, H, W); depth rounds up so a partial top row is kept."""
        d = math.ceil((self.roi.z_max - self.roi.z_min) / self.cell_z - 1e-9)
        h = _exact_cells(self.roi.y_max - self.roi.y_min, self.cell_y, "y")
        w = _exact_cells(self.roi.x_max - self.roi.x_min, self.cell_x, "x")
        return d, h, w


@dataclass(frozen=True)
class SparseVoxelGrid:
    """COO voxel grid: (d, h, w) coords, per-voxel value vectors, dims."""

    coords: np.ndarray
    values: np.ndarray
    dims: tuple[int, int, int]

    def __post_init__(self):
        if self.coords.ndim != 2 or self.coords.shape[1] != 3:
            raise ValueError(f"coords must be K x 3, got {self.coords.shape}")
        if self.values.ndim != 2 or self.values.shape[0] != self.coords.shape[0]:
            raise ValueError(
                f"values shape {self.values.shape} does not pair with "
                f"{self.coords.shape[0]} coords")
        if self.coords.size:
            lo = self.coords.min(axis=0)
            hi = self.coords.max(axis=0)
            if (lo < 0).any() or (hi >= np.array(self.dims)).any():
                raise ValueError(f"coords outside grid dims {self.dims}")

    @property
    def n_voxels(self) -> int:
        return self.coords.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]


def voxelize(pc: PointCloud, density: np.ndarray, cfg: VoxelConfig) -> SparseVoxelGrid:
    """Reduce per-point density values into occupied voxels.

    ``density`` holds one value (or one row of channel values) per scan
    point.  Output coords come out sorted by (d, h, w).
    """
    density = np.asarray(density, dtype=np.float64)
    if density.ndim == 1:
        density = density[:, None]
    if density.ndim != 2 or density.shape[0] != pc.n_points:
        raise ValueError(
            f"density covers {density.shape[0]} points, scan has {pc.n_points}")
    dims = cfg.grid_dims
    if pc.n_points == 0:
        return SparseVoxelGrid(coords=np.zeros((0, 3), dtype=np.int64),
                               values=np.zeros((0, density.shape[1])), dims=dims)
    xyz = pc.xyz
    inside = cfg.roi.contains(xyz)
    if not inside.all():
        raise ValueError(
            f"{int((~inside).sum())} points fall outside the ROI; apply "
            f"filter_roi before voxelizing")
    d_n, h_n, w_n = dims
    mins = cfg.roi.mins
    cells = np.array([cfg.cell_x, cfg.cell_y, cfg.cell_z])
    idx = np.floor((xyz - mins) / cells).astype(np.int64)
    np.clip(idx, 0, np.array([w_n, h_n, d_n]) - 1, out=idx)
    # idx columns are (x->w, y->h, z->d); store as (d, h, w).
    keys = (idx[:, 2] * h_n + idx[:, 1]) * w_n + idx[:, 0]
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    starts = np.flatnonzero(np.r_[True, sorted_keys[1:] != sorted_keys[:-1]])
    lens = np.diff(np.r_[starts, sorted_keys.size])
    voxel_keys = sorted_keys[starts]
    k = starts.size
    vals_sorted = density[order]
    reduced = np.empty((k, density.shape[1]))
    if cfg.reduce == "mean":
        group = np.repeat(np.arange(k), lens)
        for c in range(density.shape[1]):
            reduced[:, c] = np.bincount(group, weights=vals_sorted[:, c],
                                        minlength=k) / lens
    else:
        for c in range(density.shape[1]):
            reduced[:, c] = np.maximum.reduceat(vals_sorted[:, c], starts)
    coords = np.stack([voxel_keys // (h_n * w_n),
                       (voxel_keys // w_n) % h_n,
                       voxel_keys % w_n], axis=1)
    return SparseVoxelGrid(coords=coords, values=reduced, dims=dims)


def to_dense(grid: SparseVoxelGrid) -> np.ndarray:
    """Expand to a (C, D, H, W) tensor, zeros where no voxel exists."""
    dense = np.zeros((grid.n_channels,) + grid.dims)
    if grid.n_voxels:
        d, h, w = grid.coords.T
        dense[:, d, h, w] = grid.values.T
    return dense


def bev_max_project(grid: SparseVoxelGrid, *, cell_x: float | None = None,
                    cell_y: float | None = None) -> PseudoImage:
    """Collapse depth by max into a (C, H, W) map; unoccupied cells are 0.

    The max runs over existing voxels only, so negative values survive;
    the zero fill applies to BEV cells with no voxel at any depth.
    """
    _, h_n, w_n = grid.dims
    out = np.zeros((grid.n_channels, h_n, w_n))
    if grid.n_voxels:
        h, w = grid.coords[:, 1], grid.coords[:, 2]
        occupied = np.zeros((h_n, w_n), dtype=bool)
        occupied[h, w] = True
        acc = np.full((grid.n_channels, h_n, w_n), -np.inf)
        for c in range(grid.n_channels):
            np.maximum.at(acc[c], (h, w), grid.values[:, c])
        out[:, occupied] = acc[:, occupied]
    return PseudoImage(channels=out, cell_x=cell_x, cell_y=cell_y)
