"""Pillar binning, per-point feature augmentation, and BEV canvas assembly.

Points are binned into vertical x-y grid cells ("pillars").  Each kept
point's feature row is its raw scan features, optionally followed by
per-band density columns, then six geometric decorations: the offsets
from the pillar's point centroid (x_c, y_c, z_c) and from the pillar's
geometric center (x_p, y_p, with z_p measured from the ROI z midpoint).
Overfull pillars are subsampled uniformly at random with a seeded,
platform-stable shuffle; short pillars are zero-padded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud, Roi3D
from .errors import ConfigError
from .kde import DensityField
from .validation import check_array, check_positive

_AUGMENT_NAMES = ("x_c", "y_c", "z_c", "x_p", "y_p", "z_p")


@dataclass(frozen=True)
class PillarConfig:
    roi: Roi3D
    cell_x: float = 0.16
    cell_y: float = 0.16
    max_points_n: int = 32
    seed: int = 0

    def __post_init__(self):
        check_positive(self.cell_x, "cell_x")
        check_positive(self.cell_y, "cell_y")
        if self.max_points_n < 1:
            raise ValueError(f"max_points_n must be >= 1, got {self.max_points_n}")

    @property
    def canvas_shape(self) -> tuple[int, int]:
        return canvas_shape(self.roi, self.cell_x, self.cell_y)


@dataclass(frozen=True)
class PillarTensor:
    """Sparse (D, P, N) tensor plus each pillar's canvas position and fill."""

    values: np.ndarray
    coords: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        d, p, n = self.values.shape
        if self.coords.shape != (p, 2):
            raise ValueError(f"coords shape {self.coords.shape} != ({p}, 2)")
        if self.counts.shape != (p,):
            raise ValueError(f"counts shape {self.counts.shape} != ({p},)")
        if p and not ((self.counts >= 1) & (self.counts <= n)).all():
            raise ValueError("pillar counts must lie in [1, N]")

    @property
    def n_pillars(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class PseudoImage:
    """Dense BEV feature map with meters-per-cell metadata."""

    channels: np.ndarray
    cell_x: float | None = None
    cell_y: float | None = None

    def __post_init__(self):
        if self.channels.ndim != 3:
            raise ValueError(f"channels must be C x H x W, got shape "
                             f"{self.channels.shape}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.channels.shape


def canvas_shape(roi: Roi3D, cell_x: float, cell_y: float) -> tuple[int, int]:
    """(H, W) = ROI extent / cell size; both divisions must be exact."""
    h = _exact_cells(roi.y_max - roi.y_min, cell_y, "y")
    w = _exact_cells(roi.x_max - roi.x_min, cell_x, "x")
    return h, w


def _exact_cells(extent: float, cell: float, axis: str) -> int:
    n = extent / cell
    n_int = round(n)
    if n_int < 1 or abs(n - n_int) > 1e-6 * max(1.0, abs(n)):
        raise ConfigError(
            f"{axis}-extent {extent} is not an integer multiple of the cell "
            f"size {cell}")
    return n_int


def pillar_feature_names(schema, n_density_bands: int = 0) -> tuple[str, ...]:
    """Column names of the augmented feature rows, in tensor order."""
    density = tuple(f"density_{i}" for i in range(n_density_bands))
    return schema.names + density + _AUGMENT_NAMES


def _subsample_prefix(rng: np.random.Generator, size: int, keep: int) -> np.ndarray:
    """First `keep` positions of a Fisher-Yates shuffle of range(size).

    Draw-by-draw construction keeps the result identical across numpy
    builds regardless of how many positions are requested.
    """
    draws = rng.integers(0, np.arange(size, size - keep, -1))
    arr = np.arange(size)
    for t, d in enumerate(draws):
        j = t + int(d)
        arr[t], arr[j] = arr[j], arr[t]
    return arr[:keep]


def pillarize(pc: PointCloud, cfg: PillarConfig,
              densities: DensityField | None = None) -> PillarTensor:
    """Bin a ROI-filtered scan into the sparse pillar tensor.

    Pillars come out in (row, col) ascending order; rows within a pillar
    preserve scan order.  Identical inputs and seed give a byte-identical
    tensor.
    """
    h, w = cfg.canvas_shape
    n_cols = len(pc.schema)
    extra = 0
    if densities is not None:
        if densities.normalized.shape[0] != pc.n_points:
            raise ValueError(
                f"densities cover {densities.normalized.shape[0]} points, "
                f"scan has {pc.n_points}")
        extra = densities.normalized.shape[1]
    depth = n_cols + extra + 6
    cap = cfg.max_points_n
    if pc.n_points == 0:
        return PillarTensor(values=np.zeros((depth, 0, cap)),
                            coords=np.zeros((0, 2), dtype=np.int64),
                            counts=np.zeros(0, dtype=np.int64))
    xyz = pc.xyz
    inside = cfg.roi.contains(xyz)
    if not inside.all():
        raise ValueError(
            f"{int((~inside).sum())} points fall outside the ROI; apply "
            f"filter_roi before pillarizing")

    cols = np.floor((xyz[:, 0] - cfg.roi.x_min) / cfg.cell_x).astype(np.int64)
    rows = np.floor((xyz[:, 1] - cfg.roi.y_min) / cfg.cell_y).astype(np.int64)
    np.clip(cols, 0, w - 1, out=cols)
    np.clip(rows, 0, h - 1, out=rows)
    keys = rows * w + cols
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    starts = np.flatnonzero(np.r_[True, sorted_keys[1:] != sorted_keys[:-1]])
    lens = np.diff(np.r_[starts, sorted_keys.size])
    pillar_keys = sorted_keys[starts]
    n_pillars = starts.size

    if (lens > cap).any():
        keep_mask = np.ones(sorted_keys.size, dtype=bool)
        rng = np.random.default_rng(cfg.seed)
        for p in np.flatnonzero(lens > cap):
            s = starts[p]
            kept_rel = np.sort(_subsample_prefix(rng, int(lens[p]), cap))
            keep_mask[s:s + lens[p]] = False
            keep_mask[s + kept_rel] = True
        kept = order[keep_mask]
        lens_kept = np.minimum(lens, cap)
    else:
        kept = order
        lens_kept = lens

    pillar_of = np.repeat(np.arange(n_pillars), lens_kept)
    offsets = np.cumsum(lens_kept) - lens_kept
    slot = np.arange(kept.size) - np.repeat(offsets, lens_kept)

    feat = np.empty((kept.size, depth))
    feat[:, :n_cols] = pc.values[kept]
    if extra:
        feat[:, n_cols:n_cols + extra] = densities.normalized[kept]
    kx, ky, kz = xyz[kept, 0], xyz[kept, 1], xyz[kept, 2]
    centroid = np.empty((n_pillars, 3))
    for axis, vals in enumerate((kx, ky, kz)):
        centroid[:, axis] = np.bincount(pillar_of, weights=vals,
                                        minlength=n_pillars) / lens_kept
    base = n_cols + extra
    feat[:, base + 0] = kx - centroid[pillar_of, 0]
    feat[:, base + 1] = ky - centroid[pillar_of, 1]
    feat[:, base + 2] = kz - centroid[pillar_of, 2]
    p_cols = pillar_keys % w
    p_rows = pillar_keys // w
    feat[:, base + 3] = kx - (cfg.roi.x_min + (p_cols[pillar_of] + 0.5) * cfg.cell_x)
    feat[:, base + 4] = ky - (cfg.roi.y_min + (p_rows[pillar_of] + 0.5) * cfg.cell_y)
    feat[:, base + 5] = kz - cfg.roi.z_mid

    values = np.zeros((depth, n_pillars, cap))
    values[:, pillar_of, slot] = feat.T
    coords = np.stack([p_rows, p_cols], axis=1)
    return PillarTensor(values=values, coords=coords, counts=lens_kept)


def scatter_to_canvas(features: np.ndarray, coords: np.ndarray, h: int, w: int,
                      *, cell_x: float | None = None,
                      cell_y: float | None = None) -> PseudoImage:
    """Place per-pillar feature columns onto a zeroed (C, H, W) canvas."""
    features = check_array(features, "features", ndim=2)
    coords = np.asarray(coords)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ValueError(f"coords must be P x 2, got shape {coords.shape}")
    if coords.shape[0] != features.shape[1]:
        raise ValueError(f"{features.shape[1]} feature columns vs "
                         f"{coords.shape[0]} coords")
    coords = coords.astype(np.int64)
    if coords.size:
        rows, cols = coords[:, 0], coords[:, 1]
        if rows.min() < 0 or rows.max() >= h or cols.min() < 0 or cols.max() >= w:
            raise ValueError(f"coords outside the {h} x {w} canvas")
        flat = rows * w + cols
        if np.unique(flat).size != flat.size:
            raise ValueError("duplicate canvas coordinates")
    canvas = np.zeros((features.shape[0], h, w))
    if coords.size:
        canvas[:, coords[:, 0], coords[:, 1]] = features
    return PseudoImage(channels=canvas, cell_x=cell_x, cell_y=cell_y)


def concat_channels(maps) -> PseudoImage:
    """Stack pseudo-images along the channel axis, in argument order."""
    maps = list(maps)
    if not maps:
        raise ValueError("concat_channels needs at least one map")
    first = maps[0]
    for m in maps[1:]:
        if m.channels.shape[1:] != first.channels.shape[1:]:
            raise ValueError(
                f"canvas shapes differ: {m.channels.shape[1:]} vs "
                f"{first.channels.shape[1:]}")
        if (m.cell_x, m.cell_y) != (first.cell_x, first.cell_y):
            raise ValueError("cell-size metadata differs between maps")
    return PseudoImage(
        channels=np.concatenate([m.channels for m in maps], axis=0),
        cell_x=first.cell_x, cell_y=first.cell_y)
