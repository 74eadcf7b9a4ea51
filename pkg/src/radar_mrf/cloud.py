"""Point-cloud domain types and region-of-interest filtering."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .validation import check_array

#: Units used by the stock dataset schemas.
_DEFAULT_UNITS = {
    "x": "m", "y": "m", "z": "m",
    "rcs": "dB", "v_r": "m/s", "v_rc": "m/s",
    "time_id": "scan", "snr": "dB",
}


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered per-point feature layout.

    The first three entries are always the spatial coordinates x, y, z;
    any number of named extras (RCS, Doppler velocities, SNR, scan id)
    may follow.
    """

    entries: tuple[tuple[str, str], ...]

    def __post_init__(self):
        names = [name for name, _ in self.entries]
        if len(names) < 3 or names[:3] != ["x", "y", "z"]:
            raise ValueError(
                "schema must start with spatial fields x, y, z; got "
                f"{names[:3]}")
        if len(set(names)) != len(names):
            raise ValueError(f"schema field names must be unique: {names}")

    @classmethod
    def from_names(cls, names, units=None) -> "FeatureSchema":
        units = units or {}
        entries = tuple(
            (n, units.get(n, _DEFAULT_UNITS.get(n, ""))) for n in names)
        return cls(entries)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.entries)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValueError(
                f"unknown field {name!r}; schema has {list(self.names)}"
            ) from None

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class PointCloud:
    """A single radar scan: an N x C matrix of per-point features."""

    schema: FeatureSchema
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = check_array(self.values, "point values", shape=(None, len(self.schema)))
        object.__setattr__(self, "values", values)

    @property
    def n_points(self) -> int:
        return self.values.shape[0]

    @property
    def xyz(self) -> np.ndarray:
        return self.values[:, :3]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.schema.index(name)]

    @classmethod
    def empty(cls, schema: FeatureSchema) -> "PointCloud":
        return cls(schema, np.empty((0, len(schema)), dtype=np.float64))


@dataclass(frozen=True)
class Roi3D:
    """Axis-aligned region of interest.  Membership is half-open [min, max)."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    z_min: float
    z_max: float

    def __post_init__(self):
        for axis in "xyz":
            lo, hi = getattr(self, f"{axis}_min"), getattr(self, f"{axis}_max")
            if not lo < hi:
                raise ValueError(f"roi {axis}_min must be < {axis}_max "
                                 f"({lo} vs {hi})")

    @property
    def mins(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min, self.z_min])

    @property
    def maxs(self) -> np.ndarray:
        return np.array([self.x_max, self.y_max, self.z_max])

    @property
    def extents(self) -> np.ndarray:
        return self.maxs - self.mins

    @property
    def z_mid(self) -> float:
        return 0.5 * (self.z_min + self.z_max)

    def contains(self, xyz: np.ndarray) -> np.ndarray:
        """Boolean mask of points inside the half-open box."""
        xyz = np.asarray(xyz, dtype=np.float64)
        return ((xyz >= self.mins) & (xyz < self.maxs)).all(axis=-1)


def filter_roi(pc: PointCloud, roi: Roi3D) -> PointCloud:
    """Keep exactly the points whose x, y, z fall inside ``roi``.

    Membership is half-open per axis so boundary points land in exactly
    one grid cell downstream.  Point order is preserved.
    """
    if pc.n_points == 0:
        return pc
    mask = roi.contains(pc.xyz)
    return PointCloud(pc.schema, pc.values[mask])
