"""Non-overlapping spherical and cubic window partitions.

Spherical windows bin points by (range, polar angle from +z, azimuth) with the
radial width growing by a fixed expansion factor per pyramid level; cubic
windows are axis-aligned boxes of constant size at every level.  All bin
edges use floor semantics: a point exactly on an edge belongs to the upper
bin, except the polar angle 180 degrees which clamps into the last bin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InvalidParameterError, ShapeError

WINDOW_KINDS = ("spherical", "cubic")


@dataclass(frozen=True)
class WindowSpec:
    radial_size: float = 10.0
    theta_size: float = 1.8     # degrees, polar angle bin
    phi_size: float = 1.8       # degrees, azimuth bin
    cubic_size: float = 10.0
    expansion: float = 1.5      # radial growth factor per level

    def __post_init__(self):
        for name in ("radial_size", "theta_size", "phi_size", "cubic_size", "expansion"):
            value = getattr(self, name)
            if not value > 0:
                raise InvalidParameterError(f"{name} must be > 0, got {value}")
        if self.theta_size > 180.0:
            raise InvalidParameterError(f"theta_size must be <= 180, got {self.theta_size}")
        ratio = 360.0 / self.phi_size
        if abs(ratio - round(ratio)) > 1e-9:
            raise InvalidParameterError(
                f"phi_size must divide 360 evenly, got {self.phi_size}")

    @property
    def theta_bins(self) -> int:
        return int(math.ceil(180.0 / self.theta_size - 1e-9))

    @property
    def phi_bins(self) -> int:
        return int(round(360.0 / self.phi_size))


def radial_width(spec: WindowSpec, level: int) -> float:
    """Radial bin width at a pyramid level: radial_size * expansion**level."""
    if level < 0:
        raise InvalidParameterError(f"level must be >= 0, got {level}")
    return spec.radial_size * spec.expansion ** level


class WindowIndex(NamedTuple):
    kind: str
    level: int
    bins: tuple[int, int, int]


def spherical_index(point, spec: WindowSpec, level: int = 0) -> WindowIndex:
    """Spherical window of a single point at the given level.

    The origin maps to bins (0, 0, 0).  Azimuth is wrapped into [0, 360) and
    the polar angle is clipped into [0, 180] before binning.
    """
    x, y, z = (float(point[0]), float(point[1]), float(point[2]))
    width = radial_width(spec, level)
    r = math.sqrt(x * x + y * y + z * z)
    if r == 0.0:
        return WindowIndex("spherical", level, (0, 0, 0))
    cos_theta = min(1.0, max(-1.0, z / r))
    theta = math.degrees(math.acos(cos_theta))
    phi = math.degrees(math.atan2(y, x))
    if phi < 0.0:
        phi += 360.0
    if phi >= 360.0:
        phi = 0.0
    r_bin = int(math.floor(r / width))
    theta_bin = min(int(math.floor(theta / spec.theta_size)), spec.theta_bins - 1)
    phi_bin = min(int(math.floor(phi / spec.phi_size)), spec.phi_bins - 1)
    return WindowIndex("spherical", level, (r_bin, theta_bin, phi_bin))


def cubic_index(point, spec: WindowSpec, level: int = 0) -> WindowIndex:
    """Cubic window of a single point; the grid does not change with level."""
    if level < 0:
        raise InvalidParameterError(f"level must be >= 0, got {level}")
    bins = tuple(int(math.floor(float(c) / spec.cubic_size)) for c in point[:3])
    return WindowIndex("cubic", level, bins)


def partition(points, spec: WindowSpec, level: int, kind: str) -> dict:
    """Group point ordinals by window index.

    Returns a dict mapping WindowIndex -> int64 array of row ordinals, keyed
    in first-occurrence order.  Every ordinal appears in exactly one group.
    """
    if kind not in WINDOW_KINDS:
        raise InvalidParameterError(f"kind must be one of {WINDOW_KINDS}, got {kind!r}")
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ShapeError(f"points must have shape (N, 3), got {pts.shape}")
    index_fn = spherical_index if kind == "spherical" else cubic_index
    groups: dict[WindowIndex, list[int]] = {}
    for row in range(pts.shape[0]):
        groups.setdefault(index_fn(pts[row], spec, level), []).append(row)
    return {key: np.asarray(rows, dtype=np.int64) for key, rows in groups.items()}
