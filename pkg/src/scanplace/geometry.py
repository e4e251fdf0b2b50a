"""Point cloud containers, rigid transforms, synthetic scans, and dataset files.

Coordinates are right-handed with z up.  Clouds produced by the synthetic
sensors live in the sensor frame; manifest poses map sensor frames into a
common world frame.
"""

from __future__ import annotations

import functools
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    DatasetIOError,
    EmptyScanError,
    InvalidParameterError,
    InvalidPoseError,
    ShapeError,
)

# Registered sensor tags; the index of a tag is its code in binary scan files.
SENSOR_TAGS = ("wide-spinning", "narrow-solid-state", "rosette")

SCAN_MAGIC = b"HLKS"
SCAN_VERSION = 1

SCAN_PATTERNS = ("ring", "raster", "rosette")


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ShapeError(f"points must have shape (N, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidParameterError("points contain non-finite values")
    return arr


@dataclass(frozen=True)
class PointCloud:
    """An (N, 3) float64 cloud plus scan metadata.  Immutable after construction."""

    points: np.ndarray
    sensor_tag: str = SENSOR_TAGS[0]
    timestamp: float = 0.0
    scan_id: str = ""

    def __post_init__(self):
        arr = _as_points(self.points).copy()
        arr.setflags(write=False)
        object.__setattr__(self, "points", arr)
        object.__setattr__(self, "timestamp", float(self.timestamp))

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    def with_points(self, points) -> "PointCloud":
        return replace(self, points=points)


@dataclass(frozen=True)
class Pose:
    """Rigid transform: p_world = rotation @ p + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64).copy()
        tra = np.asarray(self.translation, dtype=np.float64).reshape(-1).copy()
        if rot.shape != (3, 3):
            raise ShapeError(f"rotation must be (3, 3), got {rot.shape}")
        if tra.shape != (3,):
            raise ShapeError(f"translation must be (3,), got {tra.shape}")
        if not np.all(np.isfinite(rot)) or not np.all(np.isfinite(tra)):
            raise InvalidPoseError("pose contains non-finite values")
        if not np.allclose(rot.T @ rot, np.eye(3), atol=1e-9):
            raise InvalidPoseError("rotation is not orthonormal within 1e-9")
        if abs(float(np.linalg.det(rot)) - 1.0) > 1e-9:
            raise InvalidPoseError("rotation determinant is not +1 within 1e-9")
        rot.setflags(write=False)
        tra.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tra)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_yaw(yaw_rad: float, translation=(0.0, 0.0, 0.0)) -> "Pose":
        c, s = math.cos(yaw_rad), math.sin(yaw_rad)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return Pose(rot, np.asarray(translation, dtype=np.float64))

    def compose(self, other: "Pose") -> "Pose":
        """self after other: (self.compose(other))(p) == self(other(p))."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = _as_points(points)
        return pts @ self.rotation.T + self.translation

    def inverse(self) -> "Pose":
        return Pose(self.rotation.T, -(self.rotation.T @ self.translation))


def transform_cloud(cloud: PointCloud, pose: Pose) -> PointCloud:
    """Apply a rigid transform; metadata and point order are preserved."""
    return cloud.with_points(pose.apply(cloud.points))


def voxel_keys(points: np.ndarray, voxel_size: float) -> np.ndarray:
    """Integer voxel index per point: floor(coordinate / voxel_size) per axis."""
    if voxel_size <= 0:
        raise InvalidParameterError(f"voxel_size must be > 0, got {voxel_size}")
    return np.floor(_as_points(points) / voxel_size).astype(np.int64)


def voxel_downsample(points: np.ndarray, voxel_size: float) -> np.ndarray:
    """Replace each occupied voxel by the centroid of its points.

    Output rows are ordered by voxel key (lexicographic), so the result is
    independent of the input point order.
    """
    pts = _as_points(points)
    if pts.shape[0] == 0:
        return pts.copy()
    keys = voxel_keys(pts, voxel_size)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    counts = np.bincount(inverse, minlength=uniq.shape[0]).astype(np.float64)
    sums = np.zeros((uniq.shape[0], 3))
    np.add.at(sums, inverse, pts)
    return sums / counts[:, None]


def voxel_downsample_cloud(cloud: PointCloud, voxel_size: float) -> PointCloud:
    return cloud.with_points(voxel_downsample(cloud.points, voxel_size))


def preprocess_scan(cloud: PointCloud, max_range: float = 100.0,
                    point_budget: int = 8192, seed: int = 0) -> PointCloud:
    """Range-crop, resample to an exact budget, and scale into [-1, 1].

    Points with norm > max_range are dropped (boundary points kept).  The
    survivors are randomly downsampled, or upsampled by repetition, to exactly
    point_budget points, then all coordinates are divided by max_range.
    """
    if max_range <= 0:
        raise InvalidParameterError(f"max_range must be > 0, got {max_range}")
    if point_budget <= 0:
        raise InvalidParameterError(f"point_budget must be > 0, got {point_budget}")
    pts = cloud.points
    keep = np.linalg.norm(pts, axis=1) <= max_range
    pts = pts[keep]
    n = pts.shape[0]
    if n == 0:
        raise EmptyScanError(f"scan {cloud.scan_id!r} has no points within range {max_range}")
    rng = np.random.default_rng(seed)
    if n > point_budget:
        idx = rng.choice(n, size=point_budget, replace=False)
    elif n < point_budget:
        # keep every original point, then top up with seeded repeats
        reps = point_budget // n
        extra = point_budget - reps * n
        idx = np.concatenate([np.tile(np.arange(n), reps),
                              rng.choice(n, size=extra, replace=False)])
    else:
        idx = np.arange(n)
    return cloud.with_points(pts[idx] / max_range)


@dataclass(frozen=True)
class SensorProfile:
    """Synthetic sensor description: range, field of view, budget, pattern."""

    tag: str
    max_range: float = 100.0
    horizontal_fov: float = 360.0   # degrees
    vertical_fov: float = 30.0      # degrees, symmetric about the horizon
    point_budget: int = 2048
    pattern: str = "ring"

    def __post_init__(self):
        if self.max_range <= 0:
            raise InvalidParameterError(f"max_range must be > 0, got {self.max_range}")
        if not 0 < self.horizontal_fov <= 360:
            raise InvalidParameterError(f"horizontal_fov must be in (0, 360], got {self.horizontal_fov}")
        if not 0 < self.vertical_fov < 180:
            raise InvalidParameterError(f"vertical_fov must be in (0, 180), got {self.vertical_fov}")
        if self.point_budget <= 0:
            raise InvalidParameterError(f"point_budget must be > 0, got {self.point_budget}")
        if self.pattern not in SCAN_PATTERNS:
            raise InvalidParameterError(f"unknown pattern {self.pattern!r}, expected one of {SCAN_PATTERNS}")


DEFAULT_PROFILES = {
    "wide-spinning": SensorProfile("wide-spinning", max_range=100.0,
                                   horizontal_fov=360.0, vertical_fov=30.0,
                                   point_budget=2048, pattern="ring"),
    "narrow-solid-state": SensorProfile("narrow-solid-state", max_range=100.0,
                                        horizontal_fov=70.0, vertical_fov=25.0,
                                        point_budget=2048, pattern="raster"),
    "rosette": SensorProfile("rosette", max_range=100.0,
                             horizontal_fov=70.0, vertical_fov=70.0,
                             point_budget=2048, pattern="rosette"),
}


def _dirs_from_angles(az_deg: np.ndarray, el_deg: np.ndarray) -> np.ndarray:
    az = np.radians(az_deg)
    el = np.radians(el_deg)
    ce = np.cos(el)
    return np.stack([ce * np.cos(az), ce * np.sin(az), np.sin(el)], axis=1)


def ray_directions(profile: SensorProfile) -> np.ndarray:
    """Unit ray directions in the sensor frame, deterministic per profile."""
    budget = profile.point_budget
    h, v = profile.horizontal_fov, profile.vertical_fov
    if profile.pattern == "ring":
        rings = max(8, int(round(math.sqrt(budget / 16.0))))
        per_ring = max(1, budget // rings)
        el = np.linspace(-v / 2.0, v / 2.0, rings)
        az = np.arange(per_ring) * (h / per_ring) - h / 2.0
        az_g, el_g = np.meshgrid(az, el)
        return _dirs_from_angles(az_g.ravel(), el_g.ravel())
    if profile.pattern == "raster":
        # grid matched to the FOV aspect ratio, inset by half a step
        ny = max(4, int(round(math.sqrt(budget * v / h))))
        nx = max(4, budget // ny)
        az = (np.arange(nx) + 0.5) * (h / nx) - h / 2.0
        el = (np.arange(ny) + 0.5) * (v / ny) - v / 2.0
        az_g, el_g = np.meshgrid(az, el)
        return _dirs_from_angles(az_g.ravel(), el_g.ravel())
    # rosette: a Lissajous sweep filling the FOV
    t = np.arange(budget) / float(budget)
    az = (h / 2.0) * np.sin(2.0 * math.pi * 13.0 * t)
    el = (v / 2.0) * np.cos(2.0 * math.pi * 17.0 * t)
    return _dirs_from_angles(az, el)


@functools.lru_cache(maxsize=64)
def _scene_primitives(scene_seed: int):
    """Procedural scene around the origin: ground plane, boxes, spheres."""
    rng = np.random.default_rng(scene_seed)
    n_box = int(rng.integers(10, 17))
    centers = rng.uniform(-45.0, 45.0, size=(n_box, 2))
    widths = rng.uniform(3.0, 14.0, size=(n_box, 2))
    heights = rng.uniform(2.0, 12.0, size=n_box)
    lo = np.column_stack([centers - widths / 2.0, np.zeros(n_box)])
    hi = np.column_stack([centers + widths / 2.0, heights])
    n_sph = int(rng.integers(8, 21))
    sph_xy = rng.uniform(-45.0, 45.0, size=(n_sph, 2))
    sph_z = rng.uniform(0.5, 3.0, size=n_sph)
    sph_c = np.column_stack([sph_xy, sph_z])
    sph_r = rng.uniform(0.4, 1.6, size=n_sph)
    lo.setflags(write=False)
    hi.setflags(write=False)
    sph_c.setflags(write=False)
    sph_r.setflags(write=False)
    return lo, hi, sph_c, sph_r


def _raycast(origin: np.ndarray, dirs: np.ndarray, scene_seed: int,
             max_range: float) -> np.ndarray:
    """First-hit distances against the scene; inf where a ray misses."""
    lo, hi, sph_c, sph_r = _scene_primitives(scene_seed)
    n = dirs.shape[0]
    t_best = np.full(n, np.inf)
    eps = 1e-6

    # ground plane z = 0
    dz = dirs[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -origin[2] / dz
    ok = (dz < -1e-12) & (t > eps)
    t_best[ok] = np.minimum(t_best[ok], t[ok])

    # axis-aligned boxes via slab test; 0 * inf NaNs are skipped by nanmax/nanmin
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        for b in range(lo.shape[0]):
            t0 = (lo[b] - origin) * inv
            t1 = (hi[b] - origin) * inv
            tn = np.nanmax(np.minimum(t0, t1), axis=1)
            tf = np.nanmin(np.maximum(t0, t1), axis=1)
            ok = (tn <= tf) & (tn > eps)
            t_best[ok] = np.minimum(t_best[ok], tn[ok])

    # spheres
    for s in range(sph_c.shape[0]):
        oc = origin - sph_c[s]
        b_coef = dirs @ oc
        c_coef = oc @ oc - sph_r[s] ** 2
        disc = b_coef ** 2 - c_coef
        ok = disc >= 0.0
        root = np.sqrt(np.maximum(disc, 0.0))
        t = -b_coef - root
        ok &= t > eps
        t_best[ok] = np.minimum(t_best[ok], t[ok])

    t_best[t_best > max_range] = np.inf
    return t_best


def generate_synthetic_scene_scan(scene_seed: int, pose: Pose,
                                  profile: SensorProfile,
                                  scan_id: str = "",
                                  timestamp: float = 0.0) -> PointCloud:
    """Ray-cast the procedural scene keyed by scene_seed from the given pose.

    The returned cloud is expressed in the sensor frame; the same
    (scene_seed, pose, profile) triple always yields the identical cloud.
    """
    dirs_sensor = ray_directions(profile)
    dirs_world = dirs_sensor @ pose.rotation.T
    t = _raycast(pose.translation, dirs_world, scene_seed, profile.max_range)
    hit = np.isfinite(t)
    if not np.any(hit):
        raise EmptyScanError(f"no scene geometry visible from pose for scan {scan_id!r}")
    pts_sensor = dirs_sensor[hit] * t[hit, None]
    return PointCloud(pts_sensor, sensor_tag=profile.tag,
                      timestamp=timestamp, scan_id=scan_id)


# ---------------------------------------------------------------------------
# scan files and the dataset manifest


def sensor_tag_code(tag: str) -> int:
    try:
        return SENSOR_TAGS.index(tag)
    except ValueError:
        raise InvalidParameterError(
            f"unknown sensor tag {tag!r}, expected one of {SENSOR_TAGS}") from None


def write_scan(cloud: PointCloud, path) -> None:
    """Binary scan file: magic, version u16, count u32, tag u8, timestamp f64, xyz f32."""
    code = sensor_tag_code(cloud.sensor_tag)
    payload = cloud.points.astype("<f4").tobytes()
    header = SCAN_MAGIC + struct.pack("<HIBd", SCAN_VERSION, cloud.n_points,
                                      code, cloud.timestamp)
    Path(path).write_bytes(header + payload)


def read_scan(path, scan_id: str = "") -> PointCloud:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DatasetIOError(
            f"cannot read scan {scan_id or path.name!r}: {exc}; "
            f"run the gen command to produce the dataset first") from exc
    head = struct.calcsize("<HIBd")
    if len(blob) < 4 + head:
        raise DatasetIOError(f"scan file {path} is truncated")
    if blob[:4] != SCAN_MAGIC:
        raise DatasetIOError(f"scan file {path} has bad magic {blob[:4]!r}")
    version, count, code, timestamp = struct.unpack_from("<HIBd", blob, 4)
    if version != SCAN_VERSION:
        raise DatasetIOError(f"scan file {path} has unsupported version {version}")
    need = 4 + head + count * 12
    if len(blob) != need:
        raise DatasetIOError(f"scan file {path} has {len(blob)} bytes, expected {need}")
    if code >= len(SENSOR_TAGS):
        raise DatasetIOError(f"scan file {path} has unknown sensor code {code}")
    pts = np.frombuffer(blob, dtype="<f4", offset=4 + head).reshape(count, 3)
    return PointCloud(pts.astype(np.float64), sensor_tag=SENSOR_TAGS[code],
                      timestamp=timestamp, scan_id=scan_id)


@dataclass(frozen=True)
class ManifestEntry:
    scan_id: str
    path: str
    sensor_tag: str
    timestamp: float
    pose: Pose


def write_manifest(entries, path, header: dict | None = None) -> None:
    """One record per scan: id, file, tag, timestamp, then the 3x4 pose row-major."""
    lines = []
    for key, value in (header or {}).items():
        lines.append(f"# {key}={value}")
    for e in entries:
        mat = np.column_stack([e.pose.rotation, e.pose.translation]).reshape(-1)
        nums = ", ".join(repr(float(v)) for v in mat)
        lines.append(f"{e.scan_id}, {e.path}, {e.sensor_tag}, {e.timestamp!r}, {nums}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> list[ManifestEntry]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DatasetIOError(
            f"cannot read manifest {path}: {exc}; "
            f"run the gen command to produce the dataset first") from exc
    entries = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 16:
            raise DatasetIOError(f"manifest {path}:{lineno}: expected 16 fields, got {len(parts)}")
        scan_id, rel_path, tag = parts[0], parts[1], parts[2]
        try:
            timestamp = float(parts[3])
            nums = np.array([float(p) for p in parts[4:]]).reshape(3, 4)
        except ValueError as exc:
            raise DatasetIOError(f"manifest {path}:{lineno}: bad number: {exc}") from exc
        pose = Pose(nums[:, :3], nums[:, 3])
        entries.append(ManifestEntry(scan_id, rel_path, tag, timestamp, pose))
    return entries


def load_manifest_cloud(entry: ManifestEntry, root) -> PointCloud:
    """Read the scan file for a manifest entry, resolving its path against root."""
    p = Path(entry.path)
    if not p.is_absolute():
        p = Path(root) / p
    if not p.exists():
        raise DatasetIOError(
            f"scan file for {entry.scan_id!r} not found at {p}; "
            f"run the gen command to produce the dataset first")
    cloud = read_scan(p, scan_id=entry.scan_id)
    return replace(cloud, sensor_tag=entry.sensor_tag, timestamp=entry.timestamp)
