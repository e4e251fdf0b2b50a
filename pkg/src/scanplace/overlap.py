"""Pairwise scan overlap on voxel-downsampled clouds.

The directed overlap from cloud A to cloud B counts A's points whose nearest
neighbor in B lies strictly below a distance threshold, scaled by
2 / (|A| + |B|).  The symmetric value is the larger direction, capped at 1.
Pairs of scans whose sensor origins are farther apart than a truncation
distance are skipped and reported as overlap 0 without computation.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DatasetIOError,
    InvalidParameterError,
    UndefinedOverlapError,
)
from .geometry import (
    ManifestEntry,
    load_manifest_cloud,
    read_manifest,
    transform_cloud,
    voxel_downsample,
)


@dataclass(frozen=True)
class OverlapConfig:
    voxel_size: float = 4.0
    nn_threshold: float = 6.0       # 1.5x the voxel size
    truncation_distance: float = 200.0

    def __post_init__(self):
        for name in ("voxel_size", "nn_threshold", "truncation_distance"):
            value = getattr(self, name)
            if not value > 0:
                raise InvalidParameterError(f"{name} must be > 0, got {value}")


class PointGrid:
    """Uniform hash grid over 3-D points with cell size equal to the query radius.

    Any neighbor within the radius of a query point lies in the query's cell
    or one of its 26 face/edge/corner neighbors, so has_neighbor_within only
    inspects that 3x3x3 block.
    """

    def __init__(self, points: np.ndarray, cell_size: float):
        if cell_size <= 0:
            raise InvalidParameterError(f"cell_size must be > 0, got {cell_size}")
        self.points = np.asarray(points, dtype=np.float64)
        self.cell_size = float(cell_size)
        self.cells: dict[tuple[int, int, int], list[int]] = {}
        keys = np.floor(self.points / cell_size).astype(np.int64)
        for row, key in enumerate(map(tuple, keys)):
            self.cells.setdefault(key, []).append(row)

    def has_neighbor_within(self, query: np.ndarray, radius: float) -> bool:
        """True if some stored point lies at distance < radius (strict)."""
        if radius > self.cell_size:
            raise InvalidParameterError(
                f"radius {radius} exceeds cell size {self.cell_size}")
        cx, cy, cz = (int(np.floor(query[0] / self.cell_size)),
                      int(np.floor(query[1] / self.cell_size)),
                      int(np.floor(query[2] / self.cell_size)))
        r2 = radius * radius
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    rows = self.cells.get((cx + dx, cy + dy, cz + dz))
                    if rows is None:
                        continue
                    diff = self.points[rows] - query
                    if np.any(np.einsum("ij,ij->i", diff, diff) < r2):
                        return True
        return False


def _neighbor_hits(src: np.ndarray, grid: PointGrid, radius: float) -> int:
    return sum(grid.has_neighbor_within(p, radius) for p in src)


def _points_of(cloud) -> np.ndarray:
    pts = getattr(cloud, "points", cloud)
    return np.asarray(pts, dtype=np.float64)


def directed_overlap(points_a, points_b,
                     cfg: OverlapConfig = OverlapConfig()) -> float:
    """Overlap of A onto B; both clouds are voxel-downsampled first.

    Accepts PointCloud instances or raw (N, 3) arrays.  Returns
    2 * |{a in A : NN(a, B) < nn_threshold}| / (|A| + |B|), clamped to
    [0, 1].  Downsampling is idempotent, so already-downsampled input is
    passed through unchanged.
    """
    a = voxel_downsample(_points_of(points_a), cfg.voxel_size)
    b = voxel_downsample(_points_of(points_b), cfg.voxel_size)
    if a.shape[0] == 0 and b.shape[0] == 0:
        raise UndefinedOverlapError("overlap of two empty clouds is undefined")
    if a.shape[0] == 0 or b.shape[0] == 0:
        return 0.0
    grid = PointGrid(b, cfg.nn_threshold)
    hits = _neighbor_hits(a, grid, cfg.nn_threshold)
    value = 2.0 * hits / (a.shape[0] + b.shape[0])
    return min(1.0, max(0.0, value))


def symmetric_overlap(points_a, points_b,
                      cfg: OverlapConfig = OverlapConfig()) -> float:
    """max of the two directed overlaps, capped at 1."""
    o_ab = directed_overlap(points_a, points_b, cfg)
    o_ba = directed_overlap(points_b, points_a, cfg)
    return min(1.0, max(o_ab, o_ba))


@dataclass(frozen=True)
class OverlapMatrix:
    """Symmetric overlap values plus a mask of which pairs were computed."""

    scan_ids: tuple[str, ...]
    values: np.ndarray      # (n, n) float64 in [0, 1]
    computed: np.ndarray    # (n, n) bool; False where truncation skipped the pair

    def __post_init__(self):
        n = len(self.scan_ids)
        values = np.asarray(self.values, dtype=np.float64)
        computed = np.asarray(self.computed, dtype=bool)
        if values.shape != (n, n) or computed.shape != (n, n):
            raise InvalidParameterError(
                f"matrix shapes {values.shape}/{computed.shape} do not match {n} scans")
        if not np.allclose(values, values.T):
            raise InvalidParameterError("overlap values must be symmetric")
        if np.any((values < 0) | (values > 1)):
            raise InvalidParameterError("overlap values must lie in [0, 1]")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "computed", computed)

    def index(self, scan_id: str) -> int:
        try:
            return self.scan_ids.index(scan_id)
        except ValueError:
            raise InvalidParameterError(f"unknown scan id {scan_id!r}") from None

    def value(self, id_a: str, id_b: str) -> float:
        return float(self.values[self.index(id_a), self.index(id_b)])

    def was_computed(self, id_a: str, id_b: str) -> bool:
        return bool(self.computed[self.index(id_a), self.index(id_b)])


def build_overlap_matrix(manifest_path, cfg: OverlapConfig = OverlapConfig(),
                         entries: list[ManifestEntry] | None = None) -> OverlapMatrix:
    """All-pairs symmetric overlap for the scans listed in a manifest.

    Clouds are moved into the common frame with their manifest poses and
    voxel-downsampled once.  Pairs whose sensor origins are farther apart
    than cfg.truncation_distance get value 0 and computed=False.
    """
    manifest_path = Path(manifest_path)
    if entries is None:
        entries = read_manifest(manifest_path)
    root = manifest_path.parent
    ids = tuple(e.scan_id for e in entries)
    if len(set(ids)) != len(ids):
        raise InvalidParameterError("manifest contains duplicate scan ids")
    downsampled = []
    origins = np.zeros((len(entries), 3))
    for i, entry in enumerate(entries):
        cloud = load_manifest_cloud(entry, root)
        world = transform_cloud(cloud, entry.pose)
        downsampled.append(voxel_downsample(world.points, cfg.voxel_size))
        origins[i] = entry.pose.translation
    n = len(entries)
    values = np.eye(n)
    computed = np.ones((n, n), dtype=bool)
    for i in range(n):
        for j in range(i + 1, n):
            if np.linalg.norm(origins[i] - origins[j]) > cfg.truncation_distance:
                computed[i, j] = computed[j, i] = False
                continue
            o = symmetric_overlap(downsampled[i], downsampled[j], cfg)
            values[i, j] = values[j, i] = o
    return OverlapMatrix(ids, values, computed)


def save_overlap_matrix(matrix: OverlapMatrix, path,
                        cfg: OverlapConfig = OverlapConfig(),
                        header: dict | None = None) -> None:
    """Text form: header with config values, scan id lines, one line per pair."""
    lines = [
        "# overlap-matrix v1",
        f"# voxel_size={cfg.voxel_size!r} nn_threshold={cfg.nn_threshold!r} "
        f"truncation_distance={cfg.truncation_distance!r}",
    ]
    for key, value in (header or {}).items():
        lines.append(f"# {key}={value}")
    for scan_id in matrix.scan_ids:
        lines.append(f"scan {scan_id}")
    n = len(matrix.scan_ids)
    for i in range(n):
        for j in range(i + 1, n):
            if matrix.computed[i, j]:
                lines.append(f"{matrix.scan_ids[i]}, {matrix.scan_ids[j]}, "
                             f"{matrix.values[i, j]:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_overlap_matrix(path) -> OverlapMatrix:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DatasetIOError(
            f"cannot read overlap matrix {path}: {exc}; "
            f"run the overlap command to produce it first") from exc
    ids: list[str] = []
    pairs: list[tuple[str, str, float]] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("scan "):
            ids.append(line[5:].strip())
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3:
            raise DatasetIOError(f"overlap matrix {path}:{lineno}: expected 3 fields")
        try:
            pairs.append((parts[0], parts[1], float(parts[2])))
        except ValueError as exc:
            raise DatasetIOError(f"overlap matrix {path}:{lineno}: bad value") from exc
    index = {scan_id: i for i, scan_id in enumerate(ids)}
    n = len(ids)
    values = np.eye(n)
    computed = np.zeros((n, n), dtype=bool)
    np.fill_diagonal(computed, True)
    for id_a, id_b, value in pairs:
        if id_a not in index or id_b not in index:
            raise DatasetIOError(f"overlap matrix {path} names unlisted scan {id_a!r}/{id_b!r}")
        i, j = index[id_a], index[id_b]
        values[i, j] = values[j, i] = value
        computed[i, j] = computed[j, i] = True
    return OverlapMatrix(tuple(ids), values, computed)
