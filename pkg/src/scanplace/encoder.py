"""Toy descriptor encoder over voxelized clouds.

Pipeline: per-voxel statistics -> learned affine embedding -> a stack of
windowed multi-head attention levels (half the heads attend inside spherical
windows whose radial width grows per level, half inside fixed cubic windows)
-> two aggregation branches: generalized-mean pooling with a learned exponent
feeding a small MLP (global branch), and an optimal-transport soft assignment
of voxel features to learned clusters (local branch).  The flattened cluster
matrix and the global vector are concatenated and L2-normalized into the
final descriptor of length cluster_count * cluster_dim + global_dim.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import (
    ContractError,
    DatasetIOError,
    EmptyScanError,
    InvalidParameterError,
    ShapeError,
)
from .geometry import PointCloud, sensor_tag_code, SENSOR_TAGS
from .windowing import WindowSpec, partition

WEIGHTS_MAGIC = b"HLKW"
DESCRIPTOR_MAGIC = b"HLKD"

STAT_DIM = 7   # centroid xyz, log1p count, per-axis offset spread
EMBED_FREQ = 20.0   # first-layer frequency scale of the sinusoidal embedding


@dataclass(frozen=True)
class EncoderConfig:
    feature_dim: int = 16
    cluster_count: int = 8
    cluster_dim: int = 16
    global_dim: int = 8
    attention_heads: int = 2
    attention_levels: int = 2
    sinkhorn_iterations: int = 10
    voxel_size: float = 0.08    # on preprocessed (normalized) coordinates
    gem_exponent_init: float = 3.0
    gem_floor: float = 1e-6
    window_spec: WindowSpec = field(default_factory=lambda: WindowSpec(
        radial_size=0.25, theta_size=30.0, phi_size=45.0, cubic_size=0.25))

    def __post_init__(self):
        if self.feature_dim < 1:
            raise InvalidParameterError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.cluster_count < 1 or self.cluster_dim < 1:
            raise InvalidParameterError("cluster_count and cluster_dim must be >= 1")
        if self.global_dim < 0:
            raise InvalidParameterError(f"global_dim must be >= 0, got {self.global_dim}")
        if self.attention_heads < 2 or self.attention_heads % 2 != 0:
            raise InvalidParameterError(
                f"attention_heads must be even and >= 2, got {self.attention_heads}")
        if self.feature_dim % self.attention_heads != 0:
            raise InvalidParameterError(
                f"feature_dim {self.feature_dim} must divide evenly into "
                f"{self.attention_heads} heads")
        if self.attention_levels < 1:
            raise InvalidParameterError(f"attention_levels must be >= 1, got {self.attention_levels}")
        if self.sinkhorn_iterations < 1:
            raise InvalidParameterError(f"sinkhorn_iterations must be >= 1, got {self.sinkhorn_iterations}")
        if self.voxel_size <= 0:
            raise InvalidParameterError(f"voxel_size must be > 0, got {self.voxel_size}")
        if self.gem_floor <= 0:
            raise InvalidParameterError(f"gem_floor must be > 0, got {self.gem_floor}")

    @property
    def descriptor_dim(self) -> int:
        return self.cluster_count * self.cluster_dim + self.global_dim


@dataclass
class LocalFeatures:
    """Per-voxel feature matrix plus the voxel centers that anchor windows."""

    features: Tensor          # (n, feature_dim)
    centers: np.ndarray       # (n, 3)

    def __post_init__(self):
        if self.features.data.ndim != 2:
            raise ShapeError(f"features must be 2-D, got {self.features.shape}")
        if self.centers.shape != (self.features.shape[0], 3):
            raise ShapeError(
                f"centers shape {self.centers.shape} does not match "
                f"{self.features.shape[0]} feature rows")


@dataclass(frozen=True)
class Descriptor:
    vector: np.ndarray
    scan_id: str = ""
    sensor_tag: str = SENSOR_TAGS[0]

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float64).reshape(-1).copy()
        vec.setflags(write=False)
        object.__setattr__(self, "vector", vec)


# ---------------------------------------------------------------------------
# weights


def init_weights(cfg: EncoderConfig, seed: int = 0) -> dict:
    """Deterministic parameter dict keyed by dotted names."""
    rng = np.random.default_rng(seed)
    d = cfg.feature_dim
    dh = d // cfg.attention_heads

    def dense(rows, cols):
        scale = 1.0 / np.sqrt(rows)
        return Tensor(rng.uniform(-scale, scale, size=(rows, cols)), requires_grad=True)

    def zeros(*shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    # sinusoidal embedding wants first-layer frequencies high enough that the
    # per-voxel phases wrap a few times across a scan; otherwise per-scan
    # feature means stay large and the transport aggregation collapses every
    # cluster onto that shared mean (see EMBED_FREQ)
    embed = dense(STAT_DIM, d)
    weights = {"embed.W": Tensor(embed.data * EMBED_FREQ, requires_grad=True),
               "embed.b": Tensor(rng.uniform(-np.pi, np.pi, size=d),
                                 requires_grad=True)}
    for level in range(cfg.attention_levels):
        for head in range(cfg.attention_heads):
            base = f"attn.{level}.{head}"
            weights[f"{base}.Wq"] = dense(d, dh)
            weights[f"{base}.Wk"] = dense(d, dh)
            weights[f"{base}.Wv"] = dense(d, dh)
        weights[f"attn.{level}.Wo"] = dense(d, d)
        weights[f"attn.{level}.bo"] = zeros(d)
    weights["gem.p"] = Tensor(np.array(cfg.gem_exponent_init), requires_grad=True)
    if cfg.global_dim > 0:
        weights["gem.W1"] = dense(d, d)
        weights["gem.b1"] = zeros(d)
        weights["gem.W2"] = dense(d, cfg.global_dim)
        weights["gem.b2"] = zeros(cfg.global_dim)
    weights["salad.score.W"] = dense(d, cfg.cluster_count)
    weights["salad.score.b"] = zeros(cfg.cluster_count)
    weights["salad.dustbin"] = zeros(1)
    weights["salad.proj.W"] = dense(d, cfg.cluster_dim)
    weights["salad.proj.b"] = zeros(cfg.cluster_dim)
    return weights


# ---------------------------------------------------------------------------
# voxel statistics and embedding


def voxel_stats(points: np.ndarray, voxel_size: float):
    """Per-voxel input statistics: centroid, log1p(count), offset spread.

    The spread is the per-axis root mean square offset from the centroid, so
    duplicating every point of a voxel changes only its count feature.
    Voxels are ordered by integer voxel key, independent of point order.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ShapeError(f"points must be (N, 3), got {pts.shape}")
    if pts.shape[0] == 0:
        raise EmptyScanError("cannot compute voxel statistics of an empty cloud")
    keys = np.floor(pts / voxel_size).astype(np.int64)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    n = uniq.shape[0]
    counts = np.bincount(inverse, minlength=n).astype(np.float64)
    sums = np.zeros((n, 3))
    np.add.at(sums, inverse, pts)
    centers = sums / counts[:, None]
    sq = np.zeros((n, 3))
    np.add.at(sq, inverse, (pts - centers[inverse]) ** 2)
    spread = np.sqrt(sq / counts[:, None])
    stats = np.column_stack([centers, np.log1p(counts), spread])
    return stats, centers


def embed_voxels(cloud: PointCloud, weights: dict, cfg: EncoderConfig) -> LocalFeatures:
    """Voxelize a preprocessed cloud and embed per-voxel stats to feature_dim."""
    stats, centers = voxel_stats(cloud.points, cfg.voxel_size)
    return embed_stats(stats, centers, weights, cfg)


def embed_stats(stats: np.ndarray, centers: np.ndarray, weights: dict,
                cfg: EncoderConfig) -> LocalFeatures:
    x = Tensor(stats)
    n = stats.shape[0]
    pre = ad.add(ad.matmul(x, weights["embed.W"]), ad.tile_rows(weights["embed.b"], n))
    # sin keeps per-scan feature means near zero: phases decorrelate across
    # voxels, so no shared direction survives to dominate the aggregation
    return LocalFeatures(ad.sin(pre), centers)


# ---------------------------------------------------------------------------
# windowed attention


def window_groups(centers: np.ndarray, spec: WindowSpec, level: int, kind: str):
    """Ordered group index arrays plus the permutation that undoes regrouping."""
    groups = list(partition(centers, spec, level, kind).values())
    order = np.concatenate(groups) if groups else np.zeros(0, dtype=np.int64)
    inverse = np.empty_like(order)
    inverse[order] = np.arange(order.size)
    return groups, inverse


def _head_attention(feats: Tensor, wq: Tensor, wk: Tensor, wv: Tensor,
                    groups, inverse) -> Tensor:
    q = ad.matmul(feats, wq)
    k = ad.matmul(feats, wk)
    v = ad.matmul(feats, wv)
    scale = 1.0 / np.sqrt(wq.shape[1])
    outputs = []
    for rows in groups:
        qg = ad.gather_rows(q, rows)
        kg = ad.gather_rows(k, rows)
        vg = ad.gather_rows(v, rows)
        scores = ad.mul(ad.matmul(qg, ad.transpose(kg)), scale)
        att = ad.softmax_along_axis(scores, axis=1)
        outputs.append(ad.matmul(att, vg))
    stacked = ad.concat(outputs, axis=0) if len(outputs) > 1 else outputs[0]
    return ad.gather_rows(stacked, inverse)


def windowed_attention(feats: LocalFeatures, weights: dict, cfg: EncoderConfig,
                       level: int, groups: dict | None = None) -> LocalFeatures:
    """One attention level: spherical-window heads, cubic-window heads, residual.

    The first half of the heads attends within spherical windows at this
    level's radial width; the second half within cubic windows.  Windows are
    disjoint, so features in one window never influence another window's
    output at the same level.  Head outputs are concatenated, projected back
    to feature_dim, and added to the input features.
    """
    if not 0 <= level < cfg.attention_levels:
        raise InvalidParameterError(
            f"level {level} outside configured range 0..{cfg.attention_levels - 1}")
    if groups is None:
        groups = {kind: window_groups(feats.centers, cfg.window_spec, level, kind)
                  for kind in ("spherical", "cubic")}
    half = cfg.attention_heads // 2
    head_outs = []
    for head in range(cfg.attention_heads):
        kind = "spherical" if head < half else "cubic"
        grp, inv = groups[kind]
        base = f"attn.{level}.{head}"
        head_outs.append(_head_attention(feats.features, weights[f"{base}.Wq"],
                                         weights[f"{base}.Wk"], weights[f"{base}.Wv"],
                                         grp, inv))
    merged = ad.concat(head_outs, axis=1)
    n = feats.features.shape[0]
    projected = ad.add(ad.matmul(merged, weights[f"attn.{level}.Wo"]),
                       ad.tile_rows(weights[f"attn.{level}.bo"], n))
    return LocalFeatures(ad.add(feats.features, projected), feats.centers)


# ---------------------------------------------------------------------------
# global branch: generalized-mean pooling + MLP


def gem_reduce(features, p, floor: float = 1e-6) -> Tensor:
    """Generalized mean over rows: (mean(max(F, floor)^p))^(1/p).

    p may be a python float or a scalar Tensor (learned exponent).  The floor
    keeps the fractional powers defined for non-positive activations.
    """
    f = features if isinstance(features, Tensor) else Tensor(features)
    if f.data.ndim != 2:
        raise ShapeError(f"gem_reduce needs a 2-D feature matrix, got {f.shape}")
    clipped = ad.maximum(f, floor)
    if isinstance(p, Tensor):
        powered = ad.exp(ad.mul(ad.log(clipped), p))
        pooled = ad.mean(powered, axis=0)
        return ad.exp(ad.div(ad.log(pooled), p))
    p = float(p)
    powered = ad.scalar_pow(clipped, p)
    pooled = ad.mean(powered, axis=0)
    return ad.scalar_pow(pooled, 1.0 / p)


def gem_pool(feats: LocalFeatures, weights: dict, cfg: EncoderConfig) -> Tensor:
    """Pooled global vector of length global_dim; empty when global_dim is 0."""
    if cfg.global_dim == 0:
        return Tensor(np.zeros(0))
    pooled = gem_reduce(feats.features, weights["gem.p"], cfg.gem_floor)
    row = ad.reshape(pooled, (1, cfg.feature_dim))
    hidden = ad.tanh(ad.add(ad.matmul(row, weights["gem.W1"]),
                            ad.reshape(weights["gem.b1"], (1, cfg.feature_dim))))
    out = ad.add(ad.matmul(hidden, weights["gem.W2"]),
                 ad.reshape(weights["gem.b2"], (1, cfg.global_dim)))
    return ad.reshape(out, (cfg.global_dim,))


# ---------------------------------------------------------------------------
# local branch: optimal-transport cluster assignment


def sinkhorn_transport(scores, iterations: int = 10) -> Tensor:
    """Entropic transport plan from an (n, k) score matrix, in log space.

    Row marginals are 1 (each feature distributes a unit of mass); column
    marginals are n/k (uniform cluster capacity).  Each iteration updates the
    column potentials first and the row potentials last, so row sums are exact
    after every iteration and column sums converge with more iterations.
    """
    s = scores if isinstance(scores, Tensor) else Tensor(scores)
    if s.data.ndim != 2:
        raise ShapeError(f"scores must be 2-D, got {s.shape}")
    if iterations < 1:
        raise InvalidParameterError(f"iterations must be >= 1, got {iterations}")
    n, k = s.shape
    log_col_target = float(np.log(n / k))
    u = Tensor(np.zeros(n))
    for _ in range(iterations):
        with_u = ad.add(s, ad.tile_cols(u, k))
        v = ad.sub(Tensor(np.full(k, log_col_target)),
                   ad.logsumexp_along_axis(with_u, axis=0))
        with_v = ad.add(s, ad.tile_rows(v, n))
        u = ad.neg(ad.logsumexp_along_axis(with_v, axis=1))
    plan = ad.exp(ad.add(ad.add(s, ad.tile_cols(u, k)), ad.tile_rows(v, n)))
    return plan


def salad_aggregate(feats: LocalFeatures, weights: dict, cfg: EncoderConfig) -> Tensor:
    """Transport-weighted cluster features, shape (cluster_count, cluster_dim).

    Scores against the learned clusters get an extra learned dustbin column;
    the transport plan is computed over clusters + dustbin, the dustbin column
    is dropped, and the remaining assignment weights mix projected features
    into V[k][j] = sum_i R[i][k] * Fbar[i][j].
    """
    f = feats.features
    n = f.shape[0]
    scores = ad.add(ad.matmul(f, weights["salad.score.W"]),
                    ad.tile_rows(weights["salad.score.b"], n))
    dustbin = ad.tile_rows(weights["salad.dustbin"], n)   # (n, 1) learned scalar
    augmented = ad.concat([scores, dustbin], axis=1)
    plan = sinkhorn_transport(augmented, cfg.sinkhorn_iterations)
    assign = ad.slice_cols(plan, 0, cfg.cluster_count)
    projected = ad.add(ad.matmul(f, weights["salad.proj.W"]),
                       ad.tile_rows(weights["salad.proj.b"], n))
    return ad.matmul(ad.transpose(assign), projected)


# ---------------------------------------------------------------------------
# full encoder


@dataclass
class PreparedScan:
    """Weight-independent per-scan inputs cached for repeated encoding."""

    stats: np.ndarray
    centers: np.ndarray
    groups: dict     # (level, kind) -> (group index arrays, inverse permutation)
    scan_id: str = ""
    sensor_tag: str = SENSOR_TAGS[0]


def prepare_scan(cloud: PointCloud, cfg: EncoderConfig) -> PreparedScan:
    stats, centers = voxel_stats(cloud.points, cfg.voxel_size)
    groups = {}
    for level in range(cfg.attention_levels):
        for kind in ("spherical", "cubic"):
            groups[(level, kind)] = window_groups(centers, cfg.window_spec, level, kind)
    return PreparedScan(stats, centers, groups, cloud.scan_id, cloud.sensor_tag)


def encode_prepared(prep: PreparedScan, weights: dict, cfg: EncoderConfig) -> Tensor:
    feats = embed_stats(prep.stats, prep.centers, weights, cfg)
    for level in range(cfg.attention_levels):
        level_groups = {kind: prep.groups[(level, kind)] for kind in ("spherical", "cubic")}
        feats = windowed_attention(feats, weights, cfg, level, groups=level_groups)
    local = ad.reshape(salad_aggregate(feats, weights, cfg),
                       (cfg.cluster_count * cfg.cluster_dim,))
    global_vec = gem_pool(feats, weights, cfg)
    if cfg.global_dim > 0:
        return ad.l2_normalize(ad.concat([local, global_vec], axis=0))
    return ad.l2_normalize(local)


def encode(cloud: PointCloud, weights: dict, cfg: EncoderConfig) -> Descriptor:
    """Full forward pass producing a unit-norm Descriptor."""
    g = encode_prepared(prepare_scan(cloud, cfg), weights, cfg)
    return Descriptor(g.data, scan_id=cloud.scan_id, sensor_tag=cloud.sensor_tag)


# ---------------------------------------------------------------------------
# checkpoint and descriptor store files


def _config_echo(cfg: EncoderConfig, extra: dict | None = None) -> str:
    spec = cfg.window_spec
    pairs = {
        "feature_dim": cfg.feature_dim,
        "cluster_count": cfg.cluster_count,
        "cluster_dim": cfg.cluster_dim,
        "global_dim": cfg.global_dim,
        "attention_heads": cfg.attention_heads,
        "attention_levels": cfg.attention_levels,
        "sinkhorn_iterations": cfg.sinkhorn_iterations,
        "voxel_size": repr(cfg.voxel_size),
        "gem_exponent_init": repr(cfg.gem_exponent_init),
        "gem_floor": repr(cfg.gem_floor),
        "radial_size": repr(spec.radial_size),
        "theta_size": repr(spec.theta_size),
        "phi_size": repr(spec.phi_size),
        "cubic_size": repr(spec.cubic_size),
        "expansion": repr(spec.expansion),
    }
    pairs.update(extra or {})
    return "\n".join(f"{k}={v}" for k, v in pairs.items())


def config_from_echo(echo: str) -> EncoderConfig:
    values = {}
    for line in echo.splitlines():
        line = line.strip()
        if not line or "=" not in line:
            continue
        key, _, val = line.partition("=")
        values[key.strip()] = val.strip()

    def geti(key, default):
        return int(values.get(key, default))

    def getf(key, default):
        return float(values.get(key, default))

    base = EncoderConfig()
    spec = WindowSpec(radial_size=getf("radial_size", base.window_spec.radial_size),
                      theta_size=getf("theta_size", base.window_spec.theta_size),
                      phi_size=getf("phi_size", base.window_spec.phi_size),
                      cubic_size=getf("cubic_size", base.window_spec.cubic_size),
                      expansion=getf("expansion", base.window_spec.expansion))
    return EncoderConfig(
        feature_dim=geti("feature_dim", base.feature_dim),
        cluster_count=geti("cluster_count", base.cluster_count),
        cluster_dim=geti("cluster_dim", base.cluster_dim),
        global_dim=geti("global_dim", base.global_dim),
        attention_heads=geti("attention_heads", base.attention_heads),
        attention_levels=geti("attention_levels", base.attention_levels),
        sinkhorn_iterations=geti("sinkhorn_iterations", base.sinkhorn_iterations),
        voxel_size=getf("voxel_size", base.voxel_size),
        gem_exponent_init=getf("gem_exponent_init", base.gem_exponent_init),
        gem_floor=getf("gem_floor", base.gem_floor),
        window_spec=spec)


def save_weights(weights: dict, cfg: EncoderConfig, path,
                 extra: dict | None = None) -> None:
    """Checkpoint: magic, config echo, then named float64 tensors."""
    echo = _config_echo(cfg, extra).encode("utf-8")
    buf = io.BytesIO()
    buf.write(WEIGHTS_MAGIC)
    buf.write(struct.pack("<I", len(echo)))
    buf.write(echo)
    for name in sorted(weights):
        t = weights[name]
        name_b = name.encode("utf-8")
        buf.write(struct.pack("<H", len(name_b)))
        buf.write(name_b)
        shape = t.data.shape
        buf.write(struct.pack("<B", len(shape)))
        for dim in shape:
            buf.write(struct.pack("<I", dim))
        buf.write(t.data.astype("<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_weights(path):
    """Returns (weights dict, EncoderConfig, raw echo text)."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DatasetIOError(
            f"cannot read checkpoint {path}: {exc}; run the train command first") from exc
    if blob[:4] != WEIGHTS_MAGIC:
        raise DatasetIOError(f"checkpoint {path} has bad magic {blob[:4]!r}")
    off = 4
    (echo_len,) = struct.unpack_from("<I", blob, off)
    off += 4
    echo = blob[off:off + echo_len].decode("utf-8")
    off += echo_len
    weights = {}
    while off < len(blob):
        (name_len,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = []
        for _ in range(ndim):
            (dim,) = struct.unpack_from("<I", blob, off)
            off += 4
            shape.append(dim)
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(blob, dtype="<f8", count=count, offset=off)
        off += count * 8
        weights[name] = Tensor(data.reshape(shape).copy(), requires_grad=True)
    return weights, config_from_echo(echo), echo


def save_descriptors(descriptors, path) -> None:
    """Store: magic, dim u32, count u32, then (scan_id, tag u8, f32 vector) records."""
    descriptors = list(descriptors)
    if not descriptors:
        raise ContractError("cannot save an empty descriptor store")
    dim = descriptors[0].vector.size
    buf = io.BytesIO()
    buf.write(DESCRIPTOR_MAGIC)
    buf.write(struct.pack("<II", dim, len(descriptors)))
    for d in descriptors:
        if d.vector.size != dim:
            raise ShapeError(f"descriptor {d.scan_id!r} has dim {d.vector.size}, store has {dim}")
        sid = d.scan_id.encode("utf-8")
        buf.write(struct.pack("<H", len(sid)))
        buf.write(sid)
        buf.write(struct.pack("<B", sensor_tag_code(d.sensor_tag)))
        buf.write(d.vector.astype("<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_descriptors(path) -> list:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DatasetIOError(
            f"cannot read descriptor store {path}: {exc}; run the eval command first") from exc
    if blob[:4] != DESCRIPTOR_MAGIC:
        raise DatasetIOError(f"descriptor store {path} has bad magic {blob[:4]!r}")
    dim, count = struct.unpack_from("<II", blob, 4)
    off = 12
    out = []
    for _ in range(count):
        (sid_len,) = struct.unpack_from("<H", blob, off)
        off += 2
        sid = blob[off:off + sid_len].decode("utf-8")
        off += sid_len
        (code,) = struct.unpack_from("<B", blob, off)
        off += 1
        vec = np.frombuffer(blob, dtype="<f4", count=dim, offset=off).astype(np.float64)
        off += dim * 4
        out.append(Descriptor(vec, scan_id=sid, sensor_tag=SENSOR_TAGS[code]))
    return out
