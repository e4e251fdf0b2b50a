"""Place recognition toolkit for synthetic multi-sensor lidar scans.

The pipeline runs in five stages, each usable on its own:

1. geometry: synthetic scene scans, poses, scan/manifest files
2. overlap + mining: voxelized 3D overlap, pair classes, training tuples
3. windowing + encoder: spherical/cubic window attention and transport
   aggregation producing one global descriptor per scan
4. losses + training: overlap-guided triplet and smoothed ranking losses
5. retrieval: nearest neighbor evaluation with recall@k and PR curves

All numerics are float64 numpy; gradients come from the bundled reverse-mode
tape in `scanplace.autodiff`.
"""

from . import autodiff
from .autodiff import GradcheckReport, GradTape, Tensor, backward, gradcheck
from .encoder import (
    Descriptor,
    EncoderConfig,
    LocalFeatures,
    PreparedScan,
    encode,
    encode_prepared,
    gem_pool,
    gem_reduce,
    init_weights,
    load_descriptors,
    load_weights,
    prepare_scan,
    salad_aggregate,
    save_descriptors,
    save_weights,
    sinkhorn_transport,
    voxel_stats,
    windowed_attention,
)
from .errors import (
    ContractError,
    DatasetIOError,
    EmptyMiningError,
    EmptyScanError,
    InvalidParameterError,
    InvalidPoseError,
    ShapeError,
    ToolkitError,
    UndefinedOverlapError,
)
from .geometry import (
    DEFAULT_PROFILES,
    SENSOR_TAGS,
    ManifestEntry,
    PointCloud,
    Pose,
    SensorProfile,
    generate_synthetic_scene_scan,
    load_manifest_cloud,
    preprocess_scan,
    ray_directions,
    read_manifest,
    read_scan,
    transform_cloud,
    voxel_downsample,
    write_manifest,
    write_scan,
)
from .losses import (
    BatchEmbedding,
    LossConfig,
    adaptive_margin,
    guided_triplet,
    loss_terms,
    overlap_transform,
    total_loss,
    tsap_loss,
)
from .mining import (
    PairClass,
    TrainingTuple,
    classify_pair,
    load_tuples,
    mine_tuples,
    save_tuples,
)
from .overlap import (
    OverlapConfig,
    OverlapMatrix,
    build_overlap_matrix,
    directed_overlap,
    load_overlap_matrix,
    save_overlap_matrix,
    symmetric_overlap,
)
from .retrieval import (
    EvalConfig,
    EvalReport,
    QueryResult,
    evaluate,
    evaluate_cross_sensor,
    knn_search,
    load_report,
    save_report,
)
from .training import TrainConfig, learning_rate_at, train, write_training_log
from .windowing import (
    WindowIndex,
    WindowSpec,
    cubic_index,
    partition,
    radial_width,
    spherical_index,
)

__version__ = "0.1.0"
