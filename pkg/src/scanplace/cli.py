"""Command line front end: gen, overlap, mine, train, eval, plot.

Every subcommand takes --seed, --config (flat key=value file, overridden by
explicit flags), and an output destination.  Exit codes: 0 success, 2 for
contract violations, 3 for dataset I/O problems.  All outputs embed the seed
and the configuration that produced them, and rerunning a command with the
same inputs reproduces its outputs byte for byte.
"""

from __future__ import annotations

import argparse
import sys
import zlib
from pathlib import Path

import numpy as np

from .encoder import (
    Descriptor,
    EncoderConfig,
    encode_prepared,
    init_weights,
    load_descriptors,
    load_weights,
    prepare_scan,
    save_descriptors,
    save_weights,
)
from .errors import ContractError, DatasetIOError, InvalidParameterError
from .geometry import (
    DEFAULT_PROFILES,
    ManifestEntry,
    Pose,
    generate_synthetic_scene_scan,
    load_manifest_cloud,
    preprocess_scan,
    read_manifest,
    write_manifest,
    write_scan,
)
from .losses import LossConfig
from .mining import load_tuples, mine_tuples, save_tuples
from .overlap import (
    OverlapConfig,
    build_overlap_matrix,
    load_overlap_matrix,
    save_overlap_matrix,
)
from .retrieval import EvalConfig, evaluate, evaluate_cross_sensor, save_report
from .training import TrainConfig, train, write_training_log
from .windowing import WindowSpec

SCENE_SPACING = 320.0   # meters between scene anchors; an integer voxel multiple


def read_config_file(path) -> dict:
    """Flat key=value lines; blank lines and # comments are ignored."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DatasetIOError(f"cannot read config file {path}: {exc}") from exc
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InvalidParameterError(f"config {path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def _apply_config_defaults(parser: argparse.ArgumentParser, argv: list):
    """Let a config file replace parser defaults; explicit flags still win."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv)
    if not known.config:
        return
    values = read_config_file(known.config)
    valid = {a.dest: a for a in parser._actions}
    for key, raw in values.items():
        action = valid.get(key)
        if action is None:
            raise InvalidParameterError(f"config key {key!r} is not a known option")
        if action.type is not None:
            parser.set_defaults(**{key: action.type(raw)})
        elif isinstance(action.default, bool):
            parser.set_defaults(**{key: raw.lower() in ("1", "true", "yes")})
        else:
            parser.set_defaults(**{key: raw})


def _config_echo_from_args(args, skip=("config", "func")) -> dict:
    echo = {}
    for key, value in sorted(vars(args).items()):
        if key in skip or callable(value):
            continue
        echo[key] = value
    return echo


# ---------------------------------------------------------------------------
# gen


def _add_gen(sub):
    p = sub.add_parser("gen", help="generate a synthetic multi-sensor dataset")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--scenes", type=int, default=10)
    p.add_argument("--poses-per-scene", dest="poses_per_scene", type=int, default=1)
    p.add_argument("--profiles", default="wide-spinning,narrow-solid-state,rosette",
                   help="comma-separated sensor profile tags")
    p.add_argument("--jitter", type=float, default=8.0,
                   help="max horizontal pose offset from the scene anchor, meters")
    p.set_defaults(func=cmd_gen)
    return p


def cmd_gen(args) -> int:
    if args.scenes < 0 or args.poses_per_scene < 1:
        raise InvalidParameterError("scenes must be >= 0 and poses-per-scene >= 1")
    if args.scenes == 0:
        print("warning: zero scenes requested, writing an empty manifest", file=sys.stderr)
    tags = [t.strip() for t in args.profiles.split(",") if t.strip()]
    if not tags:
        raise InvalidParameterError("no sensor profiles given")
    for tag in tags:
        if tag not in DEFAULT_PROFILES:
            raise InvalidParameterError(
                f"unknown profile {tag!r}, expected one of {sorted(DEFAULT_PROFILES)}")
    out = Path(args.out)
    scans_dir = out / "scans"
    scans_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    stamp = 0
    for scene in range(args.scenes):
        scene_seed = int(np.random.default_rng([args.seed, scene]).integers(0, 2**31))
        offset = np.array([SCENE_SPACING * scene, 0.0, 0.0])
        for pose_idx in range(args.poses_per_scene):
            for tag in tags:
                tag_code = zlib.crc32(tag.encode("utf-8"))
                rng = np.random.default_rng([args.seed, scene, pose_idx, tag_code])
                local = Pose.from_yaw(
                    rng.uniform(0.0, 2.0 * np.pi),
                    (rng.uniform(-args.jitter, args.jitter),
                     rng.uniform(-args.jitter, args.jitter),
                     rng.uniform(1.2, 2.0)))
                scan_id = f"s{scene:03d}_p{pose_idx:02d}_{tag}"
                timestamp = 60.0 * stamp
                stamp += 1
                cloud = generate_synthetic_scene_scan(scene_seed, local,
                                                      DEFAULT_PROFILES[tag],
                                                      scan_id=scan_id,
                                                      timestamp=timestamp)
                rel = f"scans/{scan_id}.hlks"
                write_scan(cloud, out / rel)
                world = Pose(local.rotation, local.translation + offset)
                entries.append(ManifestEntry(scan_id, rel, tag, timestamp, world))
    write_manifest(entries, out / "manifest.txt", header=_config_echo_from_args(args))
    print(f"wrote {len(entries)} scans under {out}")
    return 0


# ---------------------------------------------------------------------------
# overlap


def _add_overlap(sub):
    p = sub.add_parser("overlap", help="compute the all-pairs overlap matrix")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--voxel-size", dest="voxel_size", type=float, default=4.0)
    p.add_argument("--nn-threshold", dest="nn_threshold", type=float, default=6.0)
    p.add_argument("--truncation", type=float, default=200.0)
    p.set_defaults(func=cmd_overlap)
    return p


def cmd_overlap(args) -> int:
    cfg = OverlapConfig(voxel_size=args.voxel_size, nn_threshold=args.nn_threshold,
                        truncation_distance=args.truncation)
    matrix = build_overlap_matrix(args.manifest, cfg)
    save_overlap_matrix(matrix, args.out, cfg, header=_config_echo_from_args(args))
    computed = int(np.sum(matrix.computed) - len(matrix.scan_ids)) // 2
    print(f"wrote overlap matrix for {len(matrix.scan_ids)} scans "
          f"({computed} computed pairs) to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# mine


def _add_mine(sub):
    p = sub.add_parser("mine", help="mine training tuples from an overlap matrix")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--matrix", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--positives", type=int, default=2)
    p.add_argument("--semi-positives", dest="semi_positives", type=int, default=2)
    p.add_argument("--negatives", type=int, default=8)
    p.set_defaults(func=cmd_mine)
    return p


def cmd_mine(args) -> int:
    matrix = load_overlap_matrix(args.matrix)
    tuples = mine_tuples(matrix, (args.positives, args.semi_positives, args.negatives),
                         seed=args.seed)
    save_tuples(tuples, args.out, header=_config_echo_from_args(args))
    print(f"mined {len(tuples)} tuples to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# shared encoder/preprocessing flags


def _add_encoder_flags(p):
    p.add_argument("--feature-dim", dest="feature_dim", type=int, default=16)
    p.add_argument("--clusters", type=int, default=8)
    p.add_argument("--cluster-dim", dest="cluster_dim", type=int, default=16)
    p.add_argument("--global-dim", dest="global_dim", type=int, default=8)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--levels", type=int, default=2)
    p.add_argument("--sinkhorn-iterations", dest="sinkhorn_iterations", type=int, default=10)
    p.add_argument("--net-voxel", dest="net_voxel", type=float, default=0.08)
    p.add_argument("--radial", type=float, default=0.25)
    p.add_argument("--theta", type=float, default=30.0)
    p.add_argument("--phi", type=float, default=45.0)
    p.add_argument("--cubic", type=float, default=0.25)
    p.add_argument("--max-range", dest="max_range", type=float, default=100.0)
    p.add_argument("--point-budget", dest="point_budget", type=int, default=512)


def _encoder_config(args) -> EncoderConfig:
    spec = WindowSpec(radial_size=args.radial, theta_size=args.theta,
                      phi_size=args.phi, cubic_size=args.cubic)
    return EncoderConfig(feature_dim=args.feature_dim, cluster_count=args.clusters,
                         cluster_dim=args.cluster_dim, global_dim=args.global_dim,
                         attention_heads=args.heads, attention_levels=args.levels,
                         sinkhorn_iterations=args.sinkhorn_iterations,
                         voxel_size=args.net_voxel, window_spec=spec)


def _prepare_dataset(manifest_path, enc_cfg, max_range, point_budget, seed):
    entries = read_manifest(manifest_path)
    root = Path(manifest_path).parent
    prepared = {}
    for entry in entries:
        cloud = load_manifest_cloud(entry, root)
        pre = preprocess_scan(cloud, max_range=max_range, point_budget=point_budget,
                              seed=seed)
        prepared[entry.scan_id] = prepare_scan(pre, enc_cfg)
    return entries, prepared


# ---------------------------------------------------------------------------
# train


def _add_train(sub):
    p = sub.add_parser("train", help="train the descriptor encoder")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--manifest", required=True)
    p.add_argument("--tuples", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", default=None, help="training log path")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--decay", type=float, default=0.1)
    _add_encoder_flags(p)
    p.add_argument("--m1", type=float, default=LossConfig.m1)
    p.add_argument("--m2", type=float, default=LossConfig.m2)
    p.add_argument("--omega1", type=float, default=LossConfig.omega1)
    p.add_argument("--omega2", type=float, default=LossConfig.omega2)
    p.add_argument("--top-k", dest="top_k", type=int, default=LossConfig.tsap_top_k)
    p.add_argument("--temperature", type=float, default=LossConfig.tsap_temperature)
    p.set_defaults(func=cmd_train)
    return p


def cmd_train(args) -> int:
    enc_cfg = _encoder_config(args)
    loss_cfg = LossConfig(m1=args.m1, m2=args.m2, omega1=args.omega1,
                          omega2=args.omega2, tsap_top_k=args.top_k,
                          tsap_temperature=args.temperature)
    train_cfg = TrainConfig(steps=args.steps, learning_rate=args.lr,
                            momentum=args.momentum, decay=args.decay, seed=args.seed)
    tuples = load_tuples(args.tuples)
    _, prepared = _prepare_dataset(args.manifest, enc_cfg, args.max_range,
                                   args.point_budget, args.seed)
    missing = [t.query_id for t in tuples if t.query_id not in prepared]
    if missing:
        raise DatasetIOError(f"tuples reference scans missing from the manifest: {missing[:3]}")
    weights, history = train(tuples, prepared, enc_cfg, loss_cfg, train_cfg)
    extra = {str(k): str(v) for k, v in _config_echo_from_args(args).items()}
    save_weights(weights, enc_cfg, args.out, extra=extra)
    if args.log:
        write_training_log(history, args.log, header=_config_echo_from_args(args))
    final = history[-1].total if history else float("nan")
    print(f"trained {args.steps} steps, final loss {final:.6f}, "
          f"checkpoint at {args.out}")
    return 0


# ---------------------------------------------------------------------------
# eval


def _add_eval(sub):
    p = sub.add_parser("eval", help="encode scans and evaluate retrieval")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--manifest", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--matrix", required=True)
    p.add_argument("--out", required=True, help="eval report path")
    p.add_argument("--descriptors", default=None, help="optional descriptor store output")
    p.add_argument("--database", default=None,
                   help="optional precomputed descriptor store to search against")
    p.add_argument("--overlap-threshold", dest="overlap_threshold", type=float, default=0.5)
    p.add_argument("--exclusion", type=float, default=30.0)
    p.add_argument("--k-max", dest="k_max", type=int, default=10)
    p.add_argument("--protocol", choices=("cross-sensor", "self"), default="cross-sensor")
    p.add_argument("--max-range", dest="max_range", type=float, default=100.0)
    p.add_argument("--point-budget", dest="point_budget", type=int, default=512)
    p.set_defaults(func=cmd_eval)
    return p


def cmd_eval(args) -> int:
    weights, enc_cfg, _ = load_weights(args.weights)
    entries, prepared = _prepare_dataset(args.manifest, enc_cfg, args.max_range,
                                         args.point_budget, args.seed)
    matrix = load_overlap_matrix(args.matrix)
    eval_cfg = EvalConfig(correctness_overlap=args.overlap_threshold,
                          exclusion_window=args.exclusion, k_max=args.k_max)
    descriptors = []
    for entry in entries:
        vec = encode_prepared(prepared[entry.scan_id], weights, enc_cfg)
        descriptors.append(Descriptor(vec.data, scan_id=entry.scan_id,
                                      sensor_tag=entry.sensor_tag))
    if args.descriptors:
        save_descriptors(descriptors, args.descriptors)
    timestamps = {e.scan_id: e.timestamp for e in entries}
    header = _config_echo_from_args(args)
    if args.protocol == "cross-sensor":
        pooled, reports = evaluate_cross_sensor(descriptors, matrix, eval_cfg, timestamps)
        tags = sorted(reports)
        retained = sum(r.retained_queries for r in reports.values())
        dropped = sum(r.dropped_queries for r in reports.values())
        pr = []
        for tag in tags:
            pr.extend(reports[tag].pr_curve)
        per_query = []
        for tag in tags:
            per_query.extend(reports[tag].per_query)
        from .retrieval import EvalReport
        combined = EvalReport(pooled, sorted(pr, key=lambda p: (p[1], p[0])),
                              retained, dropped, per_query)
        save_report(combined, args.out, header=header)
        print(f"cross-sensor AR@1 {pooled[0]:.6f} over {retained} queries, "
              f"report at {args.out}")
    else:
        if args.database:
            database = load_descriptors(args.database)
            if database and database[0].vector.size != descriptors[0].vector.size:
                from .errors import ShapeError
                raise ShapeError(
                    f"database descriptor dim {database[0].vector.size} does not "
                    f"match encoder output dim {descriptors[0].vector.size}")
        else:
            database = descriptors
        report = evaluate(descriptors, database, matrix, eval_cfg, timestamps)
        save_report(report, args.out, header=header)
        print(f"AR@1 {report.recall_at_k[0]:.6f} over {report.retained_queries} queries, "
              f"report at {args.out}")
    return 0


# ---------------------------------------------------------------------------
# plot


def _add_plot(sub):
    p = sub.add_parser("plot", help="render recall and precision/recall curves")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True, help="output directory for SVG curves")
    p.set_defaults(func=cmd_plot)
    return p


def cmd_plot(args) -> int:
    from .retrieval import load_report
    report = load_report(args.report)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    ks = list(range(1, len(report.recall_at_k) + 1))
    ax.plot(ks, report.recall_at_k, marker="o")
    ax.set_xlabel("k")
    ax.set_ylabel("average recall@k")
    ax.set_ylim(0.0, 1.02)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out / "recall.svg")
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5, 4))
    if report.pr_curve:
        recalls = [r for _, r in report.pr_curve]
        precisions = [p for p, _ in report.pr_curve]
        ax.plot(recalls, precisions, marker=".")
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0.0, 1.02)
    ax.set_ylim(0.0, 1.02)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out / "pr.svg")
    plt.close(fig)
    print(f"wrote {out / 'recall.svg'} and {out / 'pr.svg'}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scanplace",
        description="synthetic lidar place recognition: data, overlap, descriptors, retrieval")
    sub = parser.add_subparsers(dest="command", required=True)
    for adder in (_add_gen, _add_overlap, _add_mine, _add_train, _add_eval, _add_plot):
        adder(sub)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        if argv and argv[0] in _SUBPARSERS:
            # Parse against the chosen subcommand's own parser so a config
            # file can rewrite its defaults before the final parse.
            chosen = _SUBPARSERS[argv[0]]
            _apply_config_defaults(chosen, argv[1:])
            args = chosen.parse_args(argv[1:])
            args.command = argv[0]
            return args.func(args)
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DatasetIOError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


_SUBPARSERS: dict = {}


def _register_subparsers():
    parser = argparse.ArgumentParser(prog="scanplace")
    sub = parser.add_subparsers(dest="command")
    for name, adder in (("gen", _add_gen), ("overlap", _add_overlap),
                        ("mine", _add_mine), ("train", _add_train),
                        ("eval", _add_eval), ("plot", _add_plot)):
        _SUBPARSERS[name] = adder(sub)


_register_subparsers()


if __name__ == "__main__":
    raise SystemExit(main())
