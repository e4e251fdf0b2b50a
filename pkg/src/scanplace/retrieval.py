"""Exact nearest-neighbor retrieval and recall/precision evaluation.

Correctness of a retrieval is defined by the symmetric overlap between query
and candidate exceeding a threshold.  Candidates too close in time to the
query are excluded before ranking; queries with no correct candidate left in
the database are dropped from the recall denominator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import Descriptor
from .errors import (
    ContractError,
    DatasetIOError,
    InvalidParameterError,
    ShapeError,
)
from .overlap import OverlapMatrix


@dataclass(frozen=True)
class EvalConfig:
    correctness_overlap: float = 0.5
    exclusion_window: float = 30.0   # seconds; 0 disables temporal exclusion
    k_max: int = 10

    def __post_init__(self):
        if not 0.0 <= self.correctness_overlap < 1.0:
            raise InvalidParameterError(
                f"correctness_overlap must lie in [0, 1), got {self.correctness_overlap}")
        if self.exclusion_window < 0:
            raise InvalidParameterError(
                f"exclusion_window must be >= 0, got {self.exclusion_window}")
        if self.k_max < 1:
            raise InvalidParameterError(f"k_max must be >= 1, got {self.k_max}")


def knn_search(query, database, k: int):
    """k nearest database descriptors by Euclidean distance.

    Returns a list of (scan_id, distance) sorted ascending; exact distance
    ties are broken by lexicographic scan id, so results are deterministic.
    """
    if k < 1:
        raise InvalidParameterError(f"k must be >= 1, got {k}")
    if not database:
        raise ContractError("database is empty")
    qvec = query.vector if isinstance(query, Descriptor) else np.asarray(query, dtype=np.float64)
    mat = np.stack([d.vector for d in database])
    if mat.shape[1] != qvec.size:
        raise ShapeError(f"query dim {qvec.size} does not match database dim {mat.shape[1]}")
    dists = np.linalg.norm(mat - qvec, axis=1)
    order = sorted(range(len(database)), key=lambda i: (dists[i], database[i].scan_id))
    return [(database[i].scan_id, float(dists[i])) for i in order[:k]]


@dataclass
class QueryResult:
    query_id: str
    ranked_ids: list
    ranked_distances: list
    first_correct_rank: int | None   # 1-based; None when nothing correct was ranked
    top1_correct: bool


@dataclass
class EvalReport:
    recall_at_k: list                 # AR@1..AR@k_max over retained queries
    pr_curve: list                    # (precision, recall) pairs from top-1 sweep
    retained_queries: int
    dropped_queries: int
    per_query: list = field(default_factory=list)

    def recall(self, k: int) -> float:
        return self.recall_at_k[k - 1]


def evaluate(queries, database, matrix: OverlapMatrix,
             cfg: EvalConfig = EvalConfig(), timestamps: dict | None = None) -> EvalReport:
    """Recall@k and a precision/recall sweep for a query set against a database.

    timestamps maps scan id -> seconds; when provided and exclusion_window > 0,
    database candidates within the window of the query's own timestamp are
    removed before ranking (the query itself always falls inside the window).
    A candidate is correct when its overlap with the query exceeds
    cfg.correctness_overlap strictly.
    """
    queries = list(queries)
    database = list(database)
    if not queries:
        raise ContractError("no queries to evaluate")
    if not database:
        raise ContractError("database is empty")
    dim = queries[0].vector.size
    for d in queries + database:
        if d.vector.size != dim:
            raise ShapeError(f"descriptor dim {d.vector.size} for {d.scan_id!r} "
                             f"does not match {dim}")

    per_query = []
    retained = 0
    dropped = 0
    for q in queries:
        candidates = database
        if timestamps is not None and cfg.exclusion_window > 0:
            tq = timestamps[q.scan_id]
            candidates = [d for d in database
                          if abs(timestamps[d.scan_id] - tq) > cfg.exclusion_window]
        if not candidates:
            dropped += 1
            continue
        correct = {d.scan_id for d in candidates
                   if matrix.value(q.scan_id, d.scan_id) > cfg.correctness_overlap}
        if not correct:
            dropped += 1
            continue
        retained += 1
        ranked = knn_search(q, candidates, cfg.k_max)
        ids = [sid for sid, _ in ranked]
        dists = [dist for _, dist in ranked]
        first = None
        for rank, sid in enumerate(ids, start=1):
            if sid in correct:
                first = rank
                break
        per_query.append(QueryResult(q.scan_id, ids, dists, first, first == 1))
    if retained == 0:
        raise ContractError("every query was dropped: no correct candidates in the database")

    recall_at_k = []
    for k in range(1, cfg.k_max + 1):
        hits = sum(1 for r in per_query
                           if r.first_correct_rank is not None and r.first_correct_rank <= k)
        recall_at_k.append(hits / retained)

    pr_curve = _pr_from_top1(per_query)
    return EvalReport(recall_at_k, pr_curve, retained, dropped, per_query)


def _pr_from_top1(per_query) -> list:
    """Threshold sweep over top-1 distances: accept when distance <= threshold."""
    pairs = [(r.ranked_distances[0], r.top1_correct) for r in per_query]
    total = len(pairs)
    curve = []
    for threshold in sorted({d for d, _ in pairs}):
        accepted = [(d, ok) for d, ok in pairs if d <= threshold]
        tp = sum(1 for _, ok in accepted if ok)
        precision = tp / len(accepted)
        recall = tp / total
        curve.append((precision, recall))
    return curve


def evaluate_cross_sensor(descriptors, matrix: OverlapMatrix,
                          cfg: EvalConfig = EvalConfig(),
                          timestamps: dict | None = None):
    """Heterogeneous protocol: each sensor tag in turn forms the database and
    all other tags' scans are the queries.

    Returns (pooled recall@k list, dict tag -> EvalReport).  Pooling weights
    each database choice by its retained query count.
    """
    descriptors = list(descriptors)
    tags = sorted({d.sensor_tag for d in descriptors})
    if len(tags) < 2:
        raise ContractError("cross-sensor evaluation needs at least two sensor tags")
    reports = {}
    k_len = cfg.k_max
    hit_counts = np.zeros(k_len)
    total_retained = 0
    for tag in tags:
        db = [d for d in descriptors if d.sensor_tag == tag]
        qs = [d for d in descriptors if d.sensor_tag != tag]
        report = evaluate(qs, db, matrix, cfg, timestamps)
        reports[tag] = report
        hit_counts += np.array(report.recall_at_k) * report.retained_queries
        total_retained += report.retained_queries
    pooled = list(hit_counts / total_retained)
    return pooled, reports


def save_report(report: EvalReport, path, header: dict | None = None) -> None:
    """Text table: recall@k block, then the precision/recall sweep."""
    lines = ["# eval-report v1"]
    for key, value in (header or {}).items():
        lines.append(f"# {key}={value}")
    lines.append(f"retained_queries {report.retained_queries}")
    lines.append(f"dropped_queries {report.dropped_queries}")
    for k, r in enumerate(report.recall_at_k, start=1):
        lines.append(f"recall@{k} {r:.6f}")
    for precision, recall in report.pr_curve:
        lines.append(f"pr {precision:.6f} {recall:.6f}")
    for q in report.per_query:
        first = q.first_correct_rank if q.first_correct_rank is not None else -1
        lines.append(f"query {q.query_id} top1={q.ranked_ids[0]} "
                     f"dist={q.ranked_distances[0]:.6f} first_correct_rank={first}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_report(path) -> EvalReport:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DatasetIOError(
            f"cannot read eval report {path}: {exc}; "
            f"run the eval command to produce it first") from exc
    recall_at_k = []
    pr_curve = []
    retained = 0
    dropped = 0
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#") or line.startswith("query "):
            continue
        parts = line.split()
        if parts[0] == "retained_queries":
            retained = int(parts[1])
        elif parts[0] == "dropped_queries":
            dropped = int(parts[1])
        elif parts[0].startswith("recall@"):
            recall_at_k.append(float(parts[1]))
        elif parts[0] == "pr":
            pr_curve.append((float(parts[1]), float(parts[2])))
    return EvalReport(recall_at_k, pr_curve, retained, dropped)
