"""Training tuple mining from an overlap matrix.

Pairs are classed by symmetric overlap: positive above 0.5, semi-positive in
(0, 0.5], negative at exactly 0.  Each query with at least one positive and
one negative yields a tuple of sampled positives, semi-positives, and
negatives together with their overlap values.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DatasetIOError,
    EmptyMiningError,
    InvalidParameterError,
)
from .overlap import OverlapMatrix


class PairClass(enum.Enum):
    POSITIVE = "positive"
    SEMI_POSITIVE = "semi-positive"
    NEGATIVE = "negative"


def classify_pair(overlap: float) -> PairClass:
    """Class from a symmetric overlap value; 0.5 itself is semi-positive."""
    if not 0.0 <= overlap <= 1.0:
        raise InvalidParameterError(f"overlap must lie in [0, 1], got {overlap}")
    if overlap > 0.5:
        return PairClass.POSITIVE
    if overlap > 0.0:
        return PairClass.SEMI_POSITIVE
    return PairClass.NEGATIVE


@dataclass(frozen=True)
class TrainingTuple:
    query_id: str
    positive_ids: list
    semi_positive_ids: list
    negative_ids: list
    overlaps: dict   # (query_id, other_id) -> overlap value

    def __post_init__(self):
        for field_name in ("positive_ids", "semi_positive_ids", "negative_ids"):
            object.__setattr__(self, field_name, list(getattr(self, field_name)))
        listed = self.positive_ids + self.semi_positive_ids + self.negative_ids
        if self.query_id in listed:
            raise InvalidParameterError("query cannot appear among its own candidates")
        if len(set(listed)) != len(listed):
            raise InvalidParameterError("candidate lists must be disjoint")
        missing = [s for s in listed if (self.query_id, s) not in self.overlaps]
        if missing:
            raise InvalidParameterError(f"overlaps missing for {missing}")
        for sid in self.positive_ids:
            if classify_pair(self.overlap_with(sid)) is not PairClass.POSITIVE:
                raise InvalidParameterError(
                    f"{sid!r} listed positive with overlap {self.overlap_with(sid)}")
        for sid in self.semi_positive_ids:
            if classify_pair(self.overlap_with(sid)) is not PairClass.SEMI_POSITIVE:
                raise InvalidParameterError(
                    f"{sid!r} listed semi-positive with overlap {self.overlap_with(sid)}")
        for sid in self.negative_ids:
            if classify_pair(self.overlap_with(sid)) is not PairClass.NEGATIVE:
                raise InvalidParameterError(
                    f"{sid!r} listed negative with overlap {self.overlap_with(sid)}")

    def overlap_with(self, other_id: str) -> float:
        return self.overlaps[(self.query_id, other_id)]


def mine_tuples(matrix: OverlapMatrix,
                per_class_counts: tuple[int, int, int] = (2, 2, 8),
                seed: int = 0,
                sensor_tags: dict | None = None,
                same_sensor_only: bool = False) -> list[TrainingTuple]:
    """Sample one tuple per eligible query, in scan id order.

    A query is eligible when it has at least one positive and one negative
    candidate.  Up to (n_pos, n_semi, n_neg) candidates are drawn per class
    without replacement with a seeded generator.  With same_sensor_only the
    candidate pool is restricted to scans sharing the query's sensor tag
    (sensor_tags must then map every scan id to its tag).
    """
    n_pos, n_semi, n_neg = per_class_counts
    if n_pos < 1 or n_semi < 1 or n_neg < 1:
        raise InvalidParameterError(f"per-class counts must be >= 1, got {per_class_counts}")
    if same_sensor_only and sensor_tags is None:
        raise InvalidParameterError("same_sensor_only requires a sensor_tags map")
    rng = np.random.default_rng(seed)
    tuples = []
    ids = matrix.scan_ids
    for qi, query_id in enumerate(ids):
        pools = {PairClass.POSITIVE: [], PairClass.SEMI_POSITIVE: [], PairClass.NEGATIVE: []}
        for ci, cand_id in enumerate(ids):
            if ci == qi:
                continue
            if same_sensor_only and sensor_tags[cand_id] != sensor_tags[query_id]:
                continue
            pools[classify_pair(float(matrix.values[qi, ci]))].append(cand_id)
        if not pools[PairClass.POSITIVE] or not pools[PairClass.NEGATIVE]:
            continue

        def draw(pool, count):
            if not pool:
                return ()
            take = min(count, len(pool))
            picked = rng.choice(len(pool), size=take, replace=False)
            return tuple(pool[i] for i in sorted(picked))

        pos = draw(pools[PairClass.POSITIVE], n_pos)
        semi = draw(pools[PairClass.SEMI_POSITIVE], n_semi)
        neg = draw(pools[PairClass.NEGATIVE], n_neg)
        overlaps = {(query_id, sid): float(matrix.values[qi, matrix.index(sid)])
                    for sid in pos + semi + neg}
        tuples.append(TrainingTuple(query_id, list(pos), list(semi), list(neg),
                                    overlaps))
    if not tuples:
        raise EmptyMiningError("no query has both a positive and a negative candidate")
    return tuples


def save_tuples(tuples, path, header: dict | None = None) -> None:
    """One line per tuple: query | p:... | s:... | n:... | o:id=value,..."""
    lines = ["# training-tuples v1"]
    for key, value in (header or {}).items():
        lines.append(f"# {key}={value}")
    for t in tuples:
        over = ",".join(f"{sid}={t.overlap_with(sid):.6f}"
                        for sid in t.positive_ids + t.semi_positive_ids + t.negative_ids)
        lines.append(f"{t.query_id} | p:{','.join(t.positive_ids)} | "
                     f"s:{','.join(t.semi_positive_ids)} | "
                     f"n:{','.join(t.negative_ids)} | o:{over}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_tuples(path) -> list[TrainingTuple]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DatasetIOError(
            f"cannot read tuples {path}: {exc}; run the mine command to produce it first") from exc
    tuples = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split("|")]
        if len(parts) != 5:
            raise DatasetIOError(f"tuples {path}:{lineno}: expected 5 fields, got {len(parts)}")
        query_id = parts[0]
        fields = {}
        for part, prefix in zip(parts[1:], ("p:", "s:", "n:", "o:")):
            if not part.startswith(prefix):
                raise DatasetIOError(f"tuples {path}:{lineno}: expected {prefix!r} field")
            fields[prefix] = part[2:].strip()

        def split_ids(text_ids):
            return [s for s in (x.strip() for x in text_ids.split(",")) if s]

        overlaps = {}
        for pair in split_ids(fields["o:"]):
            sid, _, value = pair.partition("=")
            try:
                overlaps[(query_id, sid)] = float(value)
            except ValueError as exc:
                raise DatasetIOError(f"tuples {path}:{lineno}: bad overlap {pair!r}") from exc
        tuples.append(TrainingTuple(query_id, split_ids(fields["p:"]),
                                    split_ids(fields["s:"]), split_ids(fields["n:"]),
                                    overlaps))
    if not tuples:
        raise DatasetIOError(f"tuples file {path} lists no tuples")
    return tuples
