"""Momentum gradient descent over training tuples.

Each step encodes one tuple's scans with the current weights, computes the
combined loss, backpropagates, and applies a momentum update.  The learning
rate drops by a fixed factor at two milestones.  Everything is seeded, so a
run is reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .encoder import EncoderConfig, PreparedScan, encode_prepared, init_weights
from .errors import ContractError, InvalidParameterError
from .losses import BatchEmbedding, LossConfig, loss_terms


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 200
    learning_rate: float = 0.001
    momentum: float = 0.9
    milestones: tuple = (0.6, 0.85)   # fractions of total steps
    decay: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0:
            raise InvalidParameterError(f"steps must be >= 0, got {self.steps}")
        if self.learning_rate <= 0:
            raise InvalidParameterError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidParameterError(f"momentum must lie in [0, 1), got {self.momentum}")
        if len(self.milestones) != 2 or not 0 < self.milestones[0] <= self.milestones[1] <= 1:
            raise InvalidParameterError(f"milestones must be two fractions in (0, 1], got {self.milestones}")
        if not 0 < self.decay <= 1:
            raise InvalidParameterError(f"decay must lie in (0, 1], got {self.decay}")


@dataclass
class StepRecord:
    step: int
    ranking: float
    guided_ps: float
    guided_sn: float
    total: float


def batch_from_tuple(tup, prepared: dict, weights: dict,
                     enc_cfg: EncoderConfig) -> BatchEmbedding:
    """Encode every scan of a training tuple into one differentiable batch."""

    def enc(scan_id):
        prep = prepared.get(scan_id)
        if prep is None:
            raise ContractError(f"no prepared scan for id {scan_id!r}")
        return encode_prepared(prep, weights, enc_cfg)

    return BatchEmbedding(
        query=enc(tup.query_id),
        positives=[enc(s) for s in tup.positive_ids],
        semi_positives=[enc(s) for s in tup.semi_positive_ids],
        negatives=[enc(s) for s in tup.negative_ids],
        positive_overlaps=[tup.overlap_with(s) for s in tup.positive_ids],
        semi_positive_overlaps=[tup.overlap_with(s) for s in tup.semi_positive_ids],
        negative_overlaps=[tup.overlap_with(s) for s in tup.negative_ids],
    )


def learning_rate_at(step: int, cfg: TrainConfig) -> float:
    """Piecewise-constant schedule with two decay milestones."""
    lr = cfg.learning_rate
    first = int(cfg.milestones[0] * cfg.steps)
    second = int(cfg.milestones[1] * cfg.steps)
    if step >= first:
        lr *= cfg.decay
    if step >= second:
        lr *= cfg.decay
    return lr


def train(tuples, prepared: dict, enc_cfg: EncoderConfig,
          loss_cfg: LossConfig = LossConfig(),
          train_cfg: TrainConfig = TrainConfig(),
          weights: dict | None = None,
          log_path=None):
    """Run momentum SGD and return (weights, history of StepRecord).

    With steps=0 the initialized weights are returned untouched, which gives
    a reproducible untrained baseline.
    """
    tuples = list(tuples)
    if not tuples:
        raise ContractError("no training tuples supplied")
    if weights is None:
        weights = init_weights(enc_cfg, seed=train_cfg.seed)
    velocity = {name: np.zeros_like(t.data) for name, t in weights.items()}
    rng = np.random.default_rng(train_cfg.seed)
    order = []
    history = []
    for step in range(train_cfg.steps):
        if not order:
            order = list(rng.permutation(len(tuples)))
        tup = tuples[order.pop()]
        batch = batch_from_tuple(tup, prepared, weights, enc_cfg)
        total, ranking, g_ps, g_sn = loss_terms(batch, loss_cfg)
        ad.backward(total)
        lr = learning_rate_at(step, train_cfg)
        for name, t in weights.items():
            grad = t.grad if t.grad is not None else np.zeros_like(t.data)
            t.grad = None   # a weight unused next step must not reuse this gradient
            velocity[name] = train_cfg.momentum * velocity[name] - lr * grad
            t.data += velocity[name]
        history.append(StepRecord(step, ranking.item(), g_ps.item(),
                                  g_sn.item(), total.item()))
    if log_path is not None:
        write_training_log(history, log_path)
    return weights, history


def write_training_log(history, path, header: dict | None = None) -> None:
    """One line per step: step index and the loss terms."""
    lines = ["# training-log v1"]
    for key, value in (header or {}).items():
        lines.append(f"# {key}={value}")
    lines.append("# step ranking guided_ps guided_sn total")
    for rec in history:
        lines.append(f"{rec.step} {rec.ranking:.6f} {rec.guided_ps:.6f} "
                     f"{rec.guided_sn:.6f} {rec.total:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")
