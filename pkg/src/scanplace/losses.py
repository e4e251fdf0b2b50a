"""Training losses: guided triplets with overlap-adaptive margins plus a
truncated smooth average-precision ranking term.

The margin between classes is driven by a log transform of overlap,
OV(o) = log(beta * o + 1), which amplifies differences between small overlap
values.  The ranking term relaxes each positive's rank with a temperature
sigmoid, averages precision over the top-k positives by similarity, and
returns 1 - AP.  The total loss combines the ranking term over
positive/negative candidates with guided triplet terms over
(positive, semi-positive) and (semi-positive, negative) pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, InvalidParameterError, ShapeError
from .mining import PairClass, classify_pair


@dataclass(frozen=True)
class LossConfig:
    m1: float = 0.02
    m2: float = 0.19
    beta: float = math.e - 1.0
    omega1: float = 0.1
    omega2: float = 0.1
    tsap_top_k: int = 2
    tsap_temperature: float = 0.01

    def __post_init__(self):
        if self.m1 <= 0 or self.m2 <= 0:
            raise InvalidParameterError("margin scales m1 and m2 must be > 0")
        if self.beta <= 0:
            raise InvalidParameterError(f"beta must be > 0, got {self.beta}")
        if self.omega1 < 0 or self.omega2 < 0:
            raise InvalidParameterError("omega weights must be >= 0")
        if self.tsap_top_k < 1:
            raise InvalidParameterError(f"tsap_top_k must be >= 1, got {self.tsap_top_k}")
        if self.tsap_temperature <= 0:
            raise InvalidParameterError(
                f"tsap_temperature must be > 0, got {self.tsap_temperature}")


def overlap_transform(overlap: float, beta: float = math.e - 1.0) -> float:
    """OV(o) = log(beta * o + 1); maps [0, 1] onto [0, log(beta + 1)]."""
    if not 0.0 <= overlap <= 1.0:
        raise InvalidParameterError(f"overlap must lie in [0, 1], got {overlap}")
    if beta <= 0:
        raise InvalidParameterError(f"beta must be > 0, got {beta}")
    return math.log(beta * overlap + 1.0)


def adaptive_margin(kind: str, ov_q_p: float, ov_q_s: float, ov_q_n: float,
                    cfg: LossConfig = LossConfig()) -> float:
    """Margin for a guided triplet from already-transformed overlap values.

    kind "ps": m1 * (OV(q,p) - OV(q,s)); kind "sn": m2 * (OV(q,s) - OV(q,n) + 1).
    """
    if kind == "ps":
        return cfg.m1 * (ov_q_p - ov_q_s)
    if kind == "sn":
        return cfg.m2 * (ov_q_s - ov_q_n + 1.0)
    raise InvalidParameterError(f"kind must be 'ps' or 'sn', got {kind!r}")


def _euclidean(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"descriptor shapes differ: {a.shape} vs {b.shape}")
    diff = ad.sub(a, b)
    return ad.scalar_pow(ad.sum(ad.mul(diff, diff)), 0.5)


def guided_triplet(query: Tensor, closer: Tensor, farther: Tensor,
                   alpha: float) -> Tensor:
    """Hinge on the distance gap: max(d(q, closer) - d(q, farther) + alpha, 0)."""
    gap = ad.add(ad.sub(_euclidean(query, closer), _euclidean(query, farther)),
                 float(alpha))
    return ad.maximum(gap, 0.0)


def tsap_loss(query: Tensor, candidates, relevant,
              cfg: LossConfig = LossConfig()) -> Tensor:
    """Truncated smooth average precision over a candidate list.

    Similarity is the dot product with the query (descriptors are unit norm).
    The top-k most similar relevant candidates are selected; each contributes
    the sigmoid-relaxed precision at its rank, where every other relevant
    candidate and every irrelevant candidate shifts the rank through
    sigmoid((s_other - s_self) / temperature).  Returns 1 - mean precision.
    """
    candidates = list(candidates)
    relevant = [bool(r) for r in relevant]
    if len(candidates) != len(relevant):
        raise ShapeError(f"{len(candidates)} candidates but {len(relevant)} relevance flags")
    pos_idx = [i for i, r in enumerate(relevant) if r]
    neg_idx = [i for i, r in enumerate(relevant) if not r]
    if not pos_idx:
        raise ContractError("ranking loss needs at least one relevant candidate")
    if not neg_idx:
        raise ContractError("ranking loss needs at least one irrelevant candidate")

    sims = [ad.sum(ad.mul(query, c)) for c in candidates]
    sim_values = np.array([s.item() for s in sims])
    # selection is detached: ranks of the k most similar positives are averaged
    order = sorted(pos_idx, key=lambda i: (-sim_values[i], i))
    chosen = order[:cfg.tsap_top_k]

    inv_t = 1.0 / cfg.tsap_temperature
    precisions = []
    for i in chosen:
        rank_pos = Tensor(np.array(1.0))
        for j in pos_idx:
            if j == i:
                continue
            rank_pos = ad.add(rank_pos, ad.sigmoid(ad.mul(ad.sub(sims[j], sims[i]), inv_t)))
        rank_all = rank_pos
        for j in neg_idx:
            rank_all = ad.add(rank_all, ad.sigmoid(ad.mul(ad.sub(sims[j], sims[i]), inv_t)))
        precisions.append(ad.div(rank_pos, rank_all))
    ap = precisions[0]
    for p in precisions[1:]:
        ap = ad.add(ap, p)
    ap = ad.mul(ap, 1.0 / len(precisions))
    return ad.sub(1.0, ap)


@dataclass
class BatchEmbedding:
    """One training tuple's descriptors plus their overlaps with the query."""

    query: Tensor
    positives: list
    semi_positives: list
    negatives: list
    positive_overlaps: list = field(default_factory=list)
    semi_positive_overlaps: list = field(default_factory=list)
    negative_overlaps: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.positives) != len(self.positive_overlaps):
            raise ShapeError("positives and positive_overlaps lengths differ")
        if len(self.semi_positives) != len(self.semi_positive_overlaps):
            raise ShapeError("semi_positives and semi_positive_overlaps lengths differ")
        if len(self.negatives) != len(self.negative_overlaps):
            raise ShapeError("negatives and negative_overlaps lengths differ")
        if not self.positives:
            raise ContractError("a batch needs at least one positive")
        if not self.negatives:
            raise ContractError("a batch needs at least one negative")
        dim = self.query.shape
        for t in (*self.positives, *self.semi_positives, *self.negatives):
            if t.shape != dim:
                raise ShapeError(f"descriptor shape {t.shape} does not match query {dim}")
        for o in self.positive_overlaps:
            if classify_pair(o) is not PairClass.POSITIVE:
                raise ContractError(f"positive overlap {o} is not in the positive class")
        for o in self.semi_positive_overlaps:
            if classify_pair(o) is not PairClass.SEMI_POSITIVE:
                raise ContractError(f"semi-positive overlap {o} is not in the semi-positive class")
        for o in self.negative_overlaps:
            if o != 0.0:
                raise ContractError(f"negative overlap must be 0, got {o}")


def loss_terms(batch: BatchEmbedding, cfg: LossConfig = LossConfig()):
    """Returns (total, ranking, guided_ps, guided_sn) scalar tensors.

    The ranking term sees positives as relevant and negatives as irrelevant;
    semi-positives appear only in the guided terms.  With no semi-positives
    both guided terms are exactly zero.
    """
    candidates = batch.positives + batch.negatives
    flags = [True] * len(batch.positives) + [False] * len(batch.negatives)
    ranking = tsap_loss(batch.query, candidates, flags, cfg)

    zero = Tensor(np.array(0.0))
    guided_ps = zero
    guided_sn = zero
    if batch.semi_positives:
        ps_terms = []
        for p, o_p in zip(batch.positives, batch.positive_overlaps):
            for s, o_s in zip(batch.semi_positives, batch.semi_positive_overlaps):
                alpha = adaptive_margin("ps", overlap_transform(o_p, cfg.beta),
                                        overlap_transform(o_s, cfg.beta), 0.0, cfg)
                ps_terms.append(guided_triplet(batch.query, p, s, alpha))
        sn_terms = []
        for s, o_s in zip(batch.semi_positives, batch.semi_positive_overlaps):
            for n, _ in zip(batch.negatives, batch.negative_overlaps):
                alpha = adaptive_margin("sn", 0.0, overlap_transform(o_s, cfg.beta),
                                        overlap_transform(0.0, cfg.beta), cfg)
                sn_terms.append(guided_triplet(batch.query, s, n, alpha))

        def average(terms):
            acc = terms[0]
            for t in terms[1:]:
                acc = ad.add(acc, t)
            return ad.mul(acc, 1.0 / len(terms))

        guided_ps = average(ps_terms)
        guided_sn = average(sn_terms)
    total = ad.add(ranking, ad.add(ad.mul(guided_ps, cfg.omega1),
                                   ad.mul(guided_sn, cfg.omega2)))
    return total, ranking, guided_ps, guided_sn


def total_loss(batch: BatchEmbedding, cfg: LossConfig = LossConfig()) -> Tensor:
    """Scalar training loss for one batch; see loss_terms for the parts."""
    return loss_terms(batch, cfg)[0]
