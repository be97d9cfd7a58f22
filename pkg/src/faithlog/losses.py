"""Loss terms: detection cross-entropy, locator ranking hinge, attention/locator
KL alignment, and the removal-consistency hinge, plus their weighted sum."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from faithlog.errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)

CE_EPS = 1e-7
KL_EPS = 1e-8


@dataclass(frozen=True)
class LossWeights:
    ce: float = 1.0
    rank: float = 0.1
    kl: float = 0.1
    consistency: float = 0.1

    def __post_init__(self):
        if min(self.ce, self.rank, self.kl, self.consistency) < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.ce <= 0:
            raise ConfigError("the cross-entropy weight must be positive")

    def scaled(self, factor: float) -> "LossWeights":
        return LossWeights(self.ce * factor, self.rank * factor, self.kl * factor, self.consistency * factor)


def _t(x):
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(x, dtype=torch.float64)


def ce_loss(confidence, labels) -> torch.Tensor:
    """Summed binary cross-entropy; confidences clamped to [eps, 1 - eps]."""
    p = _t(confidence).clamp(CE_EPS, 1 - CE_EPS)
    y = _t(labels).to(p.dtype)
    if p.shape != y.shape:
        raise ShapeError(f"confidence shape {tuple(p.shape)} != label shape {tuple(y.shape)}")
    return -(y * torch.log(p) + (1 - y) * torch.log(1 - p)).sum()


def rank_loss(normal_scores, anomalous_scores) -> torch.Tensor:
    """Hinge pushing the top anomalous locator score above the top normal one by 1."""
    ln, la = _t(normal_scores), _t(anomalous_scores)
    if ln.numel() == 0 or la.numel() == 0:
        raise ShapeError("rank loss needs non-empty score lists")
    return torch.clamp(1 + ln.max() - la.max(), min=0)


def kl_loss(locator_scores, attention_distribution) -> torch.Tensor:
    """KL(normalized locator || attention distribution), locator side detached."""
    loc, att = _t(locator_scores), _t(attention_distribution)
    if loc.shape != att.shape:
        raise ShapeError(f"locator shape {tuple(loc.shape)} != attention shape {tuple(att.shape)}")
    target = loc.detach() + KL_EPS
    target = target / target.sum()
    return (target * (torch.log(target) - torch.log(att))).sum()


def consistency_loss(p, p_removed) -> torch.Tensor:
    return torch.clamp(1 + _t(p_removed) - _t(p), min=0)


@dataclass
class LossTerms:
    ce: torch.Tensor
    rank: torch.Tensor
    kl: torch.Tensor
    consistency: torch.Tensor

    def as_floats(self) -> dict:
        return {k: float(torch.as_tensor(getattr(self, k)).detach()) for k in ("ce", "rank", "kl", "consistency")}


def combine(terms: LossTerms, weights: LossWeights) -> torch.Tensor:
    return (weights.ce * _t(terms.ce) + weights.rank * _t(terms.rank)
            + weights.kl * _t(terms.kl) + weights.consistency * _t(terms.consistency))


def sample_pairs(labels: Sequence[int], rng: np.random.Generator) -> list:
    """Pair every anomalous item with one uniformly drawn normal item."""
    labels = np.asarray(labels)
    normal = np.flatnonzero(labels == 0)
    anomalous = np.flatnonzero(labels == 1)
    if len(normal) == 0 or len(anomalous) == 0:
        return []
    picks = rng.integers(0, len(normal), size=len(anomalous))
    return [(int(normal[j]), int(a)) for a, j in zip(anomalous, picks)]


def batch_losses(model, emb, mask, labels, pairs: Optional[list] = None,
                 weights: LossWeights = LossWeights()) -> tuple:
    """Forward a padded batch and compute ``(total, LossTerms, output)``.

    ``pairs`` lists (normal_row, anomalous_row) for the rank term; the second,
    perturbed forward pass (top signed event masked) covers anomalous rows
    with at least two events.
    """
    from faithlog.model import argmax_events

    labels = _t(labels).to(torch.float64)
    out = model(emb, mask)
    zero = out.confidence.sum() * 0
    ce = ce_loss(out.confidence, labels)

    rank = zero
    if weights.rank > 0:
        if pairs:
            per_pair = [rank_loss(out.locator[n][mask[n]], out.locator[a][mask[a]]) for n, a in pairs]
            rank = torch.stack(per_pair).mean()
        else:
            logger.debug("batch lacks one class; rank term skipped")

    kl = zero
    if weights.kl > 0:
        per_seq = [kl_loss(out.locator[b][mask[b]], out.distribution[b][mask[b]]) for b in range(emb.shape[0])]
        kl = torch.stack(per_seq).mean()

    cons = zero
    if weights.consistency > 0:
        eligible = torch.nonzero((labels == 1) & (mask.sum(dim=1) >= 2)).flatten()
        if len(eligible):
            top = argmax_events(out.signed[eligible], mask[eligible])
            reduced = mask[eligible].clone()
            reduced[torch.arange(len(eligible)), top] = False
            out2 = model(emb[eligible], reduced)
            cons = consistency_loss(out.confidence[eligible], out2.confidence).mean()

    terms = LossTerms(ce, rank, kl, cons)
    return combine(terms, weights), terms, out
