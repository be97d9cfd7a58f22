"""Mini-batch training of the dual-pathway detector on the combined objective."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import torch

from faithlog.errors import ConfigError
from faithlog.losses import LossWeights, batch_losses, sample_pairs
from faithlog.model import DTYPE, FaithLogModel, ModelConfig

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-3
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.epochs < 1 or self.learning_rate <= 0:
            raise ConfigError("epochs must be >= 1 and learning_rate > 0")
        if self.batch_size < 1 or (self.weights.rank > 0 and self.batch_size < 2):
            raise ConfigError("batch_size must be >= 2 when the rank term is enabled")
        if self.model.seed != self.seed:
            self.model = replace(self.model, seed=self.seed)

    @classmethod
    def baseline(cls, **kwargs) -> "TrainConfig":
        """Naive-attention ablation: detection loss only, no negative pathway."""
        model = kwargs.pop("model", ModelConfig())
        return cls(weights=LossWeights(1.0, 0.0, 0.0, 0.0), model=replace(model, negative_pathway=False), **kwargs)


@dataclass
class EpochLog:
    epoch: int
    total: float
    ce: float
    rank: float
    kl: float
    consistency: float
    heldout_f1: float = float("nan")

    def csv(self) -> str:
        return ",".join([str(self.epoch)] + [repr(float(getattr(self, k))) for k in
                                             ("total", "ce", "rank", "kl", "consistency", "heldout_f1")])


LOG_HEADER = "epoch,total,ce,rank,kl,consistency,heldout_f1"


@dataclass
class FitResult:
    model: FaithLogModel
    log: list
    seed: int


def pad_ids(sequences: Sequence) -> tuple:
    """Stack event ids into a zero-padded (N, n_max) tensor plus a validity mask."""
    n_max = max(len(s.events) for s in sequences)
    ids = torch.zeros(len(sequences), n_max, dtype=torch.long)
    mask = torch.zeros(len(sequences), n_max, dtype=torch.bool)
    for i, s in enumerate(sequences):
        ids[i, : len(s.events)] = torch.tensor(s.events)
        mask[i, : len(s.events)] = True
    return ids, mask


def _embed(provider, ids, mask):
    # padding slots reuse a real id so lookups stay valid; they are masked anyway
    fill = ids.masked_fill(~mask, int(ids[mask][0]))
    return provider.lookup(fill, dtype=DTYPE)


def stratified_batches(labels: Sequence[int], batch_size: int, rng: np.random.Generator,
                       stratify: bool = True) -> list:
    labels = np.asarray(labels)
    n = len(labels)
    if not stratify:
        order = rng.permutation(n)
        return [order[i : i + batch_size] for i in range(0, n, batch_size)]
    normal = rng.permutation(np.flatnonzero(labels == 0))
    anomalous = rng.permutation(np.flatnonzero(labels == 1))
    n_batches = max(1, min(math.ceil(n / batch_size), len(normal), len(anomalous)))
    batches = [np.concatenate([a, b]) for a, b in
               zip(np.array_split(normal, n_batches), np.array_split(anomalous, n_batches))]
    return [rng.permutation(b) for b in batches]


@torch.no_grad()
def predict(model: FaithLogModel, provider, sequences: Sequence, batch_size: int = 256) -> np.ndarray:
    out = []
    for start in range(0, len(sequences), batch_size):
        chunk = sequences[start : start + batch_size]
        ids, mask = pad_ids(chunk)
        out.append(model(_embed(provider, ids, mask), mask).confidence.numpy())
    return np.concatenate(out) if out else np.zeros(0)


def f1_score(labels, predictions) -> float:
    labels = np.asarray(labels, dtype=bool)
    predictions = np.asarray(predictions, dtype=bool)
    tp = int(np.sum(labels & predictions))
    fp = int(np.sum(~labels & predictions))
    fn = int(np.sum(labels & ~predictions))
    if tp == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


def detection_f1(model, provider, sequences, threshold: float = 0.5) -> float:
    p = predict(model, provider, sequences)
    return f1_score([s.label for s in sequences], p >= threshold)


def fit(sequences: Sequence, provider, config: TrainConfig = TrainConfig(),
        heldout: Optional[Sequence] = None) -> FitResult:
    sequences = list(sequences)
    if not sequences:
        raise ConfigError("cannot train on an empty dataset")
    labels = np.array([s.label for s in sequences])
    if config.weights.rank > 0 and (labels.min() == labels.max()):
        raise ConfigError("the rank term needs both normal and anomalous sequences")

    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    model = FaithLogModel(config.model)
    params = list(model.parameters())
    if isinstance(provider, torch.nn.Module):
        params += list(provider.parameters())
    optimizer = torch.optim.Adam(params, lr=config.learning_rate)

    ids, mask = pad_ids(sequences)
    static_emb = None if isinstance(provider, torch.nn.Module) else _embed(provider, ids, mask)
    y = torch.as_tensor(labels, dtype=DTYPE)

    log = []
    for epoch in range(1, config.epochs + 1):
        model.train()
        sums = dict(total=0.0, ce=0.0, rank=0.0, kl=0.0, consistency=0.0)
        batches = stratified_batches(labels, config.batch_size, rng, stratify=config.weights.rank > 0)
        for batch in batches:
            idx = torch.as_tensor(batch)
            m = mask[idx]
            width = int(m.sum(dim=1).max())
            m = m[:, :width]
            emb = (static_emb[idx] if static_emb is not None else _embed(provider, ids[idx], mask[idx]))[:, :width]
            pairs = sample_pairs(labels[batch], rng) if config.weights.rank > 0 else None
            total, terms, _ = batch_losses(model, emb, m, y[idx], pairs, config.weights)
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            sums["total"] += float(total.detach())
            for k, v in terms.as_floats().items():
                sums[k] += v
        row = EpochLog(epoch, **{k: v / len(batches) for k, v in sums.items()})
        if heldout:
            model.eval()
            row.heldout_f1 = detection_f1(model, provider, heldout)
        logger.info("epoch %d: %s", epoch, row.csv())
        log.append(row)
    model.eval()
    return FitResult(model, log, config.seed)
