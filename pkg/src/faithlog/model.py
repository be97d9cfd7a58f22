"""Dual-pathway attention encoder with a detector head and a per-event locator.

Each attention layer runs two independent scaled-dot-product attentions (a
positive and a negative pathway, each with its own Q/K/V projections) and
subtracts the negative output from the positive one. The per-event signed
attention score is the mean attention mass an event receives from all heads
and query rows in the final layer, positive minus negative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
import torch
from torch import nn

from faithlog.errors import ConfigError, ShapeError

DTYPE = torch.float64


@dataclass
class ModelConfig:
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    hidden: int = 128
    negative_pathway: bool = True
    seed: int = 0
    temperature: float = 1.0  # softmax temperature turning signed scores into a distribution

    def __post_init__(self):
        for name in ("d_model", "n_heads", "n_layers", "hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"n_heads={self.n_heads} does not divide d_model={self.d_model}")
        if self.d_model % 2:
            raise ConfigError(f"d_model must be even for sinusoidal positions, got {self.d_model}")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads


def positional_encoding(i: int, d_model: int) -> np.ndarray:
    if d_model % 2:
        raise ConfigError(f"d_model must be even, got {d_model}")
    if i < 0:
        raise ValueError("position must be non-negative")
    return positional_encodings(torch.tensor([i]), d_model)[0].numpy()


def positional_encodings(positions: torch.Tensor, d_model: int) -> torch.Tensor:
    """Sinusoidal encodings for integer ``positions`` of any shape -> ``(*shape, d_model)``."""
    if d_model % 2:
        raise ConfigError(f"d_model must be even, got {d_model}")
    pos = positions.to(DTYPE).unsqueeze(-1)
    two_j = torch.arange(0, d_model, 2, dtype=DTYPE)
    angle = pos / torch.pow(torch.tensor(10000.0, dtype=DTYPE), two_j / d_model)
    out = torch.empty(*positions.shape, d_model, dtype=DTYPE)
    out[..., 0::2] = torch.sin(angle)
    out[..., 1::2] = torch.cos(angle)
    return out


@dataclass
class AttentionProfile:
    signed_scores: np.ndarray
    distribution: np.ndarray

    @property
    def argmax_index(self) -> int:
        # np.argmax returns the first maximal index
        return int(np.argmax(self.signed_scores))


@dataclass
class DetectionResult:
    confidence: float
    decision: str
    attention: AttentionProfile
    locator_scores: np.ndarray
    positions: np.ndarray = field(default=None)  # surviving original positions

    @property
    def anomalous(self) -> bool:
        return self.decision == "anomalous"


class ForwardOutput(NamedTuple):
    features: torch.Tensor      # (B, n, d)
    signed: torch.Tensor        # (B, n), zero at masked events
    distribution: torch.Tensor  # (B, n), zero at masked events
    confidence: torch.Tensor    # (B,)
    locator: torch.Tensor       # (B, n)
    attention: list             # per layer: (pos weights, neg weights or None), each (B, h, n, n)
    mask: torch.Tensor          # (B, n) bool, True = event present


class DualPathwayAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int, negative: bool = True):
        super().__init__()
        self.n_heads = n_heads
        self.d_k = d_model // n_heads
        self.q_pos = nn.Linear(d_model, d_model, bias=False, dtype=DTYPE)
        self.k_pos = nn.Linear(d_model, d_model, bias=False, dtype=DTYPE)
        self.v_pos = nn.Linear(d_model, d_model, bias=False, dtype=DTYPE)
        self.negative = negative
        if negative:
            self.q_neg = nn.Linear(d_model, d_model, bias=False, dtype=DTYPE)
            self.k_neg = nn.Linear(d_model, d_model, bias=False, dtype=DTYPE)
            self.v_neg = nn.Linear(d_model, d_model, bias=False, dtype=DTYPE)

    def _split(self, x):
        b, n, _ = x.shape
        return x.view(b, n, self.n_heads, self.d_k).transpose(1, 2)

    def _attend(self, x, q, k, v, key_mask):
        q, k, v = self._split(q(x)), self._split(k(x)), self._split(v(x))
        logits = q @ k.transpose(-1, -2) / math.sqrt(self.d_k)
        logits = logits.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        weights = torch.softmax(logits, dim=-1)
        return weights @ v, weights

    def _merge(self, x):
        b, h, n, dk = x.shape
        return x.transpose(1, 2).reshape(b, n, h * dk)

    def forward(self, x: torch.Tensor, mask: torch.Tensor):
        out_pos, w_pos = self._attend(x, self.q_pos, self.k_pos, self.v_pos, mask)
        if not self.negative:
            return self._merge(out_pos), w_pos, None
        out_neg, w_neg = self._attend(x, self.q_neg, self.k_neg, self.v_neg, mask)
        return self._merge(out_pos - out_neg), w_pos, w_neg


class EncoderBlock(nn.Module):
    """Dual attention, then residual + layer norm + position-wise feed-forward (post-norm)."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        d = config.d_model
        self.attn = DualPathwayAttention(d, config.n_heads, config.negative_pathway)
        self.norm1 = nn.LayerNorm(d, dtype=DTYPE)
        self.ff1 = nn.Linear(d, config.hidden, dtype=DTYPE)
        self.ff2 = nn.Linear(config.hidden, d, dtype=DTYPE)
        self.norm2 = nn.LayerNorm(d, dtype=DTYPE)

    def forward(self, x, mask):
        a, w_pos, w_neg = self.attn(x, mask)
        x = self.norm1(x + a)
        x = self.norm2(x + self.ff2(torch.nn.functional.gelu(self.ff1(x))))
        return x, w_pos, w_neg


class _Head(nn.Module):
    def __init__(self, d_model, hidden, bias=True, activation=nn.functional.gelu):
        super().__init__()
        self.fc1 = nn.Linear(d_model, hidden, bias=bias, dtype=DTYPE)
        self.fc2 = nn.Linear(hidden, 1, bias=bias, dtype=DTYPE)
        self.activation = activation

    def forward(self, x):
        return torch.sigmoid(self.fc2(self.activation(self.fc1(x)))).squeeze(-1)


class FaithLogModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.layers = nn.ModuleList(EncoderBlock(config) for _ in range(config.n_layers))
        self.detector = _Head(config.d_model, config.hidden)
        # bias-free and zero-centred: pushing normal templates down must not drag
        # down anomaly templates that never win the max of the ranking hinge
        self.locator = _Head(config.d_model, config.hidden, bias=False, activation=torch.tanh)
        self.reset_parameters(config.seed)

    def reset_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for module in self.modules():
                if isinstance(module, nn.Linear):
                    bound = 1.0 / math.sqrt(module.in_features)
                    for p in (module.weight, module.bias):
                        if p is not None:
                            p.copy_((torch.rand(p.shape, generator=gen, dtype=DTYPE) * 2 - 1) * bound)
                elif isinstance(module, nn.LayerNorm):
                    module.weight.fill_(1.0)
                    module.bias.zero_()

    def encode(self, E: torch.Tensor, mask: Optional[torch.Tensor] = None):
        """Run the encoder on position-encoded inputs ``E`` of shape (B, n, d).

        Returns ``(features, signed, distribution, attention)``.
        """
        if E.dim() != 3 or E.shape[-1] != self.config.d_model:
            raise ShapeError(f"expected (B, n, {self.config.d_model}) input, got {tuple(E.shape)}")
        if mask is None:
            mask = torch.ones(E.shape[:2], dtype=torch.bool)
        if mask.shape != E.shape[:2]:
            raise ShapeError(f"mask shape {tuple(mask.shape)} does not match input {tuple(E.shape[:2])}")
        if not bool(mask.any(dim=1).all()):
            raise ShapeError("every sequence needs at least one unmasked event")
        x = E
        attention = []
        for layer in self.layers:
            x, w_pos, w_neg = layer(x, mask)
            attention.append((w_pos, w_neg))
        w_pos, w_neg = attention[-1]
        signed = self._column_mass(w_pos, mask)
        if w_neg is not None:
            signed = signed - self._column_mass(w_neg, mask)
        logits = (signed / self.config.temperature).masked_fill(~mask, float("-inf"))
        distribution = torch.softmax(logits, dim=-1)
        return x, signed, distribution, attention

    @staticmethod
    def _column_mass(weights, mask):
        q = mask.to(weights.dtype)[:, None, :, None]
        total = (weights * q).sum(dim=(1, 2))
        return total / (weights.shape[1] * mask.sum(dim=1, keepdim=True).to(weights.dtype))

    def locate(self, events: torch.Tensor) -> torch.Tensor:
        """Per-event root-cause scores in [0, 1], computed row by row.

        The forward pass feeds raw event embeddings: encoder outputs mix in
        sequence context, which lets every event of an anomalous sequence
        satisfy the max-based ranking loss.
        """
        return self.locator(events)

    def forward(self, emb: torch.Tensor, mask: Optional[torch.Tensor] = None,
                positions: Optional[torch.Tensor] = None) -> ForwardOutput:
        """``emb`` holds raw event embeddings (B, n, d); positions default to 0..n-1."""
        emb = emb.to(DTYPE)
        if emb.dim() != 3 or emb.shape[1] == 0 or emb.shape[2] != self.config.d_model:
            raise ShapeError(f"expected non-empty (B, n, {self.config.d_model}) embeddings, got {tuple(emb.shape)}")
        if positions is None:
            positions = torch.arange(emb.shape[1]).expand(emb.shape[0], -1)
        if mask is None:
            mask = torch.ones(emb.shape[:2], dtype=torch.bool)
        E = emb + positional_encodings(positions, self.config.d_model)
        features, signed, distribution, attention = self.encode(E, mask)
        pooled = (distribution.unsqueeze(-1) * features).sum(dim=1)
        confidence = self.detector(pooled)
        locator = self.locate(emb) * mask.to(DTYPE)
        return ForwardOutput(features, signed, distribution, confidence, locator, attention, mask)


def remove_event(mask: torch.Tensor, index: int) -> torch.Tensor:
    """Mask out one event of a single-sequence mask (1-D or (1, n)); positions are kept."""
    flat = mask.reshape(-1)
    if not 0 <= index < flat.numel() or not bool(flat[index]):
        raise IndexError(f"event index {index} out of range or already removed")
    if int(flat.sum()) < 2:
        raise ValueError("cannot remove the only remaining event")
    out = flat.clone()
    out[index] = False
    return out.reshape(mask.shape)


def argmax_events(signed: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Index of the highest signed score per row, lowest index on ties."""
    return signed.detach().masked_fill(~mask, float("-inf")).argmax(dim=-1)


class Detector:
    """Single-sequence inference over a trained model and an embedding provider."""

    def __init__(self, model: FaithLogModel, provider, threshold: float = 0.5):
        self.model = model
        self.provider = provider
        self.threshold = threshold

    def _result(self, out: ForwardOutput, keep: np.ndarray) -> DetectionResult:
        p = float(out.confidence[0])
        signed = out.signed[0].detach().numpy()[keep]
        dist = out.distribution[0].detach().numpy()[keep]
        loc = out.locator[0].detach().numpy()[keep]
        return DetectionResult(
            confidence=p,
            decision="anomalous" if p >= self.threshold else "normal",
            attention=AttentionProfile(signed, dist),
            locator_scores=loc,
            positions=np.flatnonzero(keep),
        )

    def _embed(self, seq):
        emb = self.provider.embed_sequence(seq)
        emb = emb.detach() if isinstance(emb, torch.Tensor) else torch.as_tensor(emb)
        return emb.to(DTYPE)[None]

    @torch.no_grad()
    def detect(self, seq) -> DetectionResult:
        if len(seq.events) == 0:
            raise ValueError("cannot detect on an empty sequence")
        out = self.model(self._embed(seq))
        return self._result(out, np.ones(len(seq.events), dtype=bool))

    @torch.no_grad()
    def detect_removed(self, seq, index: int) -> DetectionResult:
        """Detect with event ``index`` masked out; result arrays cover surviving events only."""
        mask = remove_event(torch.ones(1, len(seq.events), dtype=torch.bool), index)
        out = self.model(self._embed(seq), mask=mask)
        return self._result(out, mask[0].numpy())
