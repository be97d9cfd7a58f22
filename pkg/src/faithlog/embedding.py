"""Template -> vector embeddings.

``HashEmbedding`` is the default: every coordinate comes from a keyed 64-bit
BLAKE2b hash of the template's tokens and the coordinate index, so vectors are
identical across processes and platforms. ``LookupEmbedding`` is a trainable
table keyed by template id.
"""

from __future__ import annotations

import hashlib
import math
from typing import Iterable, Mapping, Optional

import numpy as np
import torch
from torch import nn

from faithlog.errors import ConfigError, ShapeError, VocabularyError
from faithlog.log_pipeline import EventSequence, EventTemplate

_SEP = b"\x1f"
_U64_MAX = float(2**64 - 1)


def _check_dim(d_model):
    if d_model < 2 or d_model % 2:
        raise ConfigError(f"d_model must be a positive even integer, got {d_model}")


def hash_vector(tokens: Iterable[str], d_model: int, seed: int = 0) -> np.ndarray:
    _check_dim(d_model)
    key = int(seed).to_bytes(8, "little", signed=True)
    payload = _SEP.join(t.encode("utf-8") for t in tokens)
    out = np.empty(d_model, dtype=np.float64)
    for i in range(d_model):
        h = hashlib.blake2b(payload + b"\x00" + i.to_bytes(4, "little"), digest_size=8, key=key)
        u = int.from_bytes(h.digest(), "little")
        out[i] = 2.0 * (u / _U64_MAX) - 1.0
    # uniform on [-1, 1] has variance 1/3
    return out * math.sqrt(3.0)


class HashEmbedding:
    mode = "hash"

    def __init__(self, templates: Mapping[int, EventTemplate], d_model: int = 64, seed: int = 0):
        _check_dim(d_model)
        self.d_model = d_model
        self.seed = seed
        self.templates = dict(templates)
        self._cache: dict = {}
        self._tables: dict = {}

    def embed_template(self, template: EventTemplate) -> np.ndarray:
        key = template.tokens
        vec = self._cache.get(key)
        if vec is None:
            vec = self._cache[key] = hash_vector(key, self.d_model, self.seed)
        return vec.copy()

    def _resolve(self, tid):
        try:
            return self.templates[tid]
        except KeyError:
            raise VocabularyError(f"unknown template id {tid}") from None

    def embed_sequence(self, seq: EventSequence) -> np.ndarray:
        return np.stack([self.embed_template(self._resolve(t)) for t in seq.events])

    def table(self, dtype=torch.float64) -> tuple:
        """Dense ``(index, matrix)`` for batched lookup: ``matrix[index[tid]]``."""
        if dtype in self._tables:
            return self._tables[dtype]
        ids = sorted(self.templates)
        index = {tid: i for i, tid in enumerate(ids)}
        mat = np.stack([self.embed_template(self.templates[t]) for t in ids]) if ids else np.zeros((0, self.d_model))
        self._tables[dtype] = index, torch.as_tensor(mat, dtype=dtype)
        return self._tables[dtype]

    def lookup(self, ids: torch.Tensor, dtype=torch.float64) -> torch.Tensor:
        index, mat = self.table(dtype)
        try:
            rows = torch.tensor([[index[int(t)] for t in row] for row in ids.tolist()], dtype=torch.long)
        except KeyError as exc:
            raise VocabularyError(f"unknown template id {exc.args[0]}") from None
        return mat[rows]

    def export(self, path) -> None:
        write_embedding_table({t: self.embed_template(tpl) for t, tpl in self.templates.items()}, path)


class LookupEmbedding(nn.Module):
    """Trainable embedding rows keyed by template id."""

    mode = "lookup"

    def __init__(self, d_model: int = 64, template_ids: Iterable[int] = (), allow_growth: bool = False,
                 seed: int = 0, capacity: Optional[int] = None):
        super().__init__()
        _check_dim(d_model)
        self.d_model = d_model
        self.allow_growth = allow_growth
        self.index = {int(t): i for i, t in enumerate(sorted(set(template_ids)))}
        capacity = max(capacity or 0, len(self.index), 1)
        gen = torch.Generator().manual_seed(seed)
        bound = 1.0 / math.sqrt(d_model)
        self.weight = nn.Parameter((torch.rand(capacity, d_model, generator=gen, dtype=torch.float64) * 2 - 1) * bound)

    def _row(self, tid: int) -> int:
        row = self.index.get(tid)
        if row is not None:
            return row
        if not self.allow_growth:
            raise VocabularyError(f"unknown template id {tid}")
        if len(self.index) >= self.weight.shape[0]:
            raise VocabularyError(f"embedding table full ({self.weight.shape[0]} rows), cannot add {tid}")
        row = self.index[tid] = len(self.index)
        return row

    def embed_template(self, template) -> torch.Tensor:
        tid = template.template_id if isinstance(template, EventTemplate) else int(template)
        return self.weight[self._row(tid)]

    def embed_sequence(self, seq: EventSequence) -> torch.Tensor:
        return self.weight[[self._row(t) for t in seq.events]]

    def lookup(self, ids: torch.Tensor, dtype=torch.float64) -> torch.Tensor:
        rows = torch.tensor([[self._row(int(t)) for t in row] for row in ids.tolist()], dtype=torch.long)
        return self.weight[rows].to(dtype)

    def export(self, path) -> None:
        w = self.weight.detach().numpy()
        write_embedding_table({t: w[r] for t, r in self.index.items()}, path)


def write_embedding_table(vectors: Mapping[int, np.ndarray], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tid in sorted(vectors):
            fh.write(str(tid) + " " + " ".join(repr(float(v)) for v in vectors[tid]) + "\n")


def read_embedding_table(path) -> dict:
    out = {}
    width = None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            vec = np.array([float(x) for x in parts[1:]])
            if width is None:
                width = len(vec)
            elif len(vec) != width:
                raise ShapeError(f"line {line_no}: expected {width} values, got {len(vec)}")
            out[int(parts[0])] = vec
    return out
