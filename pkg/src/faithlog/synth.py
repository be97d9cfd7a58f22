"""Reproducible synthetic log corpora with known root causes.

Normal sequences are walks of a sparse random Markov chain over normal
templates. Anomalous sequences are normal walks with one or two positions
(never the first) overwritten by anomaly templates; those positions are the
ground-truth root causes. Every template is also rendered to text with random
numeric parameters so the corpus can be pushed through the parser.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from faithlog.errors import ConfigError, DatasetError
from faithlog.log_pipeline import WILDCARD, EventSequence, EventTemplate, write_dataset, write_templates

_ONSETS = ["b", "c", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "tr", "pl", "sk"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ou"]
_WORDS = (
    "request block node link session packet socket cache queue worker disk "
    "memory kernel job task client server route lease token buffer channel "
    "opened closed received sent started stopped ready retry timeout flushed "
    "allocated released with from to on for in at size bytes count id port"
).split()


@dataclass(frozen=True)
class SynthConfig:
    n_templates: int = 50
    n_anomaly_templates: int = 5
    n_sequences: int = 2000
    seq_length: int = 20
    anomaly_rate: float = 0.3
    noise_rate: float = 0.05
    sparsity: float = 0.2  # fraction of non-zero transitions per Markov row
    seed: int = 7

    def __post_init__(self):
        if not 0 <= self.anomaly_rate < 1:
            raise ConfigError(f"anomaly_rate must be in [0, 1), got {self.anomaly_rate}")
        if self.seq_length < 2:
            raise ConfigError(f"seq_length must be >= 2, got {self.seq_length}")
        if min(self.n_templates, self.n_anomaly_templates, self.n_sequences) < 1:
            raise ConfigError("template and sequence counts must be positive")
        if not 0 <= self.noise_rate <= 1 or not 0 < self.sparsity <= 1:
            raise ConfigError("noise_rate must be in [0, 1] and sparsity in (0, 1]")

    @property
    def n_anomalous(self) -> int:
        return int(round(self.anomaly_rate * self.n_sequences))


@dataclass
class SynthDataset:
    config: SynthConfig
    templates: dict
    sequences: list
    transitions: np.ndarray = field(repr=False)
    lines: list = field(default_factory=list, repr=False)
    line_labels: list = field(default_factory=list, repr=False)

    @property
    def normal_ids(self) -> range:
        return range(self.config.n_templates)

    @property
    def anomaly_ids(self) -> range:
        c = self.config
        return range(c.n_templates, c.n_templates + c.n_anomaly_templates)

    def write(self, out_dir) -> dict:
        """Write templates, sequences, raw log and line labels into ``out_dir``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "templates": out / "templates.tsv",
            "sequences": out / "sequences.tsv",
            "raw": out / "raw.log",
            "labels": out / "labels.txt",
        }
        write_templates(self.templates, paths["templates"])
        write_dataset(self.sequences, paths["sequences"])
        paths["raw"].write_text("".join(line + "\n" for line in self.lines), encoding="utf-8")
        paths["labels"].write_text("".join(f"{lab}\n" for lab in self.line_labels), encoding="utf-8")
        return paths


def _head_words(count, rng):
    words = []
    seen = set()
    while len(words) < count:
        n_syll = int(rng.integers(2, 4))
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))] for _ in range(n_syll))
        if w not in seen and w not in _WORDS:
            seen.add(w)
            words.append(w)
    return words


def make_templates(n: int, rng: np.random.Generator) -> dict:
    """Templates with a unique leading word and at most 40% parameter slots."""
    heads = _head_words(n, rng)
    templates = {}
    for tid, head in enumerate(heads):
        length = int(rng.integers(4, 9))
        body = [str(_WORDS[rng.integers(len(_WORDS))]) for _ in range(length - 1)]
        n_params = int(rng.integers(1, int(0.4 * length) + 1))
        for slot in rng.choice(len(body), size=n_params, replace=False):
            body[slot] = WILDCARD
        templates[tid] = EventTemplate(tid, (head + ":",) + tuple(body))
    return templates


def make_transitions(n: int, sparsity: float, rng: np.random.Generator) -> np.ndarray:
    k = max(1, int(round(sparsity * n)))
    mat = np.zeros((n, n))
    for i in range(n):
        cols = rng.choice(n, size=k, replace=False)
        mat[i, cols] = rng.dirichlet(np.ones(k))
    return mat


def render(template: EventTemplate, rng: np.random.Generator) -> str:
    return " ".join(str(int(rng.integers(0, 100000))) if t == WILDCARD else t for t in template.tokens)


def generate(config: SynthConfig = SynthConfig()) -> SynthDataset:
    root = np.random.default_rng(config.seed)
    templates = make_templates(config.n_templates + config.n_anomaly_templates, root)
    transitions = make_transitions(config.n_templates, config.sparsity, root)
    anomalous = set(root.choice(config.n_sequences, size=config.n_anomalous, replace=False).tolist())

    sequences, lines, line_labels = [], [], []
    for idx in range(config.n_sequences):
        # per-sequence stream: parallel generation reproduces serial order
        rng = np.random.default_rng([config.seed, idx])
        events = [int(rng.integers(config.n_templates))]
        for _ in range(config.seq_length - 1):
            if rng.random() < config.noise_rate:
                events.append(int(rng.integers(config.n_templates)))
            else:
                events.append(int(rng.choice(config.n_templates, p=transitions[events[-1]])))
        roots = ()
        if idx in anomalous:
            k = int(rng.integers(1, 3))
            roots = tuple(sorted(int(r) for r in rng.choice(np.arange(1, config.seq_length), size=k, replace=False)))
            for r in roots:
                events[r] = config.n_templates + int(rng.integers(config.n_anomaly_templates))
        seq = EventSequence(f"s{idx}", tuple(events), 1 if roots else 0, roots)
        sequences.append(seq)
        for pos, tid in enumerate(events):
            lines.append(render(templates[tid], rng))
            line_labels.append(1 if pos in roots else 0)
    return SynthDataset(config, templates, sequences, transitions, lines, line_labels)


def split(sequences, train_fraction: float = 0.8, seed: int = 0) -> tuple:
    """Stratified, disjoint, seed-reproducible split; input order is preserved."""
    if not 0 < train_fraction < 1:
        raise ConfigError(f"train_fraction must be in (0, 1), got {train_fraction}")
    sequences = list(sequences)
    rng = np.random.default_rng(seed)
    in_train = np.zeros(len(sequences), dtype=bool)
    for label in (0, 1):
        idx = np.array([i for i, s in enumerate(sequences) if s.label == label], dtype=int)
        if len(idx) == 0:
            continue
        chosen = rng.permutation(idx)[: int(round(train_fraction * len(idx)))]
        in_train[chosen] = True
    train = [s for s, t in zip(sequences, in_train) if t]
    test = [s for s, t in zip(sequences, in_train) if not t]
    for name, part in (("train", train), ("test", test)):
        if not any(s.label == 1 for s in part):
            raise DatasetError(f"{name} split has no anomalous sequences")
    return train, test
