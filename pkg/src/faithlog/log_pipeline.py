"""Raw log lines -> templates -> labeled event sequences.

Template mining follows the fixed-depth parse tree of Drain: lines are routed
by token count, then by their leading tokens, and finally matched against the
templates stored in the leaf by positional token similarity.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Optional, Sequence

from faithlog.errors import ConfigError, DatasetError

logger = logging.getLogger(__name__)

WILDCARD = "<*>"
DATASET_FORMATS = ("seq",)

_NUMERIC = re.compile(r"^[-+]?\d+(?:\.\d+)?$")
_HAS_DIGIT = re.compile(r"\d")


@dataclass(frozen=True)
class LogRecord:
    line_no: int
    content: str
    source: str = ""
    timestamp: Optional[int] = None  # epoch milliseconds, passed through

    def __post_init__(self):
        if not self.content.strip():
            raise ValueError(f"log record {self.line_no} has empty content")


@dataclass(frozen=True)
class EventTemplate:
    template_id: int
    tokens: tuple

    @property
    def token_count(self) -> int:
        return len(self.tokens)

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass(frozen=True)
class ParsedRecord:
    line_no: int
    template_id: int
    label: Optional[int] = None
    timestamp: Optional[int] = None


@dataclass(frozen=True)
class EventSequence:
    sequence_id: str
    events: tuple
    label: int
    root_causes: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(int(e) for e in self.events))
        object.__setattr__(self, "root_causes", tuple(sorted({int(r) for r in self.root_causes})))
        if not self.events:
            raise DatasetError("sequence has no events", sequence_id=self.sequence_id)
        if self.label not in (0, 1):
            raise DatasetError(f"label must be 0 or 1, got {self.label!r}", sequence_id=self.sequence_id)
        for r in self.root_causes:
            if not 0 <= r < len(self.events):
                raise DatasetError(
                    f"root-cause index {r} out of range for length {len(self.events)}",
                    sequence_id=self.sequence_id,
                )
        if self.root_causes and self.label != 1:
            raise DatasetError("root causes given for a normal sequence", sequence_id=self.sequence_id)

    def __len__(self):
        return len(self.events)

    @property
    def anomalous(self) -> bool:
        return self.label == 1


def tokenize(content: str) -> list:
    return content.split()


def mask_numeric(tokens: Sequence[str]) -> list:
    return [WILDCARD if _NUMERIC.match(t) else t for t in tokens]


class _Node:
    __slots__ = ("children", "templates")

    def __init__(self):
        self.children = {}
        self.templates = []  # template ids stored at a leaf


class DrainParser:
    """Online template miner with a fixed-depth routing tree.

    Not thread-safe: ``parse_line`` mutates the tree and template store.
    """

    def __init__(self, depth: int = 4, similarity_threshold: float = 0.4, max_children: int = 100):
        if depth < 3:
            raise ConfigError(f"depth must be >= 3, got {depth}")
        if not 0 < similarity_threshold < 1:
            raise ConfigError(f"similarity_threshold must be in (0, 1), got {similarity_threshold}")
        if max_children < 1:
            raise ConfigError(f"max_children must be >= 1, got {max_children}")
        self.depth = depth
        self.similarity_threshold = similarity_threshold
        self.max_children = max_children
        self._root = _Node()
        self._templates: dict = {}
        self._by_tokens: dict = {}

    @property
    def templates(self) -> dict:
        return {tid: EventTemplate(tid, tokens) for tid, tokens in self._templates.items()}

    def __len__(self):
        return len(self._templates)

    def _leaf(self, tokens):
        node = self._root.children.setdefault(len(tokens), _Node())
        for token in tokens[: self.depth - 2]:
            key = WILDCARD if _HAS_DIGIT.search(token) else token
            if key not in node.children and len(node.children) >= self.max_children:
                key = WILDCARD
            node = node.children.setdefault(key, _Node())
        return node

    @staticmethod
    def similarity(tokens: Sequence[str], template: Sequence[str]) -> float:
        same = sum(1 for t, w in zip(tokens, template) if t == w and w != WILDCARD)
        return same / len(template)

    def parse_line(self, record) -> tuple:
        """Return ``(template_id, parameters)`` for one line, updating the tree."""
        content = record.content if isinstance(record, LogRecord) else str(record)
        raw = tokenize(content)
        if not raw:
            raise ValueError("cannot parse an empty line")
        tokens = mask_numeric(raw)
        key = tuple(tokens)
        leaf = self._leaf(tokens)

        tid = self._by_tokens.get(key)
        if tid is None:
            best, best_sim = None, -1.0
            for cand in leaf.templates:
                sim = self.similarity(tokens, self._templates[cand])
                if sim > best_sim:
                    best, best_sim = cand, sim
            if best is not None and best_sim >= self.similarity_threshold:
                tid = self._generalize(best, tokens)
            else:
                tid = len(self._templates)
                while tid in self._templates:
                    tid += 1
                self._templates[tid] = key
                self._by_tokens[key] = tid
                leaf.templates.append(tid)

        template = self._templates[tid]
        params = [r for r, w in zip(raw, template) if w == WILDCARD]
        return tid, params

    def _generalize(self, tid, tokens):
        old = self._templates[tid]
        new = tuple(w if w == t else WILDCARD for w, t in zip(old, tokens))
        if new == old:
            return tid
        other = self._by_tokens.get(new)
        if other is not None:
            # generalizing would duplicate an existing template
            return other
        del self._by_tokens[old]
        self._templates[tid] = new
        self._by_tokens[new] = tid
        return tid

    def parse_all(self, records: Iterable, labels: Optional[Sequence[int]] = None) -> list:
        out = []
        for i, rec in enumerate(records):
            if not isinstance(rec, LogRecord):
                rec = LogRecord(line_no=i, content=str(rec))
            tid, _ = self.parse_line(rec)
            label = None if labels is None else int(labels[i])
            out.append(ParsedRecord(rec.line_no, tid, label, rec.timestamp))
        return out


@dataclass(frozen=True)
class WindowConfig:
    size: int = 20
    stride: int = 20
    kind: str = "count"  # "count" (sliding) or "time" (tumbling, size in ms)

    def __post_init__(self):
        if self.kind not in ("count", "time"):
            raise ConfigError(f"unknown window kind {self.kind!r}")
        if self.size < 1:
            raise ConfigError(f"window size must be >= 1, got {self.size}")
        if self.kind == "count" and self.stride < 1:
            raise ConfigError(f"window stride must be >= 1, got {self.stride}")


def _make_sequence(sid, chunk):
    labels = [r.label for r in chunk]
    roots = [i for i, lab in enumerate(labels) if lab]
    return EventSequence(
        sequence_id=sid,
        events=tuple(r.template_id for r in chunk),
        label=1 if roots else 0,
        root_causes=tuple(roots),
    )


def sessionize(records: Sequence[ParsedRecord], window: WindowConfig = WindowConfig(), prefix: str = "w") -> list:
    """Cut a parsed stream into windows.

    Count windows start every ``stride`` records and the shorter tail window
    is kept. A window is anomalous iff any of its lines is labeled anomalous;
    those lines' offsets become the window's root causes.
    """
    records = list(records)
    if not records:
        return []
    chunks = []
    if window.kind == "count":
        start = 0
        while start < len(records):
            chunks.append(records[start : start + window.size])
            if start + window.size >= len(records):
                break
            start += window.stride
    else:
        if any(r.timestamp is None for r in records):
            raise ConfigError("time windows need a timestamp on every record")
        t0 = records[0].timestamp
        buckets: dict = {}
        for r in records:
            buckets.setdefault((r.timestamp - t0) // window.size, []).append(r)
        chunks = [buckets[k] for k in sorted(buckets)]
    return [_make_sequence(f"{prefix}{k}", chunk) for k, chunk in enumerate(chunks)]


# --- file formats -----------------------------------------------------------


def _data_lines(path) -> Iterator:
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            yield line_no, line


def write_dataset(sequences: Iterable[EventSequence], path, header: Optional[str] = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write(f"# {header}\n")
        for s in sequences:
            ids = ",".join(str(e) for e in s.events)
            roots = ",".join(str(r) for r in s.root_causes)
            fh.write(f"{s.sequence_id}\t{s.label}\t{ids};{roots}\n")


def load_dataset(path, format: str = "seq") -> list:
    if format not in DATASET_FORMATS:
        raise ConfigError(f"unknown dataset format {format!r}")
    sequences = []
    seen = set()
    for line_no, line in _data_lines(path):
        parts = line.split("\t")
        if len(parts) != 3 or ";" not in parts[2]:
            raise DatasetError("expected 'id<TAB>label<TAB>events;roots'", line_no=line_no)
        sid, label, body = parts
        ids, _, roots = body.partition(";")
        try:
            events = tuple(int(x) for x in ids.split(",")) if ids else ()
            rc = tuple(int(x) for x in roots.split(",")) if roots else ()
            lab = int(label)
        except ValueError as exc:
            raise DatasetError(f"non-integer field ({exc})", line_no=line_no, sequence_id=sid) from None
        if sid in seen:
            raise DatasetError("duplicate sequence id", line_no=line_no, sequence_id=sid)
        seen.add(sid)
        try:
            sequences.append(EventSequence(sid, events, lab, rc))
        except DatasetError as exc:
            raise DatasetError(str(exc), line_no=line_no) from None
    return sequences


def write_templates(templates: Mapping[int, EventTemplate], path, header: Optional[str] = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write(f"# {header}\n")
        for tid in sorted(templates):
            fh.write(f"{tid}\t{templates[tid].text}\n")


def load_templates(path) -> dict:
    out = {}
    for line_no, line in _data_lines(path):
        tid, sep, text = line.partition("\t")
        if not sep or not text.strip():
            raise DatasetError("expected 'id<TAB>tokens'", line_no=line_no)
        try:
            tid = int(tid)
        except ValueError:
            raise DatasetError(f"bad template id {tid!r}", line_no=line_no) from None
        out[tid] = EventTemplate(tid, tuple(text.split(" ")))
    return out


def read_raw_log(path) -> list:
    """One message per line; blank lines are skipped but keep their numbering."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh):
            if line.strip():
                records.append(LogRecord(line_no=line_no, content=line.rstrip("\n")))
    return records


def read_labels(path) -> list:
    labels = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            value = line.strip()
            if value not in ("0", "1"):
                raise DatasetError(f"label must be 0 or 1, got {value!r}", line_no=line_no)
            labels.append(int(value))
    return labels


def parse_corpus(lines_path, labels_path=None, parser: Optional[DrainParser] = None,
                 window: WindowConfig = WindowConfig()) -> tuple:
    """Parse a raw log file (plus optional label sidecar) into sequences.

    Returns ``(templates, sequences)``.
    """
    parser = parser or DrainParser()
    records = read_raw_log(lines_path)
    labels = None
    if labels_path is not None:
        all_labels = read_labels(labels_path)
        try:
            labels = [all_labels[r.line_no] for r in records]
        except IndexError:
            raise DatasetError(
                f"label file has {len(all_labels)} lines, log has more"
            ) from None
    parsed = parser.parse_all(records, labels)
    return parser.templates, sessionize(parsed, window)
