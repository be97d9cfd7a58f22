"""Diagnostic-faithfulness evaluation.

Two tasks over any detector exposing ``detect(seq)`` and
``detect_removed(seq, index)``:

* root-cause localization -- rank events by signed attention score and score
  the ranking against ground truth (HR@k, PR@k, MAP@k, MRR);
* event perturbation -- mask the top-attention event of each detected anomaly
  and count how often confidence drops (support rate).
"""

from __future__ import annotations

import json
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from faithlog.errors import FaithLogError
from faithlog.model import AttentionProfile, DetectionResult

KS = (1, 3, 5)
REPORT_KEYS = ("hr@1", "hr@3", "hr@5", "pr@3", "pr@5", "map@3", "map@5", "mrr", "sr")


class EvaluationError(FaithLogError):
    pass


@dataclass(frozen=True)
class RankedLocalization:
    sequence_id: str
    ranked_events: tuple
    truth: frozenset

    @property
    def first_hit_rank(self) -> Optional[int]:
        for rank, e in enumerate(self.ranked_events, start=1):
            if e in self.truth:
                return rank
        return None


def rank_by_score(scores) -> tuple:
    """Indices by descending score, lowest index first among ties."""
    scores = np.asarray(scores, dtype=float)
    return tuple(int(i) for i in np.lexsort((np.arange(len(scores)), -scores)))


def _average_precision(ranked, truth, k):
    hits, total = 0, Fraction(0)
    for rank, e in enumerate(ranked[:k], start=1):
        if e in truth:
            hits += 1
            total += Fraction(hits, rank)
    return total / min(len(truth), k)


def rank_metrics(localizations: Sequence[RankedLocalization], ks: Iterable[int] = KS) -> dict:
    """HR@k, PR@k, MAP@k for each k plus MRR, as fractions in [0, 1].

    MAP@k divides by ``min(|truth|, k)``; a ranking with no hit contributes 0
    to MRR. Sums are exact rationals, rounded to float once at the end.
    """
    if not localizations:
        raise EvaluationError("no localizations to score")
    ks = sorted(set(ks))
    out = {}
    for loc in localizations:
        if not loc.truth:
            raise EvaluationError(f"sequence {loc.sequence_id!r} has no ground truth")
    n = len(localizations)
    for k in ks:
        hits = sum(any(e in l.truth for e in l.ranked_events[:k]) for l in localizations)
        out[f"hr@{k}"] = float(Fraction(hits, n))
        out[f"pr@{k}"] = float(sum(Fraction(len(set(l.ranked_events[:k]) & l.truth), k) for l in localizations) / n)
        out[f"map@{k}"] = float(sum(_average_precision(l.ranked_events, l.truth, k) for l in localizations) / n)
    out["mrr"] = float(sum(Fraction(1, r) for r in (l.first_hit_rank for l in localizations) if r) / n)
    return out


def localize(detector, sequences: Sequence, by: str = "attention") -> tuple:
    """Rank events of every labeled anomalous sequence.

    Returns ``(localizations, n_excluded)`` where excluded sequences are
    anomalous ones without root-cause labels. ``by="locator"`` ranks by
    locator scores instead of signed attention.
    """
    locs, excluded = [], 0
    for seq in sequences:
        if seq.label != 1:
            continue
        if not seq.root_causes:
            excluded += 1
            continue
        res = detector.detect(seq)
        scores = res.attention.signed_scores if by == "attention" else res.locator_scores
        locs.append(RankedLocalization(seq.sequence_id, rank_by_score(scores), frozenset(seq.root_causes)))
    return locs, excluded


@dataclass(frozen=True)
class Verdict:
    sequence_id: str
    p: float
    p_removed: Optional[float]
    removed_index: Optional[int]
    status: str  # "supportive", "non-supportive" or "skipped"
    first_hit_rank: Optional[int] = None

    @property
    def supportive(self) -> bool:
        return self.status == "supportive"


def perturb(detector, seq) -> Verdict:
    res = detector.detect(seq)
    if len(seq.events) < 2:
        return Verdict(seq.sequence_id, res.confidence, None, None, "skipped")
    top = res.attention.argmax_index
    p2 = detector.detect_removed(seq, top).confidence
    rank = None
    if seq.root_causes:
        rank = RankedLocalization(seq.sequence_id, rank_by_score(res.attention.signed_scores),
                                  frozenset(seq.root_causes)).first_hit_rank
    status = "supportive" if p2 < res.confidence else "non-supportive"
    return Verdict(seq.sequence_id, res.confidence, p2, top, status, rank)


def support_rate(detector, sequences: Sequence) -> tuple:
    """Support rate over sequences the detector flags as anomalous.

    Returns ``(sr, verdicts)``; verdicts include single-event sequences marked
    ``skipped``, which do not count toward the rate.
    """
    verdicts = []
    for seq in sequences:
        if not detector.detect(seq).anomalous:
            continue
        verdicts.append(perturb(detector, seq))
    counted = [v for v in verdicts if v.status != "skipped"]
    if not counted:
        raise EvaluationError("no detected anomalies with at least two events")
    return sum(v.supportive for v in counted) / len(counted), verdicts


@dataclass
class FaithfulnessReport:
    hr: dict
    pr: dict
    map_at: dict
    mrr: float
    sr: float
    counts: dict = field(default_factory=dict)
    locator: dict = field(default_factory=dict)
    run_id: str = ""

    def metrics(self) -> dict:
        """The headline metric table, as fractions."""
        vals = {f"hr@{k}": v for k, v in self.hr.items()}
        vals.update({f"pr@{k}": v for k, v in self.pr.items()})
        vals.update({f"map@{k}": v for k, v in self.map_at.items()})
        vals["mrr"] = self.mrr
        vals["sr"] = self.sr
        return {k: vals[k] for k in REPORT_KEYS}

    def to_dict(self) -> dict:
        pct = lambda v: round(100.0 * v, 2)
        return {
            "run_id": self.run_id,
            "metrics": {k: pct(v) for k, v in self.metrics().items()},
            "locator_metrics": {k: pct(v) for k, v in self.locator.items()},
            "counts": dict(self.counts),
        }

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def evaluate_faithfulness(detector, sequences: Sequence, ks: Iterable[int] = KS,
                          report_path=None, run_id: str = "") -> FaithfulnessReport:
    ks = tuple(sorted(set(ks) | set(KS)))
    locs, excluded = localize(detector, sequences)
    ranks = rank_metrics(locs, ks)
    loc_by_locator, _ = localize(detector, sequences, by="locator")
    locator = rank_metrics(loc_by_locator, ks)
    sr, verdicts = support_rate(detector, sequences)
    counted = [v for v in verdicts if v.status != "skipped"]
    report = FaithfulnessReport(
        hr={k: ranks[f"hr@{k}"] for k in ks},
        pr={k: ranks[f"pr@{k}"] for k in ks},
        map_at={k: ranks[f"map@{k}"] for k in ks},
        mrr=ranks["mrr"],
        sr=sr,
        counts={
            "sequences": len(sequences),
            "localized": len(locs),
            "excluded_unlabeled": excluded,
            "perturbed": len(counted),
            "supportive": sum(v.supportive for v in counted),
            "skipped": len(verdicts) - len(counted),
        },
        locator=locator,
        run_id=run_id,
    )
    if report_path is not None:
        report.write(report_path)
    return report


def write_verdicts(verdicts: Sequence[Verdict], path, header: Optional[str] = None) -> None:
    fmt = lambda v: "" if v is None else repr(float(v))
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write(f"# {header}\n")
        fh.write("sequence_id\tp\tp_removed\tverdict\tfirst_hit_rank\n")
        for v in verdicts:
            rank = "" if v.first_hit_rank is None else str(v.first_hit_rank)
            fh.write(f"{v.sequence_id}\t{fmt(v.p)}\t{fmt(v.p_removed)}\t{v.status}\t{rank}\n")


class OracleDetector:
    """Reference detector that knows the ground truth.

    Signed attention is 1 on every root cause and 0 elsewhere, confidence is
    0.99 for labeled anomalies, and masking a root cause drops it to 0.01.
    """

    threshold = 0.5

    def _result(self, seq, keep):
        signed = np.zeros(len(seq.events))
        signed[list(seq.root_causes)] = 1.0
        removed_root = any(not keep[r] for r in seq.root_causes)
        p = 0.99 if seq.label == 1 and not removed_root else 0.01
        signed = signed[keep]
        dist = np.exp(signed) / np.exp(signed).sum()
        return DetectionResult(p, "anomalous" if p >= self.threshold else "normal",
                               AttentionProfile(signed, dist), signed.copy(), np.flatnonzero(keep))

    def detect(self, seq) -> DetectionResult:
        return self._result(seq, np.ones(len(seq.events), dtype=bool))

    def detect_removed(self, seq, index) -> DetectionResult:
        keep = np.ones(len(seq.events), dtype=bool)
        if not 0 <= index < len(keep) or len(keep) < 2:
            raise IndexError(index)
        keep[index] = False
        return self._result(seq, keep)
