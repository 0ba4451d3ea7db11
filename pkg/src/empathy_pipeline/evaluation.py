"""Ranking metrics for scored segments: AP, PR curves, EDR and WER."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

RECALL_LEVELS = (0.2, 0.5, 0.8)


def _score_groups(scores, labels):
    """Cumulative (tp, fp) at the end of each distinct-score group, descending."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    if not labels.any():
        raise ValueError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="mergesort")
    s, lab = scores[order], labels[order]
    tp = np.cumsum(lab)
    fp = np.cumsum(~lab)
    last = np.r_[s[1:] != s[:-1], True]
    return tp[last], fp[last], int(labels.sum())


def pr_curve(scores, labels) -> list[tuple[float, float]]:
    """``(recall, precision)`` after each distinct-score threshold."""
    tp, fp, n_pos = _score_groups(scores, labels)
    return [(t / n_pos, t / (t + f)) for t, f in zip(tp.tolist(), fp.tolist())]


def average_precision(scores, labels) -> float:
    """Step-wise AP, ``sum (R_n - R_{n-1}) P_n`` with tied scores as one step."""
    tp, fp, n_pos = _score_groups(scores, labels)
    prev = np.r_[0, tp[:-1]]
    return float(np.sum((tp - prev) / n_pos * (tp / (tp + fp))))


def word_error_rate(ref: Sequence[str], hyp: Sequence[str]) -> float:
    """Levenshtein distance over tokens divided by the reference length."""
    ref, hyp = list(ref), list(hyp)
    if not ref:
        raise ValueError("reference must be non-empty")
    row = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        prev_diag, row[0] = row[0], i
        for j, h in enumerate(hyp, start=1):
            cur = min(row[j] + 1, row[j - 1] + 1, prev_diag + (r != h))
            prev_diag, row[j] = row[j], cur
    return row[-1] / len(ref)


@dataclass
class RankedPredictions:
    """Scored test segments; ``parents`` holds interaction ids per segment."""

    scores: np.ndarray
    labels: np.ndarray
    durations: np.ndarray
    parents: list[tuple] = field(default_factory=list)
    session_ids: list[str] = field(default_factory=list)
    total_audio_s: float | None = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        self.labels = np.asarray(self.labels).astype(bool)
        self.durations = np.asarray(self.durations, dtype=float)
        n = len(self.scores)
        if not self.parents:
            self.parents = [()] * n
        if len(self.labels) != n or len(self.durations) != n or len(self.parents) != n:
            raise ValueError("prediction fields differ in length")
        if (self.durations <= 0).any():
            raise ValueError("segment durations must be positive")
        if self.total_audio_s is None:
            self.total_audio_s = float(self.durations.sum())

    @property
    def interactions(self) -> set:
        return {p for ps in self.parents for p in ps}


@dataclass
class EdrReport:
    levels: tuple[float, ...]
    pos_fraction: list[float]  # percent of segments
    audio_fraction: list[float]  # percent of audio duration
    n_selected: list[int]
    n_interactions: int

    def to_dict(self) -> dict:
        return {
            f"{r:g}": {"pos": p, "poa": a, "n_selected": k}
            for r, p, a, k in zip(self.levels, self.pos_fraction, self.audio_fraction, self.n_selected)
        } | {"n_interactions": self.n_interactions}


def edr_report(ranked: RankedPredictions, recall_levels=RECALL_LEVELS) -> EdrReport:
    """Smallest top-scored prefix detecting ``ceil(r * I)`` interactions.

    An interaction counts as detected once any of its children is in the
    prefix. Ties in score keep segment order. ``I`` counts interactions
    that have at least one child in ``ranked``.
    """
    interactions = ranked.interactions
    if not interactions:
        raise ValueError("no interactions among the ranked segments")
    n_int = len(interactions)
    order = np.argsort(-ranked.scores, kind="stable")
    first_hit = {}
    for pos, idx in enumerate(order.tolist()):
        for p in ranked.parents[idx]:
            first_hit.setdefault(p, pos + 1)
    needed = sorted(first_hit.values())
    cum_dur = np.r_[0.0, np.cumsum(ranked.durations[order])]
    n = len(order)
    pos_f, aud_f, sizes = [], [], []
    for r in recall_levels:
        target = max(1, math.ceil(r * n_int - 1e-9))
        k = needed[target - 1]
        sizes.append(k)
        pos_f.append(100.0 * k / n)
        aud_f.append(100.0 * cum_dur[k] / ranked.total_audio_s)
    return EdrReport(tuple(recall_levels), pos_f, aud_f, sizes, n_int)


def metrics_report(ranked: RankedPredictions, recall_levels=RECALL_LEVELS) -> dict:
    ap = average_precision(ranked.scores, ranked.labels)
    edr = edr_report(ranked, recall_levels)
    return {
        "ap": ap,
        "prevalence": float(ranked.labels.mean()),
        "n_segments": int(len(ranked.scores)),
        "n_positive": int(ranked.labels.sum()),
        "edr": edr.to_dict(),
    }


def write_reports(ranked: RankedPredictions, out_dir, recall_levels=RECALL_LEVELS) -> dict:
    """Write ``metrics.json`` and ``pr_curve.tsv``; returns the metrics dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = metrics_report(ranked, recall_levels)
    with (out / "metrics.json").open("w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with (out / "pr_curve.tsv").open("w", encoding="utf-8") as fh:
        fh.write("recall\tprecision\n")
        for r, p in pr_curve(ranked.scores, ranked.labels):
            fh.write(f"{r:.10g}\t{p:.10g}\n")
    return report
