"""Greedy ~25 s segmentation of sessions and overlap-based labeling."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

from .corpus_io import EmpathyInterval, Session, Utterance

TARGET_S = 25.0
MIN_OVERLAP_S = 1.0


@dataclass(frozen=True)
class Segment:
    session_id: str
    index: int
    utterances: tuple[Utterance, ...]
    label: bool = False
    parents: tuple[int, ...] = ()

    @property
    def start_s(self) -> float:
        return self.utterances[0].start_s

    @property
    def end_s(self) -> float:
        return self.utterances[-1].end_s

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


def generate_segments(session: Session, target_s: float = TARGET_S) -> list[Segment]:
    """Group consecutive utterances so each span lands closest to ``target_s``.

    Starting from the first utterance, the next one is appended only while it
    brings ``|span - target_s|`` strictly closer to zero; the span runs from
    the first start to the last end, gaps included. Utterances are never split.
    """
    if target_s <= 0:
        raise ValueError("target_s must be positive")
    utts = session.utterances
    segments = []
    i = 0
    while i < len(utts):
        j = i + 1
        start = utts[i].start_s
        while j < len(utts):
            here = abs(utts[j - 1].end_s - start - target_s)
            grown = abs(utts[j].end_s - start - target_s)
            if not grown < here:
                break
            j += 1
        segments.append(Segment(session.session_id, len(segments), tuple(utts[i:j])))
        i = j
    return segments


def overlap_s(a_start, a_end, b_start, b_end) -> float:
    return max(0.0, min(a_end, b_end) - max(a_start, b_start))


def label_segments(
    segments: Sequence[Segment],
    intervals: Sequence[EmpathyInterval],
    min_overlap_s: float = MIN_OVERLAP_S,
) -> list[Segment]:
    """Mark a segment positive when it overlaps some interval by more than
    ``min_overlap_s``. ``parents`` holds indices into ``intervals``."""
    by_session = defaultdict(list)
    for k, iv in enumerate(intervals):
        by_session[iv.session_id].append((k, iv))
    out = []
    for seg in segments:
        parents = tuple(
            k
            for k, iv in by_session.get(seg.session_id, ())
            if overlap_s(seg.start_s, seg.end_s, iv.start_s, iv.end_s) > min_overlap_s
        )
        out.append(replace(seg, label=bool(parents), parents=parents))
    return out


def children(segments: Iterable[Segment]) -> dict[int, list[Segment]]:
    """Map each interval index to the positive segments it produced."""
    kids = defaultdict(list)
    for seg in segments:
        for k in seg.parents:
            kids[k].append(seg)
    return dict(kids)


def segment_record(seg: Segment) -> dict:
    return {
        "session_id": seg.session_id,
        "index": seg.index,
        "start_s": seg.start_s,
        "end_s": seg.end_s,
        "n_utterances": len(seg.utterances),
        "label": int(seg.label),
        "parents": list(seg.parents),
    }


def save_segments(segments: Iterable[Segment], path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for seg in segments:
            fh.write(json.dumps(segment_record(seg)) + "\n")


def load_segments(path, sessions: Sequence[Session]) -> list[Segment]:
    """Rebuild segments from a segment file against the sessions they index."""
    by_id = {s.session_id: s for s in sessions}
    cursor: dict[str, int] = defaultdict(int)
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            session = by_id.get(rec["session_id"])
            if session is None:
                raise ValueError(f"{path}:{lineno}: unknown session {rec['session_id']!r}")
            lo = cursor[rec["session_id"]]
            hi = lo + rec["n_utterances"]
            utts = session.utterances[lo:hi]
            if len(utts) != rec["n_utterances"] or utts[0].start_s != rec["start_s"]:
                raise ValueError(f"{path}:{lineno}: segment does not match transcript")
            cursor[rec["session_id"]] = hi
            out.append(
                Segment(rec["session_id"], rec["index"], utts, bool(rec["label"]), tuple(rec["parents"]))
            )
    return out
