"""Corpus loading, validation, serialization and session splitting.

File formats (all UTF-8, one JSON object per line unless noted):

* transcripts: ``{"session_id", "speaker_id", "start_s", "end_s", "text"}``
* annotations: ``{"session_id", "start_s", "end_s"}``
* lexicon (single JSON document):
  ``{"name", "categories": {"<cat>": ["word", "pref*", ...]}, "descriptors": [...]}``
  where ``descriptors`` is optional and may hold ``"word_count"`` and/or
  ``"dict_capture"``.
* audio: RIFF WAVE, PCM16, mono, 16 kHz.
"""

from __future__ import annotations

import json
import logging
import random
import re
import wave
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

SAMPLE_RATE = 16000
AUDIO_SLACK_S = 0.5
TYPICAL_INTERVAL_S = (3.0, 93.0)
DESCRIPTOR_SLOTS = ("word_count", "dict_capture")

_TOKEN_RE = re.compile(r"[^\W_]+(?:'[^\W_]+)*")
_PATTERN_RE = re.compile(r"^[^\s*]+\*?$")


class CorpusError(ValueError):
    """Malformed or inconsistent corpus input."""


def tokenize(text: str) -> tuple[str, ...]:
    """Lowercase, drop punctuation (keeping intra-word apostrophes), split.

    >>> tokenize("Well, I don't KNOW... 'really'")
    ('well', 'i', "don't", 'know', 'really')
    """
    return tuple(_TOKEN_RE.findall(text.lower()))


@dataclass(frozen=True)
class Utterance:
    session_id: str
    speaker_id: str
    start_s: float
    end_s: float
    text: tuple[str, ...]

    def __post_init__(self):
        if self.start_s < 0:
            raise CorpusError(f"negative start time {self.start_s}")
        if not self.end_s > self.start_s:
            raise CorpusError(f"utterance end {self.end_s} <= start {self.start_s}")
        if any(not t or any(c.isspace() for c in t) for t in self.text):
            raise CorpusError("tokens must be non-empty and whitespace-free")

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


@dataclass(frozen=True)
class Session:
    session_id: str
    utterances: tuple[Utterance, ...]
    audio_path: Path | None = None
    n_speakers: int = field(default=0)

    def __post_init__(self):
        if any(u.session_id != self.session_id for u in self.utterances):
            raise CorpusError(f"session {self.session_id}: foreign utterance")
        starts = [u.start_s for u in self.utterances]
        if starts != sorted(starts):
            raise CorpusError(f"session {self.session_id}: utterances not sorted")
        if self.n_speakers == 0:
            object.__setattr__(self, "n_speakers", max(1, len(self.speakers)))
        if self.n_speakers < 1:
            raise CorpusError("n_speakers must be positive")

    @property
    def speakers(self) -> tuple[str, ...]:
        return tuple(sorted({u.speaker_id for u in self.utterances}))

    @property
    def end_s(self) -> float:
        return max((u.end_s for u in self.utterances), default=0.0)


@dataclass(frozen=True)
class EmpathyInterval:
    session_id: str
    start_s: float
    end_s: float

    def __post_init__(self):
        if self.start_s < 0 or not self.end_s > self.start_s:
            raise CorpusError(f"invalid interval [{self.start_s}, {self.end_s}]")

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


@dataclass(frozen=True)
class CategoryLexicon:
    """Word-category dictionary with literal and prefix (``pref*``) patterns."""

    name: str
    categories: dict[str, tuple[str, ...]]
    descriptors: tuple[str, ...] = ()

    def __post_init__(self):
        for cat, patterns in self.categories.items():
            if not patterns:
                raise CorpusError(f"lexicon {self.name}: empty category {cat!r}")
            for p in patterns:
                if not isinstance(p, str) or not _PATTERN_RE.match(p):
                    raise CorpusError(f"lexicon {self.name}: malformed pattern {p!r} in {cat!r}")
        for d in self.descriptors:
            if d not in DESCRIPTOR_SLOTS:
                raise CorpusError(f"lexicon {self.name}: unknown descriptor {d!r}")
        if len(set(self.descriptors)) != len(self.descriptors):
            raise CorpusError(f"lexicon {self.name}: duplicate descriptor")
        compiled = {}
        for cat, patterns in self.categories.items():
            exact = frozenset(p for p in patterns if not p.endswith("*"))
            prefixes = tuple(sorted({p[:-1] for p in patterns if p.endswith("*")}))
            compiled[cat] = (exact, prefixes)
        object.__setattr__(self, "_compiled", compiled)
        object.__setattr__(self, "_hits", {})

    @property
    def dimension(self) -> int:
        return len(self.descriptors) + len(self.categories)

    @property
    def feature_names(self) -> list[str]:
        return list(self.descriptors) + list(self.categories)

    def matches(self, category: str, token: str) -> bool:
        exact, prefixes = self._compiled[category]
        return token in exact or token.startswith(prefixes)

    def hit_vector(self, token: str) -> np.ndarray:
        """Boolean membership of ``token`` in each category (memoized)."""
        hits = self._hits.get(token)
        if hits is None:
            hits = np.array([self.matches(c, token) for c in self.categories], dtype=bool)
            hits.setflags(write=False)
            self._hits[token] = hits
        return hits


# ---------------------------------------------------------------------------
# transcripts


def _utterance_record(u: Utterance) -> str:
    rec = {
        "session_id": u.session_id,
        "speaker_id": u.speaker_id,
        "start_s": u.start_s,
        "end_s": u.end_s,
        "text": " ".join(u.text),
    }
    return json.dumps(rec, ensure_ascii=False)


def _require_file(path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    return path


def _iter_json_lines(path: Path):
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise CorpusError(f"{path}:{lineno}: record is not an object")
            yield lineno, rec


def load_sessions(path, audio_dir=None) -> list[Session]:
    """Read a transcript file into sessions sorted by id.

    Utterances are grouped by ``session_id`` and sorted by ``start_s``
    (ties broken by end time then speaker). When ``audio_dir`` is given and
    ``<audio_dir>/<session_id>.wav`` exists, it is attached and its duration
    checked against the transcript.
    """
    path = _require_file(path)
    grouped: dict[str, list[Utterance]] = defaultdict(list)
    seen: dict[tuple, int] = {}
    for lineno, rec in _iter_json_lines(path):
        try:
            utt = Utterance(
                session_id=str(rec["session_id"]),
                speaker_id=str(rec["speaker_id"]),
                start_s=float(rec["start_s"]),
                end_s=float(rec["end_s"]),
                text=tokenize(str(rec["text"])),
            )
        except KeyError as exc:
            raise CorpusError(f"{path}:{lineno}: missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise CorpusError(f"{path}:{lineno}: {exc}") from None
        key = (utt.session_id, utt.speaker_id, utt.start_s, utt.end_s, utt.text)
        if key in seen:
            raise CorpusError(f"{path}:{lineno}: duplicate of record on line {seen[key]}")
        seen[key] = lineno
        grouped[utt.session_id].append(utt)

    sessions = []
    for sid in sorted(grouped):
        utts = sorted(grouped[sid], key=lambda u: (u.start_s, u.end_s, u.speaker_id))
        audio_path = None
        if audio_dir is not None:
            candidate = Path(audio_dir) / f"{sid}.wav"
            if candidate.is_file():
                audio_path = candidate
        session = Session(sid, tuple(utts), audio_path)
        if audio_path is not None:
            duration = wav_duration(audio_path)
            if session.end_s > duration + AUDIO_SLACK_S:
                raise CorpusError(
                    f"session {sid}: transcript ends at {session.end_s:.2f}s "
                    f"but audio lasts {duration:.2f}s"
                )
        sessions.append(session)
    return sessions


def save_sessions(sessions: Iterable[Session], path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for session in sessions:
            for utt in session.utterances:
                fh.write(_utterance_record(utt) + "\n")


# ---------------------------------------------------------------------------
# annotations


def load_annotations(path) -> list[EmpathyInterval]:
    path = _require_file(path)
    intervals = []
    for index, (lineno, rec) in enumerate(_iter_json_lines(path)):
        try:
            start, end = float(rec["start_s"]), float(rec["end_s"])
            sid = str(rec["session_id"])
        except KeyError as exc:
            raise CorpusError(f"{path}:{lineno}: missing field {exc.args[0]!r}") from None
        if start < 0 or not end > start:
            raise CorpusError(
                f"annotation record {index} ({path}:{lineno}): end {end} <= start {start}"
                if not end > start
                else f"annotation record {index} ({path}:{lineno}): negative start"
            )
        interval = EmpathyInterval(sid, start, end)
        lo, hi = TYPICAL_INTERVAL_S
        if not lo <= interval.duration_s <= hi:
            warnings.warn(
                f"annotation record {index}: duration {interval.duration_s:.1f}s "
                f"outside typical range [{lo:g}, {hi:g}] s",
                stacklevel=2,
            )
        intervals.append(interval)
    return intervals


def save_annotations(intervals: Iterable[EmpathyInterval], path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for iv in intervals:
            rec = {"session_id": iv.session_id, "start_s": iv.start_s, "end_s": iv.end_s}
            fh.write(json.dumps(rec) + "\n")


# ---------------------------------------------------------------------------
# lexicons


def _no_duplicate_keys(pairs):
    out = {}
    for key, value in pairs:
        if key in out:
            raise CorpusError(f"duplicate key {key!r}")
        out[key] = value
    return out


def load_lexicon(path) -> CategoryLexicon:
    path = _require_file(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"), object_pairs_hook=_no_duplicate_keys)
    except json.JSONDecodeError as exc:
        raise CorpusError(f"{path}: invalid JSON ({exc.msg})") from None
    except CorpusError as exc:
        raise CorpusError(f"{path}: {exc}") from None
    if not isinstance(doc.get("categories"), dict):
        raise CorpusError(f"{path}: 'categories' must be an object")
    categories = {}
    for cat, patterns in doc["categories"].items():
        if not isinstance(patterns, list):
            raise CorpusError(f"{path}: category {cat!r} must list patterns")
        categories[cat] = tuple(patterns)
    return CategoryLexicon(
        name=str(doc.get("name", path.stem)),
        categories=categories,
        descriptors=tuple(doc.get("descriptors", ())),
    )


def save_lexicon(lexicon: CategoryLexicon, path) -> None:
    doc = {
        "name": lexicon.name,
        "descriptors": list(lexicon.descriptors),
        "categories": {k: list(v) for k, v in lexicon.categories.items()},
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# audio


def read_wav(path) -> np.ndarray:
    """Read a PCM16 mono 16 kHz WAVE file as float64 samples in [-1, 1)."""
    with wave.open(str(path), "rb") as wf:
        if wf.getnchannels() != 1 or wf.getsampwidth() != 2:
            raise CorpusError(f"{path}: expected mono PCM16")
        if wf.getframerate() != SAMPLE_RATE:
            raise CorpusError(f"{path}: expected {SAMPLE_RATE} Hz, got {wf.getframerate()}")
        raw = wf.readframes(wf.getnframes())
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def write_wav(path, samples: np.ndarray) -> None:
    pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(SAMPLE_RATE)
        wf.writeframes(pcm.tobytes())


def wav_duration(path) -> float:
    with wave.open(str(path), "rb") as wf:
        return wf.getnframes() / wf.getframerate()


# ---------------------------------------------------------------------------
# splitting


class SplitInfeasible(ValueError):
    pass


def _speaker_components(sessions: Sequence[Session]) -> list[list[str]]:
    """Group session ids that are connected through shared speakers."""
    parent = {s.session_id: s.session_id for s in sessions}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    owner: dict[str, str] = {}
    for s in sessions:
        for spk in s.speakers:
            if spk in owner:
                a, b = find(owner[spk]), find(s.session_id)
                if a != b:
                    parent[max(a, b)] = min(a, b)
            else:
                owner[spk] = s.session_id
    comps: dict[str, list[str]] = defaultdict(list)
    for sid in sorted(parent):
        comps[find(sid)].append(sid)
    return [comps[k] for k in sorted(comps)]


def split_sessions(sessions, ratio=0.25, seed=0, exclusions=(), weights=None):
    """Speaker-disjoint random split into ``(train_ids, test_ids)``.

    ``ratio`` is the test fraction. Sessions sharing any speaker move together,
    and components touching an excluded session are pinned to train. Raises
    :class:`SplitInfeasible` when no non-empty test set can be formed.

    With ``weights`` (session id -> non-negative weight, e.g. annotated
    interaction counts), weighted components are placed first so the test
    side receives about ``ratio`` of the total weight; the remaining
    components then fill the session target.
    """
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    ids = {s.session_id for s in sessions}
    exclusions = set(exclusions)
    unknown = exclusions - ids
    if unknown:
        raise ValueError(f"exclusions not in corpus: {sorted(unknown)}")
    if not sessions:
        return set(), set()

    comps = _speaker_components(sessions)
    eligible = [c for c in comps if not exclusions.intersection(c)]
    random.Random(seed).shuffle(eligible)
    target = max(1, round(ratio * len(ids)))
    test: set[str] = set()
    if weights:
        weight = {sid: float(weights.get(sid, 0.0)) for sid in ids}
        if min(weight.values()) < 0:
            raise ValueError("split weights must be non-negative")
        w_target, w_test = ratio * sum(weight.values()), 0.0
        for comp in eligible:
            w = sum(weight[sid] for sid in comp)
            if w == 0 or len(test) + len(comp) >= len(ids) or len(test) + len(comp) > target:
                continue
            if abs(w_test + w - w_target) < abs(w_test - w_target):
                test.update(comp)
                w_test += w
        eligible = [c for c in eligible if not any(weight[sid] for sid in c)]
    for comp in eligible:
        if test.intersection(comp) or len(test) + len(comp) >= len(ids):
            continue
        if abs(len(test) + len(comp) - target) < abs(len(test) - target):
            test.update(comp)
    if not test:
        by_id = {s.session_id: s for s in sessions}
        counts: dict[str, int] = defaultdict(int)
        for s in sessions:
            for spk in s.speakers:
                counts[spk] += 1
        shared = sorted(spk for spk, n in counts.items() if n > 1)
        raise SplitInfeasible(
            "speaker-disjoint split infeasible; speakers shared across sessions: "
            + (", ".join(shared) if shared else "(none; all sessions excluded)")
            + f" ({len(by_id)} sessions, {len(eligible)} movable components)"
        )
    return ids - test, test
