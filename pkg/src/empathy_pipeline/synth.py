"""Seeded synthetic clinical-conversation corpora with known ground truth.

Each session has one patient, one or more providers drawn from a small
recurring clinic pool, and sometimes a friend or family member. Words come
from role-specific pseudo-word pools mixed with a shared pool; inside
annotated empathic interactions, patient-side speech carries emotion words
and provider speech carries response words. Optional audio renders every
utterance as a harmonic tone at the speaker's own fundamental frequency.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .corpus_io import (
    DESCRIPTOR_SLOTS,
    SAMPLE_RATE,
    CategoryLexicon,
    EmpathyInterval,
    Session,
    Utterance,
    save_annotations,
    save_lexicon,
    save_sessions,
    write_wav,
)
from .role_lm import HCP, PAT
from .segmentation import MIN_OVERLAP_S, TARGET_S, generate_segments, label_segments

FF = "FF"

EMOTION_WORDS = (
    "sad", "sadness", "scared", "afraid", "worried", "worry", "cry", "crying", "cried", "upset",
    "hurt", "lonely", "anxious", "angry", "frightened", "nervous", "depressed", "hopeless",
    "terrified", "overwhelmed", "miserable", "grief", "fear", "pain",
)
RESPONSE_WORDS = (
    "understand", "sorry", "hear", "difficult", "hard", "imagine", "feel", "feeling",
    "support", "together", "concern", "care", "normal", "okay",
)

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


class SynthError(ValueError):
    """Raised for configurations that cannot produce a corpus."""


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_sessions: int = 100
    mean_speakers: float = 3.66
    role_word_ratio: tuple[float, float, float] = (0.41, 0.54, 0.05)
    interactions_per_session: float = 270 / 435
    interaction_range_s: tuple[float, float] = (3.0, 93.0)
    interaction_mean_s: float = 25.0
    mean_session_s: float = 164.8 * 3600 / 435
    ff_presence: float = 0.6
    hcp_pool_size: int = 4
    sessions_per_clinic: int = 4
    shared_fraction: float = 0.5
    shared_vocab: int = 400
    role_vocab: int = 300
    words_per_s: float = 2.5
    emotion_rate: float = 0.25
    transcribed_fraction: float = 52 / 435
    background_sentences: int = 2000
    audio: bool = False
    f0_range_hz: tuple[float, float] = (90.0, 260.0)
    interaction_f0_shift: float = 1.15
    interaction_gain: float = 1.4

    def __post_init__(self):
        ratio = self.role_word_ratio
        if len(ratio) != 3 or min(ratio) < 0 or abs(sum(ratio) - 1) > 1e-9:
            raise SynthError("role_word_ratio must be three non-negative shares summing to 1")
        lo, hi = self.interaction_range_s
        if not 0 < lo <= self.interaction_mean_s <= hi:
            raise SynthError("interaction range must satisfy 0 < min <= mean <= max")
        if self.n_sessions < 0 or self.mean_session_s <= 0 or self.interactions_per_session < 0:
            raise SynthError("session counts and durations must be non-negative")
        if not 0 <= self.shared_fraction <= 1:
            raise SynthError("shared_fraction must lie in [0, 1]")
        extra = self.mean_speakers - 2 - self.ff_presence
        if not 0 <= extra <= self.hcp_pool_size - 1:
            raise SynthError(f"mean_speakers={self.mean_speakers} unreachable with this clinic pool")
        if ratio[2] > 0 and self.ff_presence <= 0:
            raise SynthError("friend/family words require ff_presence > 0")
        if ratio[2] / max(self.ff_presence, 1e-12) >= 1 and ratio[2] > 0:
            raise SynthError("friend/family share too large for its presence rate")

    @classmethod
    def from_dict(cls, doc) -> "SynthConfig":
        doc = dict(doc)
        for key in ("role_word_ratio", "interaction_range_s", "f0_range_hz"):
            if key in doc:
                doc[key] = tuple(doc[key])
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise SynthError(f"unknown synth settings: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SynthCorpus:
    config: SynthConfig
    sessions: list[Session]
    intervals: list[EmpathyInterval]
    roles: dict[str, dict[str, str]]  # session -> speaker -> PAT / HCP / FF
    f0: dict[str, dict[str, float]]  # session -> speaker -> Hz
    durations: dict[str, float]
    transcribed: list[str]
    background_pat: list[tuple[str, ...]]
    background_hcp: list[tuple[str, ...]]
    liwc: CategoryLexicon
    empath: CategoryLexicon

    @cached_property
    def segment_labels(self) -> dict[str, list[int]]:
        out = {}
        for s in self.sessions:
            segs = label_segments(
                generate_segments(s, TARGET_S),
                [iv for iv in self.intervals if iv.session_id == s.session_id],
                MIN_OVERLAP_S,
            )
            out[s.session_id] = [int(g.label) for g in segs]
        return out

    def lm_role(self, session_id: str, speaker_id: str) -> str:
        """Role used for language modelling: friends and family count as PAT."""
        return HCP if self.roles[session_id][speaker_id] == HCP else PAT

    def render_audio(self, session_id: str) -> np.ndarray:
        session = next(s for s in self.sessions if s.session_id == session_id)
        ivs = [iv for iv in self.intervals if iv.session_id == session_id]
        return render_session(session, self.f0[session_id], self.roles[session_id], ivs,
                              self.durations[session_id], self.config, _session_index(session_id))


def _session_index(session_id: str) -> int:
    return int(session_id[1:])


def _pseudo_words(rng, n, taken):
    words = []
    while len(words) < n:
        k = int(rng.integers(2, 4))
        w = "".join(_CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]
                    for _ in range(k))
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


@dataclass(frozen=True)
class _Vocab:
    shared: tuple[str, ...]
    pools: dict  # role -> tuple of words

    @staticmethod
    def zipf(n):
        w = 1.0 / np.arange(1, n + 1)
        return w / w.sum()


def _build_vocab(config: SynthConfig) -> _Vocab:
    rng = np.random.default_rng([config.seed, 0])
    taken = set(EMOTION_WORDS) | set(RESPONSE_WORDS)
    shared = tuple(_pseudo_words(rng, config.shared_vocab, taken))
    pools = {r: tuple(_pseudo_words(rng, config.role_vocab, taken)) for r in (PAT, HCP)}
    pools[FF] = pools[PAT]
    return _Vocab(shared, pools)


def _draw_words(rng, vocab: _Vocab, role: str, n: int, shared_fraction: float) -> list[str]:
    pool = vocab.pools[role]
    use_shared = rng.random(n) < shared_fraction
    s_idx = rng.choice(len(vocab.shared), size=n, p=_Vocab.zipf(len(vocab.shared)))
    r_idx = rng.choice(len(pool), size=n, p=_Vocab.zipf(len(pool)))
    return [vocab.shared[a] if sh else pool[b] for sh, a, b in zip(use_shared, s_idx, r_idx)]


def _place_intervals(rng, config, n, length):
    lo, hi = config.interaction_range_s
    margin = 2.0
    if n and n * lo > length - 2 * margin:
        raise SynthError(f"{n} interactions of at least {lo:g}s do not fit a {length:.1f}s session")
    # shifted gamma with shape 2 so the mean is interaction_mean_s; overlong
    # draws are redrawn
    scale = (config.interaction_mean_s - lo) / 2.0
    for _ in range(100):
        durs = np.clip(lo + rng.gamma(2.0, scale, size=n), lo, hi) if scale > 0 else np.full(n, lo)
        durs = np.round(durs, 2)
        free = length - 2 * margin - durs.sum()
        if free >= 0:
            break
    else:
        raise SynthError(f"interactions totalling {durs.sum():.1f}s do not fit a {length:.1f}s session")
    gaps = rng.dirichlet(np.ones(n + 1)) * free if n else np.zeros(1)
    out, t = [], margin
    for d, g in zip(durs, gaps[:n]):
        t += g
        out.append((round(t, 2), round(t + d, 2)))
        t += d
    return out


def _session_speakers(rng, config, index):
    clinic = index // config.sessions_per_clinic
    pool = [f"h{clinic:03d}_{k}" for k in range(config.hcp_pool_size)]
    order = rng.permutation(len(pool))
    extra_mean = config.mean_speakers - 2 - config.ff_presence
    n_extra = int(rng.binomial(config.hcp_pool_size - 1, extra_mean / (config.hcp_pool_size - 1))) \
        if config.hcp_pool_size > 1 else 0
    hcps = [pool[k] for k in order[: 1 + n_extra]]
    roles = {f"p{index:04d}": PAT}
    roles.update({h: HCP for h in hcps})
    if rng.random() < config.ff_presence:
        roles[f"f{index:04d}"] = FF
    return roles


def _speaker_shares(config, roles):
    pat, hcp, ff = config.role_word_ratio
    has_ff = FF in roles.values()
    if has_ff and ff > 0:
        ff_share = ff / config.ff_presence  # expectation over sessions restores ``ff``
        k = (1 - ff_share) / (pat + hcp)
    else:
        ff_share, k = 0.0, 1.0 / (pat + hcp)
    n_hcp = sum(r == HCP for r in roles.values())
    share = {}
    for spk, role in roles.items():
        share[spk] = {PAT: pat * k, HCP: hcp * k / n_hcp, FF: ff_share}[role]
    return share


def _f0_for(config, key, taken):
    rng = np.random.default_rng(key)
    lo, hi = config.f0_range_hz
    for _ in range(1000):
        f = round(float(rng.uniform(lo, hi)), 1)
        if all(abs(f - t) >= 8.0 for t in taken):
            return f
    raise SynthError("cannot draw distinct speaker frequencies")


def _clinic_f0(config, clinic):
    freqs = {}
    for k in range(config.hcp_pool_size):
        spk = f"h{clinic:03d}_{k}"
        freqs[spk] = _f0_for(config, [config.seed, 4, clinic, k], list(freqs.values()))
    return freqs


def _generate_session(config, vocab, index):
    rng = np.random.default_rng([config.seed, 1, index])
    sid = f"s{index:04d}"
    length = round(float(config.mean_session_s * rng.uniform(0.6, 1.4)), 2)
    roles = _session_speakers(rng, config, index)
    shares = _speaker_shares(config, roles)
    speakers = sorted(roles)
    probs = np.array([shares[s] for s in speakers])
    probs = probs / probs.sum()
    n_int = int(rng.poisson(config.interactions_per_session))
    spans = _place_intervals(rng, config, n_int, length)
    bounds = sorted({b for span in spans for b in span})

    utts = []
    t = 0.0
    while True:
        start = round(t + float(rng.exponential(0.4)), 2)
        end = round(start + 0.8 + float(rng.gamma(2.0, 2.0)), 2)
        cut = next((b for b in bounds if start < b < end), None)
        if cut is not None:
            end = cut
        if end > length:
            break
        t = end
        if end - start < 0.3:
            continue
        spk = speakers[int(rng.choice(len(speakers), p=probs))]
        role = roles[spk]
        n_words = max(1, int(round((end - start) * config.words_per_s)))
        words = _draw_words(rng, vocab, role, n_words, config.shared_fraction)
        if any(a <= start and end <= b for a, b in spans):
            planted = EMOTION_WORDS if role in (PAT, FF) else RESPONSE_WORDS
            mask = rng.random(n_words) < config.emotion_rate
            for k in np.flatnonzero(mask):
                words[k] = planted[int(rng.integers(len(planted)))]
        utts.append(Utterance(sid, spk, start, end, tuple(words)))
    # speakers drawn for the session who never got a turn are dropped
    roles = {spk: r for spk, r in roles.items() if any(u.speaker_id == spk for u in utts)}
    session = Session(sid, tuple(utts))
    intervals = [EmpathyInterval(sid, a, b) for a, b in spans]
    return session, intervals, roles, length


def _background(config, vocab, role, rng):
    sents = []
    for _ in range(config.background_sentences):
        n = int(rng.integers(4, 16))
        sents.append(tuple(_draw_words(rng, vocab, role, n, config.shared_fraction)))
    return sents


def placeholder_lexicons(config: SynthConfig, vocab: _Vocab | None = None):
    """Neutral LIWC-shaped (64 categories + 2 descriptors) and Empath-shaped
    (194 categories) lexicons. Only a few categories hold real emotion or
    response words; the rest hold random pseudo-words and prefixes."""
    vocab = vocab or _build_vocab(config)
    rng = np.random.default_rng([config.seed, 2])
    all_words = list(vocab.shared) + list(vocab.pools[PAT]) + list(vocab.pools[HCP])

    def filler(n_cats, prefix):
        cats = {}
        for k in range(n_cats):
            picks = rng.choice(len(all_words), size=8, replace=False)
            pats = [all_words[i] for i in picks[:6]] + [all_words[i][:3] + "*" for i in picks[6:]]
            cats[f"{prefix}{k:03d}"] = sorted(set(pats))
        return cats

    liwc_real = {
        "negemo": ["sad*", "scared", "afraid", "worr*", "cry*", "cried", "upset", "hurt", "lonely",
                   "anxious", "angry", "frighten*", "nervous", "depress*", "hopeless", "terrified",
                   "miserable", "grief", "fear", "pain"],
        "affect": sorted(set(EMOTION_WORDS) | {"care", "feel*", "support"}),
        "social": ["together", "support", "care", "hear"],
        "cogproc": ["understand", "imagine", "normal", "okay", "hard", "difficult"],
    }
    liwc = CategoryLexicon(
        "liwc_placeholder",
        {k: tuple(v) for k, v in {**liwc_real, **filler(64 - len(liwc_real), "liwc_")}.items()},
        DESCRIPTOR_SLOTS,
    )
    empath_real = {
        "sadness": ["sad*", "cry*", "cried", "grief", "miserable", "hopeless", "depressed", "lonely"],
        "fear": ["scared", "afraid", "fear", "frightened", "terrified", "anxious", "nervous"],
        "nervousness": ["nervous", "worr*", "anxious", "overwhelmed"],
        "suffering": ["pain", "hurt", "suffer*", "miserable"],
        "sympathy": ["sorry", "understand", "imagine", "support", "care", "hear"],
        "negative_emotion": sorted(EMOTION_WORDS),
    }
    empath = CategoryLexicon(
        "empath_placeholder",
        {k: tuple(v) for k, v in {**empath_real, **filler(194 - len(empath_real), "empath_")}.items()},
    )
    return liwc, empath


def render_session(session, f0_map, roles, intervals, length, config, index) -> np.ndarray:
    """Tone rendering: a 5-harmonic voice per utterance at the speaker's f0,
    raised in pitch and level inside interactions, over low-level noise."""
    rng = np.random.default_rng([config.seed, 3, index])
    n = int(math.ceil(length * SAMPLE_RATE))
    audio = 0.002 * rng.standard_normal(n, dtype=np.float32)
    harmonics = np.array([1.0, 0.5, 0.33, 0.25, 0.2])
    spans = [(iv.start_s, iv.end_s) for iv in intervals]
    for utt in session.utterances:
        a = int(round(utt.start_s * SAMPLE_RATE))
        b = min(n, int(round(utt.end_s * SAMPLE_RATE)))
        if b <= a:
            continue
        inside = any(s <= utt.start_s and utt.end_s <= e for s, e in spans)
        f0 = f0_map[utt.speaker_id] * float(rng.uniform(0.97, 1.03))
        gain = 0.1
        if inside:
            f0 *= config.interaction_f0_shift
            gain *= config.interaction_gain
        t = np.arange(b - a) / SAMPLE_RATE
        # slow vibrato so the contour is not perfectly flat
        phase = 2 * np.pi * f0 * (t + 0.004 * np.sin(2 * np.pi * 3.0 * t))
        # sin((k+1) p) by the Chebyshev recurrence, one sin/cos per utterance
        s_prev, s_cur = np.zeros(len(phase), np.float32), np.sin(phase).astype(np.float32)
        two_cos = (2.0 * np.cos(phase)).astype(np.float32)
        wave = harmonics[0] * s_cur
        for h in harmonics[1:]:
            s_prev, s_cur = s_cur, two_cos * s_cur - s_prev
            wave += h * s_cur
        ramp = np.minimum(1.0, np.minimum(t, t[::-1]) / 0.02).astype(np.float32)
        audio[a:b] += np.float32(gain / harmonics.sum()) * ramp * wave
    return audio.astype(np.float64)


def generate_corpus(config: SynthConfig | None = None) -> SynthCorpus:
    """Build a corpus deterministically from ``config.seed``.

    Sessions are generated from independent per-session seeds, so a session's
    content does not depend on how many sessions are requested after it.
    """
    config = config or SynthConfig()
    vocab = _build_vocab(config)
    sessions, intervals, roles, durations, f0 = [], [], {}, {}, {}
    for i in range(config.n_sessions):
        session, ivs, spk_roles, length = _generate_session(config, vocab, i)
        sessions.append(session)
        intervals.extend(ivs)
        roles[session.session_id] = spk_roles
        durations[session.session_id] = length
        clinic = _clinic_f0(config, i // config.sessions_per_clinic)
        freqs = {spk: clinic[spk] for spk in spk_roles if spk_roles[spk] == HCP}
        for spk in sorted(s for s in spk_roles if spk_roles[s] != HCP):
            freqs[spk] = _f0_for(config, [config.seed, 5, *map(ord, spk)], list(freqs.values()))
        f0[session.session_id] = freqs
    n_tr = int(round(config.transcribed_fraction * config.n_sessions))
    pick = np.random.default_rng([config.seed, 6]).permutation(config.n_sessions)[:n_tr]
    transcribed = sorted(sessions[k].session_id for k in pick)
    bg_rng = np.random.default_rng([config.seed, 7])
    background_pat = _background(config, vocab, PAT, bg_rng)
    background_hcp = _background(config, vocab, HCP, bg_rng)
    liwc, empath = placeholder_lexicons(config, vocab)
    return SynthCorpus(config, sessions, intervals, roles, f0, durations, transcribed,
                       background_pat, background_hcp, liwc, empath)


CORPUS_FILES = {
    "transcripts": "transcripts.jsonl",
    "annotations": "annotations.jsonl",
    "oracle": "oracle.json",
    "transcribed": "transcribed_roles.json",
    "background_pat": "background_pat.txt",
    "background_hcp": "background_hcp.txt",
    "liwc": "lexicon_liwc.json",
    "empath": "lexicon_empath.json",
    "audio_dir": "audio",
}


def write_corpus(corpus: SynthCorpus, out_dir, audio: bool | None = None) -> dict[str, Path]:
    """Write every corpus file under ``out_dir``; returns name -> path.

    ``transcribed_roles.json`` lists the transcribed sessions with oracle
    speaker roles (friends and family mapped to PAT), which is what the
    in-domain language models are trained from.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: out / v for k, v in CORPUS_FILES.items()}
    save_sessions(corpus.sessions, paths["transcripts"])
    save_annotations(corpus.intervals, paths["annotations"])
    oracle = {"roles": corpus.roles, "segment_labels": corpus.segment_labels,
              "durations": corpus.durations, "f0": corpus.f0, "config": corpus.config.to_dict()}
    _dump_json(oracle, paths["oracle"])
    transcribed = {sid: {spk: corpus.lm_role(sid, spk) for spk in corpus.roles[sid]} for sid in corpus.transcribed}
    _dump_json(transcribed, paths["transcribed"])
    for key, sents in (("background_pat", corpus.background_pat), ("background_hcp", corpus.background_hcp)):
        paths[key].write_text("".join(" ".join(s) + "\n" for s in sents), encoding="utf-8")
    save_lexicon(corpus.liwc, paths["liwc"])
    save_lexicon(corpus.empath, paths["empath"])
    if corpus.config.audio if audio is None else audio:
        paths["audio_dir"].mkdir(exist_ok=True)
        for s in corpus.sessions:
            write_wav(paths["audio_dir"] / f"{s.session_id}.wav", corpus.render_audio(s.session_id))
    else:
        paths.pop("audio_dir")
    return paths


def _dump_json(obj, path):
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


def word_counts_by_role(corpus: SynthCorpus) -> dict[str, int]:
    counts = {PAT: 0, HCP: 0, FF: 0}
    for s in corpus.sessions:
        for u in s.utterances:
            counts[corpus.roles[s.session_id][u.speaker_id]] += len(u.text)
    return counts
