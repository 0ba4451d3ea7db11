"""Frame-level cepstral and prosodic features with per-speaker normalization.

All analysis runs at 16 kHz with 25 ms frames and a 10 ms shift. The frame
table carries 16 feature columns, in this order::

    mfcc0 .. mfcc12, log_pitch, jitter, shimmer

``mfcc0`` doubles as the energy feature. Pitch, jitter and shimmer are NaN
on unvoiced frames.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import fft as sp_fft
from scipy.signal import find_peaks

from .corpus_io import SAMPLE_RATE, Session
from .role_lm import HCP, PAT

FRAME_LEN_S = 0.025
HOP_S = 0.010
PREEMPHASIS = 0.97
N_FFT = 512
N_MELS = 23
N_CEPS = 13
LOG_FLOOR = 1e-10
PITCH_RANGE_HZ = (60.0, 400.0)
VOICING_THRESHOLD = 0.45
PERIOD_WINDOW_S = 0.2

FEATURE_COLUMNS = tuple(f"mfcc{k}" for k in range(N_CEPS)) + ("log_pitch", "jitter", "shimmer")
PITCH_COL, JITTER_COL, SHIMMER_COL = 13, 14, 15
STAT_NAMES = ("max", "min", "mean", "median", "std", "skewness", "kurtosis")
CEPSTRUM_DIM = 7 * 12
PROSODY_DIM = 7 * 4


def n_frames(n_samples: int, sr: int = SAMPLE_RATE, frame_len_s=FRAME_LEN_S, hop_s=HOP_S) -> int:
    flen, hop = int(round(frame_len_s * sr)), int(round(hop_s * sr))
    return 0 if n_samples < flen else (n_samples - flen) // hop + 1


def frame_signal(
    audio,
    sr: int = SAMPLE_RATE,
    frame_len_s: float = FRAME_LEN_S,
    hop_s: float = HOP_S,
    preemphasis: float | None = PREEMPHASIS,
    window: str | None = "hamming",
) -> np.ndarray:
    """Slice ``audio`` into overlapping frames, shape ``(n_frames, frame_len)``.

    Pre-emphasis ``y[n] = x[n] - a x[n-1]`` is applied to the whole signal
    before framing; pass ``preemphasis=None, window=None`` for raw frames.
    """
    if sr != SAMPLE_RATE:
        raise ValueError(f"expected {SAMPLE_RATE} Hz audio, got {sr} Hz")
    x = np.asarray(audio, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("expected mono audio")
    flen, hop = int(round(frame_len_s * sr)), int(round(hop_s * sr))
    count = n_frames(len(x), sr, frame_len_s, hop_s)
    if count == 0:
        return np.zeros((0, flen))
    if preemphasis:
        x = np.concatenate([x[:1], x[1:] - preemphasis * x[:-1]])
    frames = np.lib.stride_tricks.sliding_window_view(x, flen)[::hop][:count]
    if window == "hamming":
        return frames * np.hamming(flen)
    if window is not None:
        raise ValueError(f"unsupported window {window!r}")
    return frames.copy()


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


@lru_cache(maxsize=4)
def mel_filterbank(n_mels=N_MELS, n_fft=N_FFT, sr=SAMPLE_RATE, fmin=0.0, fmax=None) -> np.ndarray:
    """Triangular filters, shape ``(n_mels, n_fft // 2 + 1)``, equally spaced on the mel scale."""
    fmax = sr / 2 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sr / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    return fb


@lru_cache(maxsize=4)
def dct_matrix(n: int = N_MELS) -> np.ndarray:
    """Orthonormal DCT-II matrix ``D`` with ``D @ D.T == I``."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    d = np.sqrt(2.0 / n) * np.cos(np.pi * k * (2 * i + 1) / (2 * n))
    d[0] /= np.sqrt(2.0)
    d.setflags(write=False)
    return d


def compute_mfcc(frames, n_fft=N_FFT, n_mels=N_MELS, n_ceps=N_CEPS, floor=LOG_FLOOR) -> np.ndarray:
    """MFCC 0..``n_ceps - 1`` of windowed frames: power spectrum, mel
    filterbank over 0-8 kHz, floored natural log, orthonormal DCT-II."""
    frames = np.atleast_2d(frames)
    if frames.shape[0] == 0:
        return np.zeros((0, n_ceps))
    spec = sp_fft.rfft(frames, n_fft, axis=1)
    power = spec.real ** 2 + spec.imag ** 2
    logmel = np.log(np.maximum(power @ mel_filterbank(n_mels, n_fft).T, floor))
    return logmel @ dct_matrix(n_mels)[:n_ceps].T


def normalized_acf(frames, max_lag: int, min_lag: int = 0, chunk: int = 1024) -> np.ndarray:
    """``r[t, tau] = sum x[n] x[n+tau] / sqrt(E_head(tau) E_tail(tau))``
    over the overlapping parts only, for lags ``min_lag..max_lag``.

    Column ``k`` of the result is lag ``min_lag + k``.
    """
    frames = np.atleast_2d(frames)
    count, n = frames.shape
    lags = np.arange(min_lag, max_lag + 1)
    nfft = sp_fft.next_fast_len(n + max_lag + 1, real=True)
    out = np.empty((count, len(lags)))
    for lo in range(0, count, chunk):
        block = frames[lo : lo + chunk]
        spec = sp_fft.rfft(block, nfft, axis=1)
        np.multiply(spec, spec.conj(), out=spec)
        acf = sp_fft.irfft(spec.real, nfft, axis=1)[:, min_lag : max_lag + 1]
        sq = np.zeros((block.shape[0], n + 1))
        np.cumsum(block * block, axis=1, out=sq[:, 1:])
        denom = sq[:, n - lags] * (sq[:, -1:] - sq[:, lags])
        np.sqrt(denom, out=denom)
        with np.errstate(divide="ignore", invalid="ignore"):
            out[lo : lo + chunk] = np.where(denom > 1e-12, acf / denom, 0.0)
    return out


def track_pitch(
    frames,
    sr: int = SAMPLE_RATE,
    fmin: float = PITCH_RANGE_HZ[0],
    fmax: float = PITCH_RANGE_HZ[1],
    threshold: float = VOICING_THRESHOLD,
) -> tuple[np.ndarray, np.ndarray]:
    """Autocorrelation pitch tracker on raw (unwindowed) frames.

    Returns ``(log_pitch, voiced)``; ``log_pitch`` is ``ln(f0 / Hz)`` on
    voiced frames and NaN elsewhere. The chosen lag is the shortest local
    ACF maximum reaching 90% of the best peak in the 60-400 Hz range, which
    suppresses period-doubling errors; a frame is voiced when that peak is
    at least ``threshold``.
    """
    frames = np.atleast_2d(np.asarray(frames, dtype=float))
    count = frames.shape[0]
    log_pitch = np.full(count, np.nan)
    voiced = np.zeros(count, dtype=bool)
    if count == 0:
        return log_pitch, voiced
    lmin = int(np.floor(sr / fmax))
    lmax = min(int(np.ceil(sr / fmin)), frames.shape[1] - 2)
    centered = frames - frames.mean(axis=1, keepdims=True)
    window = normalized_acf(centered, lmax + 1, lmin - 1)
    inner = window[:, 1:-1]
    is_peak = (inner > window[:, :-2]) & (inner >= window[:, 2:])
    peak_vals = np.where(is_peak, inner, -np.inf)
    best = peak_vals.max(axis=1)
    has_peak = np.isfinite(best)
    good = is_peak & (peak_vals >= 0.9 * best[:, None])
    first = np.argmax(good, axis=1)
    rows = np.arange(count)
    value = inner[rows, first]
    voiced = has_peak & (value >= threshold)
    # parabolic refinement around the chosen lag
    y0, y1, y2 = window[rows, first], window[rows, first + 1], window[rows, first + 2]
    denom = y0 - 2 * y1 + y2
    with np.errstate(divide="ignore", invalid="ignore"):
        shift = np.where(np.abs(denom) > 1e-12, 0.5 * (y0 - y2) / denom, 0.0)
    lag = lmin + first + np.clip(shift, -0.5, 0.5)
    log_pitch[voiced] = np.log(sr / lag[voiced])
    return log_pitch, voiced


def _refine_peaks(x, idx):
    """Parabolic interpolation of sample peaks -> (positions, amplitudes)."""
    left = x[np.maximum(idx - 1, 0)]
    mid = x[idx]
    right = x[np.minimum(idx + 1, len(x) - 1)]
    denom = left - 2 * mid + right
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(np.abs(denom) > 1e-15, 0.5 * (left - right) / denom, 0.0)
    p = np.clip(p, -0.5, 0.5)
    return idx + p, mid - 0.25 * (left - right) * p


def _voiced_runs(voiced):
    padded = np.concatenate([[False], voiced, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(int)))
    return list(zip(edges[::2], edges[1::2]))


def jitter_shimmer(
    audio,
    log_pitch,
    voiced,
    sr: int = SAMPLE_RATE,
    hop_s: float = HOP_S,
    frame_len_s: float = FRAME_LEN_S,
    window_s: float = PERIOD_WINDOW_S,
) -> tuple[np.ndarray, np.ndarray]:
    """Local jitter and shimmer per voiced frame.

    Period marks are the positive signal peaks of each voiced run, spaced at
    least 75% of the shortest period the pitch track reports for that run,
    refined to sub-sample position and height by parabolic interpolation.
    For every voiced frame the marks inside a ``window_s`` window centred
    on the frame give periods ``T_i`` and peak amplitudes ``A_i``::

        jitter  = mean |T_i - T_{i-1}| / mean T
        shimmer = mean |A_i - A_{i-1}| / mean A

    Windows holding fewer than 3 periods yield 0. Unvoiced frames are NaN.
    """
    x = np.asarray(audio, dtype=float)
    voiced = np.asarray(voiced, dtype=bool)
    count = len(voiced)
    jitter = np.full(count, np.nan)
    shimmer = np.full(count, np.nan)
    flen, hop = int(round(frame_len_s * sr)), int(round(hop_s * sr))
    half = 0.5 * window_s * sr
    centers = np.arange(count) * hop + flen / 2
    for a, b in _voiced_runs(voiced):
        f0_max = np.exp(np.nanmax(log_pitch[a:b]))
        lo = a * hop
        hi = min(len(x), (b - 1) * hop + flen)
        seg = x[lo:hi]
        peaks, _ = find_peaks(seg, distance=max(1, int(0.75 * sr / f0_max)), height=0.0)
        pos, amp = _refine_peaks(seg, peaks)
        pos = pos + lo
        run_frames = np.arange(a, b)
        jitter[run_frames] = 0.0
        shimmer[run_frames] = 0.0
        if len(pos) < 4:
            continue
        periods = np.diff(pos)
        dper = np.concatenate([[0.0], np.abs(np.diff(periods))])
        damp = np.concatenate([[0.0], np.abs(np.diff(amp))])
        c_dper = np.concatenate([[0.0], np.cumsum(dper)])
        c_damp = np.concatenate([[0.0], np.cumsum(damp)])
        c_amp = np.concatenate([[0.0], np.cumsum(amp)])
        first = np.searchsorted(pos, centers[run_frames] - half, side="left")
        last = np.searchsorted(pos, centers[run_frames] + half, side="left")
        n_peaks = last - first
        ok = n_peaks >= 4
        f, l = first[ok], last[ok]
        # marks f..l-1: periods f..l-2 (indexing periods[i] = pos[i+1] - pos[i]),
        # period differences dper[f+1..l-2], amplitude differences damp[f+1..l-1]
        n_per = l - f - 1
        mean_t = (pos[l - 1] - pos[f]) / n_per
        mean_dt = (c_dper[l - 1] - c_dper[f + 1]) / (n_per - 1)
        mean_a = (c_amp[l] - c_amp[f]) / (l - f)
        mean_da = (c_damp[l] - c_damp[f + 1]) / (l - f - 1)
        idx = run_frames[ok]
        jitter[idx] = mean_dt / mean_t
        with np.errstate(divide="ignore", invalid="ignore"):
            shimmer[idx] = np.where(mean_a > 0, mean_da / mean_a, 0.0)
    return jitter, shimmer


@dataclass
class FrameTable:
    """Per-frame features of one session.

    ``features`` has shape ``(n, 16)`` in :data:`FEATURE_COLUMNS` order,
    ``times`` holds frame centres in seconds and ``speakers`` the speaker id
    of each frame (``""`` when the frame lies outside every utterance).
    """

    times: np.ndarray
    features: np.ndarray
    voiced: np.ndarray
    speakers: np.ndarray

    def __len__(self):
        return len(self.times)

    def select(self, mask) -> "FrameTable":
        return FrameTable(self.times[mask], self.features[mask], self.voiced[mask], self.speakers[mask])

    def save(self, path) -> None:
        """Tab-separated: time, speaker, voiced, then the 16 feature columns."""
        header = "\t".join(("time_s", "speaker_id", "voiced") + FEATURE_COLUMNS)
        with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
            fh.write(header + "\n")
            for t, spk, v, row in zip(self.times, self.speakers, self.voiced, self.features):
                vals = "\t".join("nan" if np.isnan(z) else repr(float(z)) for z in row)
                fh.write(f"{float(t)!r}\t{spk}\t{int(v)}\t{vals}\n")

    @classmethod
    def load(cls, path) -> "FrameTable":
        rows = Path(path).read_text(encoding="utf-8").splitlines()[1:]
        parts = [r.split("\t") for r in rows]
        times = np.array([float(p[0]) for p in parts])
        speakers = np.array([p[1] for p in parts], dtype=object)
        voiced = np.array([p[2] == "1" for p in parts], dtype=bool)
        feats = np.array([[float(z) for z in p[3:]] for p in parts]).reshape(len(parts), len(FEATURE_COLUMNS))
        return cls(times, feats, voiced, speakers)


def attribute_frames(times, utterances) -> np.ndarray:
    """Speaker id per frame centre; overlaps go to the earlier-starting utterance."""
    speakers = np.full(len(times), "", dtype=object)
    taken = np.zeros(len(times), dtype=bool)
    for utt in sorted(utterances, key=lambda u: (u.start_s, u.end_s)):
        lo = np.searchsorted(times, utt.start_s, side="left")
        hi = np.searchsorted(times, utt.end_s, side="left")
        free = ~taken[lo:hi]
        speakers[lo:hi][free] = utt.speaker_id
        taken[lo:hi] = True
    return speakers


def znorm_speaker(features, speakers) -> np.ndarray:
    """Z-normalize each column per speaker (population std, NaN ignored).

    A column with zero spread for a speaker becomes 0 on that speaker's
    frames; NaN entries stay NaN.
    """
    features = np.asarray(features, dtype=float)
    speakers = np.asarray(speakers, dtype=object)
    out = np.full_like(features, np.nan)
    for spk in sorted(set(speakers.tolist())):
        rows = speakers == spk
        block = features[rows]
        if block.ndim == 1:
            block = block[:, None]
        valid = ~np.isnan(block)
        n = valid.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            mu = np.where(n > 0, np.nansum(block, axis=0) / np.maximum(n, 1), 0.0)
            dev = np.where(valid, block - mu, 0.0)
            sd = np.sqrt((dev ** 2).sum(axis=0) / np.maximum(n, 1))
        z = np.where(sd > 1e-12 * np.maximum(1.0, np.abs(mu)), dev / np.where(sd > 0, sd, 1.0), 0.0)
        z[~valid] = np.nan
        out[rows] = z.reshape(out[rows].shape)
    return out


def extract_frames(audio, utterances, sr: int = SAMPLE_RATE) -> FrameTable:
    """Raw per-frame features with speaker attribution (not yet normalized)."""
    audio = np.asarray(audio, dtype=float)
    windowed = frame_signal(audio, sr)
    raw = frame_signal(audio, sr, preemphasis=None, window=None)
    count = windowed.shape[0]
    mfcc = compute_mfcc(windowed)
    log_pitch, voiced = track_pitch(raw, sr)
    jit, shim = jitter_shimmer(audio, log_pitch, voiced, sr)
    times = np.arange(count) * HOP_S + FRAME_LEN_S / 2
    feats = np.column_stack([mfcc, log_pitch, jit, shim]) if count else np.zeros((0, len(FEATURE_COLUMNS)))
    return FrameTable(times, feats, voiced, attribute_frames(times, utterances))


def session_frames(audio, session: Session, sr: int = SAMPLE_RATE) -> FrameTable:
    """Speech frames of a session, z-normalized per speaker."""
    table = extract_frames(audio, session.utterances, sr)
    table = table.select(table.speakers != "")
    table.features = znorm_speaker(table.features, table.speakers)
    return table


def descriptive_stats(values) -> np.ndarray:
    """max, min, mean, median, population std, skewness g1, excess kurtosis g2.

    Higher moments are 0 when the variance is 0; an empty input gives zeros.
    """
    x = np.asarray(values, dtype=float).ravel()
    if x.size == 0:
        return np.zeros(7)
    mu = x.mean()
    d = x - mu
    m2 = np.mean(d ** 2)
    if m2 <= 1e-24 * max(1.0, mu * mu):
        skew = kurt = 0.0
        m2 = 0.0
    else:
        skew = np.mean(d ** 3) / m2 ** 1.5
        kurt = np.mean(d ** 4) / m2 ** 2 - 3.0
    return np.array([x.max(), x.min(), mu, np.median(x), np.sqrt(m2), skew, kurt])


@dataclass(frozen=True)
class AcousticBlock:
    role: str
    cepstrum: np.ndarray
    prosody: np.ndarray

    @classmethod
    def zeros(cls, role):
        return cls(role, np.zeros(CEPSTRUM_DIM), np.zeros(PROSODY_DIM))


def _block_from_frames(role, feats, voiced) -> AcousticBlock:
    if feats.shape[0] == 0:
        return AcousticBlock.zeros(role)
    cep = np.concatenate([descriptive_stats(feats[:, k]) for k in range(1, 13)])
    v = feats[voiced]
    prosody = np.concatenate(
        [
            descriptive_stats(v[:, PITCH_COL]),
            descriptive_stats(feats[:, 0]),
            descriptive_stats(v[:, JITTER_COL]),
            descriptive_stats(v[:, SHIMMER_COL]),
        ]
    )
    return AcousticBlock(role, cep, prosody)


def segment_stats(table: FrameTable, start_s: float, end_s: float, role_map: Mapping) -> dict[str, AcousticBlock]:
    """Per-role statistics over frames whose centre lies in ``[start_s, end_s)``.

    MFCC and energy statistics use every speech frame of the role; pitch,
    jitter and shimmer use voiced frames only. A role without frames is zeros.
    """
    lo = np.searchsorted(table.times, start_s, side="left")
    hi = np.searchsorted(table.times, end_s, side="left")
    spk = table.speakers[lo:hi]
    roles = np.array([getattr(role_map.get(s), "role", role_map.get(s)) for s in spk], dtype=object)
    out = {}
    for role in (PAT, HCP):
        mask = roles == role
        out[role] = _block_from_frames(role, table.features[lo:hi][mask], table.voiced[lo:hi][mask])
    return out


def acoustic_blocks(table: FrameTable, segments: Sequence, role_map: Mapping) -> list[dict[str, AcousticBlock]]:
    return [segment_stats(table, s.start_s, s.end_s, role_map) for s in segments]
