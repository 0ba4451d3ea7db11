"""Stage functions shared by the command line and library users.

Every stage takes plain inputs and returns plain outputs; the
``save_*``/``load_*`` helpers fix the on-disk artifact formats so reruns
with the same inputs write byte-identical files.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import math
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import acoustic
from .classifier import BLOCK_ORDER, FeatureCombo
from .corpus_io import EmpathyInterval, Session, read_wav
from .evaluation import RankedPredictions
from .lexical import HashingEmbedder, lexical_block
from .role_lm import HCP, PAT, RoleAssignment, RoleLMs, annotate_roles, build_role_lms
from .segmentation import Segment, generate_segments, label_segments

logger = logging.getLogger(__name__)

ROLES = (PAT, HCP)


def sub_seed(seed: int, name: str) -> int:
    """Stable 32-bit seed for a named stage derived from the run seed."""
    digest = hashlib.sha256(f"{int(seed)}:{name}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


# ---------------------------------------------------------------------------
# roles


def in_domain_corpora(sessions: Sequence[Session], known_roles: Mapping[str, Mapping[str, str]]):
    """Split utterances of sessions with known roles into PAT and HCP corpora."""
    pat, hcp = [], []
    for s in sessions:
        roles = known_roles.get(s.session_id)
        if roles is None:
            continue
        for u in s.utterances:
            if u.text:
                (hcp if roles[u.speaker_id] == HCP else pat).append(u.text)
    return pat, hcp


def train_role_models(bg_pat, bg_hcp, sessions, known_roles, lambda1=0.5, lambda2=0.01, order=3) -> RoleLMs:
    in_pat, in_hcp = in_domain_corpora(sessions, known_roles)
    return build_role_lms(bg_pat, bg_hcp, in_pat, in_hcp, lambda1, lambda2, order)


def speaker_corpora(session: Session) -> dict[str, list[tuple[str, ...]]]:
    out: dict[str, list] = {spk: [] for spk in session.speakers}
    for u in session.utterances:
        out[u.speaker_id].append(u.text)
    return out


def _annotate_one(session, lms, min_tokens):
    return session.session_id, annotate_roles(speaker_corpora(session), lms, min_tokens)


def annotate_sessions(sessions, lms: RoleLMs, min_tokens: int = 10, n_jobs: int = 1):
    """``{session_id: {speaker_id: RoleAssignment}}`` for every session."""
    results = _map(_annotate_one, [(s, lms, min_tokens) for s in sessions], n_jobs)
    return {sid: {a.speaker_id: a for a in assigns} for sid, assigns in results}


def save_roles(roles, path) -> None:
    doc = {
        sid: {
            spk: {
                "role": a.role,
                "ppl_pat": None if math.isnan(a.ppl_pat) else a.ppl_pat,
                "ppl_hcp": None if math.isnan(a.ppl_hcp) else a.ppl_hcp,
                "flagged": a.flagged,
            }
            for spk, a in spk_map.items()
        }
        for sid, spk_map in roles.items()
    }
    _write_json(doc, path)


def load_roles(path) -> dict[str, dict[str, RoleAssignment]]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    nan = float("nan")
    return {
        sid: {
            spk: RoleAssignment(
                spk,
                rec["role"],
                nan if rec["ppl_pat"] is None else rec["ppl_pat"],
                nan if rec["ppl_hcp"] is None else rec["ppl_hcp"],
                rec["flagged"],
            )
            for spk, rec in spk_map.items()
        }
        for sid, spk_map in doc.items()
    }


# ---------------------------------------------------------------------------
# segments


def segment_sessions(sessions, intervals: Sequence[EmpathyInterval], target_s=25.0, min_overlap_s=1.0):
    segs = [seg for s in sessions for seg in generate_segments(s, target_s)]
    return label_segments(segs, intervals, min_overlap_s)


# ---------------------------------------------------------------------------
# features


@dataclass
class FeatureTable:
    """Per-segment feature blocks for both roles.

    ``blocks[(role, name)]`` is an ``(n_segments, dim)`` array.
    """

    session_ids: np.ndarray
    indices: np.ndarray
    labels: np.ndarray
    durations: np.ndarray
    parents: list[tuple[int, ...]]
    blocks: dict[tuple[str, str], np.ndarray]

    def __len__(self):
        return len(self.session_ids)

    def matrix(self, combo, rows=None) -> np.ndarray:
        """Rows of ``[PAT blocks | HCP blocks]`` for ``combo``."""
        combo = FeatureCombo.parse(combo)
        parts = [self.blocks[(role, name)] for role in ROLES for name in combo.blocks]
        X = np.concatenate(parts, axis=1)
        return X if rows is None else X[rows]

    def rows_for(self, session_ids) -> np.ndarray:
        wanted = set(session_ids)
        return np.array([s in wanted for s in self.session_ids.tolist()], dtype=bool)

    def save(self, path) -> None:
        arrays = {
            "session_id": self.session_ids.astype(str),
            "index": self.indices.astype(np.int64),
            "label": self.labels.astype(np.int8),
            "duration_s": self.durations.astype(np.float64),
            "parents": np.array([json.dumps(list(p)) for p in self.parents], dtype=str),
        }
        for (role, name), arr in sorted(self.blocks.items()):
            arrays[f"{role}.{name}"] = np.ascontiguousarray(arr, dtype=np.float64)
        write_npz(path, arrays)

    @classmethod
    def load(cls, path) -> "FeatureTable":
        with np.load(path, allow_pickle=False) as z:
            blocks = {}
            for key in z.files:
                if "." in key:
                    role, name = key.split(".", 1)
                    blocks[(role, name)] = z[key]
            return cls(
                z["session_id"].astype(object),
                z["index"],
                z["label"].astype(bool),
                z["duration_s"],
                [tuple(json.loads(p)) for p in z["parents"].tolist()],
                blocks,
            )


def write_npz(path, arrays: Mapping[str, np.ndarray]) -> None:
    """``.npz`` writer with fixed entry timestamps, so output is reproducible."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arr), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, buf.getvalue())


def _session_features(session, segments, role_map, liwc, empath, provider, audio_loader):
    lex = [lexical_block(seg, role_map, liwc, empath, provider) for seg in segments]
    audio = audio_loader(session) if audio_loader is not None else None
    if audio is None:
        ac = [{r: acoustic.AcousticBlock.zeros(r) for r in ROLES} for _ in segments]
    else:
        table = acoustic.session_frames(audio, session)
        ac = acoustic.acoustic_blocks(table, segments, role_map)
    return lex, ac


def featurize(
    sessions: Sequence[Session],
    segments: Sequence[Segment],
    roles: Mapping[str, Mapping[str, RoleAssignment]],
    liwc,
    empath,
    provider=None,
    audio_loader: Callable | None = None,
    n_jobs: int = 1,
) -> FeatureTable:
    """Lexical and acoustic blocks for every segment, in segment order.

    ``audio_loader(session)`` returns samples or ``None``; without audio
    the acoustic blocks are zeros.
    """
    provider = provider or HashingEmbedder()
    by_session: dict[str, list[Segment]] = {}
    for seg in segments:
        by_session.setdefault(seg.session_id, []).append(seg)
    order = [s for s in sessions if s.session_id in by_session]
    jobs = [(s, by_session[s.session_id], roles[s.session_id], liwc, empath, provider, audio_loader) for s in order]
    results = _map(_session_features, jobs, n_jobs)
    dims = {"embed": provider.dim, "liwc": liwc.dimension, "empath": empath.dimension,
            "cepstrum": acoustic.CEPSTRUM_DIM, "prosody": acoustic.PROSODY_DIM}
    rows: dict[tuple[str, str], list] = {(r, b): [] for r in ROLES for b in BLOCK_ORDER}
    ordered_segments = []
    for s, (lex, ac) in zip(order, results):
        for seg, lb, abk in zip(by_session[s.session_id], lex, ac):
            ordered_segments.append(seg)
            for r in ROLES:
                rows[(r, "embed")].append(lb[r].embed)
                rows[(r, "liwc")].append(lb[r].liwc)
                rows[(r, "empath")].append(lb[r].empath)
                rows[(r, "cepstrum")].append(abk[r].cepstrum)
                rows[(r, "prosody")].append(abk[r].prosody)
    n = len(ordered_segments)
    blocks = {k: (np.vstack(v) if v else np.zeros((0, dims[k[1]]))) for k, v in rows.items()}
    return FeatureTable(
        np.array([g.session_id for g in ordered_segments], dtype=object),
        np.array([g.index for g in ordered_segments], dtype=np.int64),
        np.array([g.label for g in ordered_segments], dtype=bool),
        np.array([g.duration_s for g in ordered_segments], dtype=float).reshape(n),
        [tuple(g.parents) for g in ordered_segments],
        blocks,
    )


def wav_loader(audio_dir) -> Callable:
    audio_dir = Path(audio_dir)

    def load(session: Session):
        path = session.audio_path or audio_dir / f"{session.session_id}.wav"
        return read_wav(path) if Path(path).is_file() else None

    return load


# ---------------------------------------------------------------------------
# predictions


def predictions_record(table: FeatureTable, rows, scores, total_audio_s: float) -> dict:
    idx = np.flatnonzero(rows)
    return {
        "total_audio_s": float(total_audio_s),
        "segments": [
            {
                "session_id": str(table.session_ids[i]),
                "index": int(table.indices[i]),
                "score": float(sc),
                "label": int(table.labels[i]),
                "duration_s": float(table.durations[i]),
                "parents": list(table.parents[i]),
            }
            for i, sc in zip(idx.tolist(), np.asarray(scores).tolist())
        ],
    }


def ranked_from_record(doc) -> RankedPredictions:
    segs = doc["segments"]
    return RankedPredictions(
        scores=[s["score"] for s in segs],
        labels=[bool(s["label"]) for s in segs],
        durations=[s["duration_s"] for s in segs],
        parents=[tuple(s["parents"]) for s in segs],
        session_ids=[s["session_id"] for s in segs],
        total_audio_s=doc.get("total_audio_s"),
    )


# ---------------------------------------------------------------------------
# helpers


def _map(fn, jobs, n_jobs):
    if n_jobs == 1 or len(jobs) <= 1:
        return [fn(*j) for j in jobs]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=n_jobs)(delayed(fn)(*j) for j in jobs)


def _write_json(obj, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")
