"""Per-role lexical feature blocks: embeddings and category-lexicon counts."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus_io import CategoryLexicon
from .role_lm import HCP, PAT, RoleAssignment
from .segmentation import Segment

EMBED_DIM = 100
LIWC_DIM = 66
EMPATH_DIM = 194
ROLES = (PAT, HCP)


@dataclass(frozen=True)
class RoleDocument:
    role: str
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class LexFeatureBlock:
    role: str
    embed: np.ndarray
    liwc: np.ndarray
    empath: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate([self.embed, self.liwc, self.empath])


def count_categories(doc, lexicon: CategoryLexicon) -> np.ndarray:
    """Category proportions, preceded by any descriptor slots of the lexicon.

    ``word_count`` is the raw token count and ``dict_capture`` the fraction of
    tokens matched by at least one category. An empty document gives zeros.
    """
    tokens = doc.tokens if isinstance(doc, RoleDocument) else tuple(doc)
    out = np.zeros(lexicon.dimension)
    n = len(tokens)
    if n == 0:
        return out
    hits = np.array([lexicon.hit_vector(t) for t in tokens]).reshape(n, len(lexicon.categories))
    offset = len(lexicon.descriptors)
    for k, name in enumerate(lexicon.descriptors):
        out[k] = n if name == "word_count" else hits.any(axis=1).mean()
    out[offset:] = hits.mean(axis=0)
    return out


class HashingEmbedder:
    """Seeded bag-of-words embedding: signed feature hashing then a fixed
    Gaussian projection to ``dim`` values, L2-normalized."""

    def __init__(self, seed: int = 0, dim: int = EMBED_DIM, n_buckets: int = 4096):
        self.seed = int(seed)
        self.dim = dim
        self.n_buckets = n_buckets
        self._key = self.seed.to_bytes(8, "little", signed=True)

    @property
    def projection(self) -> np.ndarray:
        return _projection(self.seed, self.n_buckets, self.dim)

    def _bucket(self, token: str) -> tuple[int, float]:
        h = int.from_bytes(hashlib.blake2b(token.encode(), key=self._key, digest_size=8).digest(), "little")
        return h % self.n_buckets, 1.0 if (h >> 63) & 1 else -1.0

    def embed(self, doc: RoleDocument, key=None) -> np.ndarray:
        if not doc.tokens:
            return np.zeros(self.dim)
        counts = np.zeros(self.n_buckets)
        for tok in doc.tokens:
            b, sign = self._bucket(tok)
            counts[b] += sign
        v = counts @ self.projection
        norm = np.linalg.norm(v)
        return v / norm if norm > 0 else np.zeros(self.dim)


@lru_cache(maxsize=8)
def _projection(seed, n_buckets, dim):
    m = np.random.default_rng(seed).standard_normal((n_buckets, dim))
    m.setflags(write=False)
    return m


class PrecomputedEmbeddings:
    """Embeddings read from a JSONL file of
    ``{"session_id", "segment_index", "role", "vector"}`` records."""

    def __init__(self, table: Mapping[tuple, np.ndarray], dim: int = EMBED_DIM):
        self.table = dict(table)
        self.dim = dim

    @classmethod
    def load(cls, path, dim: int = EMBED_DIM) -> "PrecomputedEmbeddings":
        table = {}
        with Path(path).open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                rec = json.loads(line)
                vec = np.asarray(rec["vector"], dtype=float)
                if vec.shape != (dim,):
                    raise ValueError(f"{path}:{lineno}: expected {dim} values, got {vec.size}")
                table[(str(rec["session_id"]), int(rec["segment_index"]), str(rec["role"]))] = vec
        return cls(table, dim)

    def embed(self, doc: RoleDocument, key=None) -> np.ndarray:
        if not doc.tokens:
            return np.zeros(self.dim)
        try:
            return self.table[key]
        except KeyError:
            raise KeyError(f"no precomputed embedding for (session, segment, role) = {key}") from None


def embed_document(doc: RoleDocument, provider, key=None) -> np.ndarray:
    return provider.embed(doc, key)


def role_documents(segment: Segment, role_map) -> dict[str, RoleDocument]:
    """Concatenate each role's utterance tokens within the segment."""
    roles = _role_lookup(role_map)
    tokens = {r: [] for r in ROLES}
    for utt in segment.utterances:
        tokens[roles[utt.speaker_id]].extend(utt.text)
    return {r: RoleDocument(r, tuple(tokens[r])) for r in ROLES}


def _role_lookup(role_map) -> dict[str, str]:
    if isinstance(role_map, Mapping):
        return {k: (v.role if isinstance(v, RoleAssignment) else v) for k, v in role_map.items()}
    return {a.speaker_id: a.role for a in role_map}


def lexical_block(
    segment: Segment,
    role_map,
    liwc: CategoryLexicon,
    empath: CategoryLexicon,
    provider,
) -> dict[str, LexFeatureBlock]:
    """PAT and HCP blocks ``[embed | liwc | empath]``; an absent role is all zeros."""
    docs = role_documents(segment, role_map)
    out = {}
    for role in ROLES:
        doc = docs[role]
        if doc.tokens:
            block = LexFeatureBlock(
                role,
                embed_document(doc, provider, (segment.session_id, segment.index, role)),
                count_categories(doc, liwc),
                count_categories(doc, empath),
            )
        else:
            block = LexFeatureBlock(
                role, np.zeros(provider.dim), np.zeros(liwc.dimension), np.zeros(empath.dimension)
            )
        out[role] = block
    return out


def lexical_blocks_for(segments: Sequence[Segment], role_maps, liwc, empath, provider):
    """``lexical_block`` over many segments; ``role_maps`` is keyed by session."""
    return [lexical_block(s, role_maps[s.session_id], liwc, empath, provider) for s in segments]
