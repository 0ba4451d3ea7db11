"""Trigram role language models and perplexity-based role assignment.

Each :class:`NGramLM` is an interpolated Witten-Bell model over its own
training vocabulary plus an unknown-word symbol. Mixtures are evaluated over
a *universe* vocabulary (the union of every component's words): a component
that never saw a universe word gives it an even share of its unknown-word
mass, so every model in a mixture tree is a proper distribution over the
same event space ``universe | {UNK}``.
"""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

BOS = "<s>"
UNK = "<unk>"
FORMAT_VERSION = 1

PAT = "PAT"
HCP = "HCP"
MIN_TOKENS = 10


def _as_sentences(corpus) -> list[tuple[str, ...]]:
    """Accept a flat token sequence, a list of sentences, or whitespace strings."""
    if isinstance(corpus, str):
        return [tuple(corpus.split())]
    items = list(corpus)
    if not items:
        return []
    if all(isinstance(x, str) for x in items):
        if any(" " in x for x in items):
            return [tuple(x.split()) for x in items]
        return [tuple(items)]
    return [tuple(s.split()) if isinstance(s, str) else tuple(s) for s in items]


class LanguageModel:
    """Interface shared by n-gram models and their mixtures."""

    order: int
    vocab: frozenset

    def prob(self, word: str, history: Sequence[str] = (), universe=None) -> float:
        raise NotImplementedError

    def event_space(self, universe=None) -> list[str]:
        words = self.vocab if universe is None else universe
        return sorted(words) + [UNK]


class NGramLM(LanguageModel):
    """Interpolated Witten-Bell n-gram model.

    ``counts[k]`` maps a length-``k`` context tuple to a ``Counter`` of next
    words. The lowest level interpolates with a uniform distribution over
    ``vocab | {UNK}``, so every in-vocabulary word and the unknown symbol
    keep non-zero mass.
    """

    def __init__(self, order: int, counts: list[dict], vocab: Iterable[str]):
        if order < 1:
            raise ValueError("order must be >= 1")
        self.order = order
        self.counts = counts
        self.vocab = frozenset(vocab)
        self._totals = [{h: sum(c.values()) for h, c in level.items()} for level in counts]
        self._types = [{h: len(c) for h, c in level.items()} for level in counts]
        self._uniform = 1.0 / (len(self.vocab) + 1)
        self._foreign_cache: dict = {}

    def _map(self, token: str) -> str:
        return token if token in self.vocab or token == BOS else UNK

    def _context(self, history: Sequence[str]) -> tuple[str, ...]:
        hist = [self._map(t) for t in history][-(self.order - 1):] if self.order > 1 else []
        pad = self.order - 1 - len(hist)
        return (BOS,) * pad + tuple(hist)

    def _wb(self, word: str, context: tuple[str, ...]) -> float:
        p = self._uniform
        for k in range(len(context) + 1):
            h = context[len(context) - k:]
            total = self._totals[k].get(h, 0)
            if total:
                types = self._types[k][h]
                p = (self.counts[k][h].get(word, 0) + types * p) / (total + types)
        return p

    def _foreign(self, universe) -> int:
        n = self._foreign_cache.get(universe)
        if n is None:
            n = self._foreign_cache[universe] = len(universe - self.vocab)
        return n

    def prob(self, word, history=(), universe=None) -> float:
        context = self._context(history)
        if word in self.vocab:
            return self._wb(word, context)
        # unknown mass is shared by UNK and every universe word this model lacks
        foreign = 0 if universe is None else self._foreign(universe)
        return self._wb(UNK, context) / (foreign + 1)

    def to_dict(self) -> dict:
        return {
            "type": "ngram",
            "order": self.order,
            "vocab": sorted(self.vocab),
            "counts": [
                {" ".join(h): dict(sorted(c.items())) for h, c in sorted(level.items())}
                for level in self.counts
            ],
        }

    @classmethod
    def from_dict(cls, doc) -> "NGramLM":
        counts = [
            {tuple(h.split()) if h else (): Counter(c) for h, c in level.items()}
            for level in doc["counts"]
        ]
        return cls(doc["order"], counts, doc["vocab"])


class InterpolatedLM(LanguageModel):
    """Linear mixture ``sum_i w_i * P_i`` over the union vocabulary."""

    def __init__(self, components: Sequence[LanguageModel], weights: Sequence[float]):
        if len(components) != len(weights) or not components:
            raise ValueError("need one weight per component")
        if any(not 0 < w <= 1 for w in weights) or abs(sum(weights) - 1) > 1e-12:
            raise ValueError("weights must lie in (0, 1] and sum to 1")
        self.components = list(components)
        self.weights = [float(w) for w in weights]
        self.order = max(c.order for c in components)
        self.vocab = frozenset().union(*(c.vocab for c in components))

    def prob(self, word, history=(), universe=None) -> float:
        universe = self.vocab if universe is None else frozenset(universe)
        return sum(w * c.prob(word, history, universe) for c, w in zip(self.components, self.weights))

    def to_dict(self) -> dict:
        return {
            "type": "mixture",
            "weights": self.weights,
            "components": [c.to_dict() for c in self.components],
        }


def lm_from_dict(doc) -> LanguageModel:
    if doc["type"] == "ngram":
        return NGramLM.from_dict(doc)
    if doc["type"] == "mixture":
        return InterpolatedLM([lm_from_dict(c) for c in doc["components"]], doc["weights"])
    raise ValueError(f"unknown model type {doc['type']!r}")


def train_ngram(corpus, order: int = 3, vocab: Iterable[str] | None = None) -> NGramLM:
    """Count n-grams of ``corpus`` (sentences of tokens) up to ``order``.

    Sentences are left-padded with ``order - 1`` boundary symbols; end of
    sentence is not modelled. Tokens outside an explicit ``vocab`` are
    counted as the unknown symbol.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    sentences = [s for s in _as_sentences(corpus) if s]
    if not sentences:
        raise ValueError("empty training corpus")
    vocab = frozenset(vocab) if vocab is not None else frozenset(t for s in sentences for t in s)
    vocab = vocab - {BOS, UNK}
    counts = [defaultdict(Counter) for _ in range(order)]
    for sent in sentences:
        padded = (BOS,) * (order - 1) + tuple(t if t in vocab else UNK for t in sent)
        for i in range(order - 1, len(padded)):
            w = padded[i]
            for k in range(order):
                counts[k][padded[i - k:i]][w] += 1
    return NGramLM(order, [dict(level) for level in counts], vocab)


def interpolate(lm_a: LanguageModel, lm_b: LanguageModel, lam: float) -> InterpolatedLM:
    """``lam * lm_a + (1 - lam) * lm_b``; a zero-weight side is dropped."""
    if not 0 <= lam <= 1:
        raise ValueError(f"interpolation weight {lam} outside [0, 1]")
    if lam == 1:
        return InterpolatedLM([lm_a], [1.0])
    if lam == 0:
        return InterpolatedLM([lm_b], [1.0])
    return InterpolatedLM([lm_a, lm_b], [lam, 1 - lam])


def log_likelihood(lm: LanguageModel, tokens, universe=None) -> tuple[float, int]:
    """Sum of natural-log token probabilities and the number of scored tokens."""
    universe = frozenset(universe) if universe is not None else None
    total, n = 0.0, 0
    span = max(lm.order - 1, 0)
    for sent in _as_sentences(tokens):
        for i, w in enumerate(sent):
            history = sent[max(0, i - span):i] if span else ()
            total += math.log(lm.prob(w, history, universe))
            n += 1
    return total, n


def perplexity(lm: LanguageModel, tokens, universe=None) -> float:
    """``exp(-mean log P(w_i | h_i))``; each sentence restarts its history."""
    total, n = log_likelihood(lm, tokens, universe)
    if n == 0:
        raise ValueError("cannot compute perplexity of an empty token sequence")
    return math.exp(-total / n)


@dataclass(frozen=True)
class RoleLMs:
    pat: LanguageModel
    hcp: LanguageModel

    @property
    def universe(self) -> frozenset:
        return self.pat.vocab | self.hcp.vocab

    def to_dict(self) -> dict:
        return {"version": FORMAT_VERSION, "pat": self.pat.to_dict(), "hcp": self.hcp.to_dict()}

    @classmethod
    def from_dict(cls, doc) -> "RoleLMs":
        if doc.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported role model version {doc.get('version')!r}")
        return cls(lm_from_dict(doc["pat"]), lm_from_dict(doc["hcp"]))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "RoleLMs":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def build_role_lms(bg_pat, bg_hcp, in_pat, in_hcp, lambda1=0.5, lambda2=0.01, order=3) -> RoleLMs:
    """Background/in-domain mixtures per role, then a light cross-role mix.

    ``L_P = lambda1 * bg_pat + (1 - lambda1) * in_pat`` (``L_H`` likewise);
    the final patient model is ``(1 - lambda2) * L_P + lambda2 * L_H`` and the
    provider model ``(1 - lambda2) * L_H + lambda2 * L_P``, so both share one
    vocabulary while staying dominated by their own role. The in-domain
    patient corpus is expected to already include friend/family speech.
    """
    corpora = {"bg_pat": bg_pat, "bg_hcp": bg_hcp, "in_pat": in_pat, "in_hcp": in_hcp}
    models = {}
    for name, corpus in corpora.items():
        try:
            models[name] = train_ngram(corpus, order)
        except ValueError:
            raise ValueError(f"empty corpus: {name}") from None
    l_p = interpolate(models["bg_pat"], models["in_pat"], lambda1)
    l_h = interpolate(models["bg_hcp"], models["in_hcp"], lambda1)
    return RoleLMs(pat=interpolate(l_p, l_h, 1 - lambda2), hcp=interpolate(l_h, l_p, 1 - lambda2))


@dataclass(frozen=True)
class RoleAssignment:
    speaker_id: str
    role: str
    ppl_pat: float
    ppl_hcp: float
    flagged: bool = False


def assign_role(ppl_pat: float, ppl_hcp: float) -> str:
    return PAT if ppl_pat <= ppl_hcp else HCP


def annotate_roles(speaker_corpora: Mapping[str, object], lms: RoleLMs, min_tokens: int = MIN_TOKENS):
    """Pick the role whose model gives each speaker's text the lower perplexity.

    Speakers with fewer than ``min_tokens`` tokens default to PAT and are
    flagged; their perplexities are reported as ``nan`` when no tokens exist.
    """
    universe = lms.universe
    out = []
    for spk in sorted(speaker_corpora):
        sentences = _as_sentences(speaker_corpora[spk])
        n = sum(len(s) for s in sentences)
        if n == 0:
            out.append(RoleAssignment(spk, PAT, math.nan, math.nan, True))
            continue
        ppl_p = perplexity(lms.pat, sentences, universe)
        ppl_h = perplexity(lms.hcp, sentences, universe)
        if n < min_tokens:
            out.append(RoleAssignment(spk, PAT, ppl_p, ppl_h, True))
        else:
            out.append(RoleAssignment(spk, assign_role(ppl_p, ppl_h), ppl_p, ppl_h, False))
    return out
