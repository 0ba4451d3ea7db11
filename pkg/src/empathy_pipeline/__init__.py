"""Empathic-interaction detection for multi-speaker clinical recordings.

The pipeline ingests diarized, time-stamped transcripts plus session audio,
assigns patient/provider roles with interpolated trigram language models,
groups utterances into ~25 s segments, extracts lexical and acoustic feature
blocks per role, ranks segments with a calibrated RBF-kernel SVM and scores
the ranking with average precision and detection-rate curves.
"""

from .corpus_io import (
    CategoryLexicon,
    EmpathyInterval,
    Session,
    Utterance,
    load_annotations,
    load_lexicon,
    load_sessions,
    split_sessions,
    tokenize,
)
from .segmentation import Segment, generate_segments, label_segments

__version__ = "0.1.0"

__all__ = [
    "CategoryLexicon",
    "EmpathyInterval",
    "Segment",
    "Session",
    "Utterance",
    "generate_segments",
    "label_segments",
    "load_annotations",
    "load_lexicon",
    "load_sessions",
    "split_sessions",
    "tokenize",
]
