import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from empathy_pipeline import acoustic
from empathy_pipeline.corpus_io import load_annotations, load_sessions, read_wav
from empathy_pipeline.role_lm import HCP, PAT
from empathy_pipeline.synth import (
    EMOTION_WORDS,
    FF,
    RESPONSE_WORDS,
    SynthConfig,
    SynthError,
    generate_corpus,
    word_counts_by_role,
    write_corpus,
)


@pytest.fixture(scope="module")
def default_corpus():
    return generate_corpus(SynthConfig(seed=0, n_sessions=100))


def _tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_same_seed_byte_identical(tmp_path):
    cfg = SynthConfig(seed=4, n_sessions=3, mean_session_s=60, interactions_per_session=1, audio=True)
    write_corpus(generate_corpus(cfg), tmp_path / "a")
    write_corpus(generate_corpus(cfg), tmp_path / "b")
    a, b = _tree_bytes(tmp_path / "a"), _tree_bytes(tmp_path / "b")
    assert a == b and "audio/s0000.wav" in a
    write_corpus(generate_corpus(SynthConfig(seed=5, n_sessions=3, mean_session_s=60)), tmp_path / "c")
    assert _tree_bytes(tmp_path / "c")["transcripts.jsonl"] != a["transcripts.jsonl"]


def test_sessions_independent_of_corpus_size():
    small = generate_corpus(SynthConfig(seed=2, n_sessions=3))
    large = generate_corpus(SynthConfig(seed=2, n_sessions=6))
    assert small.sessions == large.sessions[:3]


def test_default_prevalence(default_corpus):
    labels = [v for seq in default_corpus.segment_labels.values() for v in seq]
    assert abs(np.mean(labels) - 0.02) <= 0.01


def test_zero_interactions_all_negative():
    corpus = generate_corpus(SynthConfig(seed=1, n_sessions=10, interactions_per_session=0))
    assert not corpus.intervals
    assert not any(v for seq in corpus.segment_labels.values() for v in seq)


def test_word_ratio(default_corpus):
    counts = word_counts_by_role(default_corpus)
    total = sum(counts.values())
    assert total >= 50_000
    for role, target in zip((PAT, HCP, FF), (0.41, 0.54, 0.05)):
        assert abs(counts[role] / total - target) <= 0.03


def test_mean_speakers(default_corpus):
    assert np.mean([len(r) for r in default_corpus.roles.values()]) == pytest.approx(3.66, abs=0.25)


@settings(max_examples=20)
@given(st.integers(0, 10_000), st.floats(0.0, 3.0))
def test_intervals_inside_sessions(seed, rate):
    corpus = generate_corpus(SynthConfig(seed=seed, n_sessions=4, mean_session_s=400, interactions_per_session=rate))
    for iv in corpus.intervals:
        assert 0 <= iv.start_s < iv.end_s <= corpus.durations[iv.session_id]
        assert 3.0 <= iv.end_s - iv.start_s <= 93.0 + 1e-9
    for s in corpus.sessions:
        assert all(u.end_s <= corpus.durations[s.session_id] for u in s.utterances)


def test_planted_words_only_inside_intervals(default_corpus):
    planted = set(EMOTION_WORDS) | set(RESPONSE_WORDS)
    spans = {}
    for iv in default_corpus.intervals:
        spans.setdefault(iv.session_id, []).append((iv.start_s, iv.end_s))
    n_inside = 0
    for s in default_corpus.sessions:
        for u in s.utterances:
            if planted & set(u.text):
                assert any(a <= u.start_s and u.end_s <= b for a, b in spans.get(s.session_id, []))
                n_inside += 1
    assert n_inside > 0
    lexer = default_corpus.liwc
    assert lexer.dimension == 66 and default_corpus.empath.dimension == 194


def test_oracle_roles_and_distinct_f0(default_corpus):
    for sid, roles in default_corpus.roles.items():
        assert sum(r == PAT for r in roles.values()) == 1
        assert sum(r == HCP for r in roles.values()) >= 1
        freqs = sorted(default_corpus.f0[sid].values())
        assert set(default_corpus.f0[sid]) == set(roles)
        assert min(np.diff(freqs), default=np.inf) >= 8.0


def test_infeasible_configs_rejected():
    with pytest.raises(SynthError, match="do not fit"):
        generate_corpus(SynthConfig(n_sessions=1, mean_session_s=20, interactions_per_session=50,
                                    interaction_range_s=(10, 20), interaction_mean_s=15))
    with pytest.raises(SynthError, match="sum"):
        SynthConfig(role_word_ratio=(0.5, 0.5, 0.5))
    with pytest.raises(SynthError, match="range"):
        SynthConfig(interaction_range_s=(10, 5))
    with pytest.raises(SynthError, match="unknown"):
        SynthConfig.from_dict({"nonsense": 1})


def test_written_files_load_back(tmp_path):
    corpus = generate_corpus(SynthConfig(seed=3, n_sessions=4, mean_session_s=60, interactions_per_session=1))
    paths = write_corpus(corpus, tmp_path)
    assert load_sessions(paths["transcripts"]) == corpus.sessions
    assert load_annotations(paths["annotations"]) == corpus.intervals
    assert "audio_dir" not in paths


def test_rendered_pitch_follows_speaker_f0(tmp_path):
    cfg = SynthConfig(seed=6, n_sessions=1, mean_session_s=60, interactions_per_session=0, audio=True)
    corpus = generate_corpus(cfg)
    paths = write_corpus(corpus, tmp_path)
    session = corpus.sessions[0]
    audio = read_wav(paths["audio_dir"] / f"{session.session_id}.wav")
    assert len(audio) == int(np.ceil(corpus.durations[session.session_id] * 16000))
    table = acoustic.extract_frames(audio, session.utterances)
    for spk, f0 in corpus.f0[session.session_id].items():
        mask = (table.speakers == spk) & table.voiced
        if mask.sum() < 50:
            continue
        est = np.exp(np.median(table.features[mask, acoustic.PITCH_COL]))
        assert abs(est - f0) / f0 < 0.05
