import random

from hypothesis import given
from hypothesis import strategies as st

from empathy_pipeline.corpus_io import EmpathyInterval, Session, Utterance
from empathy_pipeline.segmentation import (
    Segment,
    children,
    generate_segments,
    label_segments,
    load_segments,
    save_segments,
)


def _session(spans, sid="s"):
    return Session(sid, tuple(Utterance(sid, "a", float(a), float(b), ("x",)) for a, b in spans))


def _spans(seg):
    return (seg.start_s, seg.end_s)


def test_tie_stops_growth():
    segs = generate_segments(_session([(0, 10), (10, 20), (20, 30)]))
    assert [_spans(s) for s in segs] == [(0, 20), (20, 30)]


def test_long_single_utterance_kept_whole():
    segs = generate_segments(_session([(0, 40)]))
    assert [_spans(s) for s in segs] == [(0, 40)]


def test_empty_session():
    assert generate_segments(Session("s", ())) == []


def _iv(a, b, sid="s"):
    return EmpathyInterval(sid, float(a), float(b))


def _seg(a, b, index=0, sid="s"):
    return Segment(sid, index, (Utterance(sid, "a", float(a), float(b), ("x",)),))


def test_exact_one_second_overlap_is_negative():
    (seg,) = label_segments([_seg(0, 25)], [_iv(24, 30)])
    assert not seg.label and seg.parents == ()


def test_contained_interval_positive():
    (seg,) = label_segments([_seg(0, 25)], [_iv(10, 12)])
    assert seg.label and seg.parents == (0,)


def test_interval_with_three_children():
    segs = label_segments([_seg(0, 25, 0), _seg(25, 50, 1), _seg(50, 75, 2)], [_iv(20, 55)])
    assert [s.label for s in segs] == [True, True, True]
    assert [s.index for s in children(segs)[0]] == [0, 1, 2]


def test_other_session_intervals_ignored():
    (seg,) = label_segments([_seg(0, 25)], [_iv(0, 25, sid="other")])
    assert not seg.label


def _random_session(rng, sid):
    t, spans = 0.0, []
    for _ in range(rng.randint(0, 40)):
        a = round(t + rng.uniform(0, 3), 2)
        b = round(a + rng.uniform(0.1, 15), 2)
        spans.append((a, b))
        t = b
    return _session(spans, sid)


def _brute_force_labels(segments, intervals, min_overlap):
    out = []
    for seg in segments:
        parents = []
        for k, iv in enumerate(intervals):
            if iv.session_id != seg.session_id:
                continue
            lo, hi = max(seg.start_s, iv.start_s), min(seg.end_s, iv.end_s)
            if hi - lo > min_overlap:
                parents.append(k)
        out.append(tuple(parents))
    return out


def test_labels_match_brute_force_on_random_sessions():
    rng = random.Random(0)
    for trial in range(1000):
        session = _random_session(rng, f"s{trial}")
        end = max(session.end_s, 1.0)
        intervals = []
        for _ in range(rng.randint(0, 4)):
            a = rng.uniform(0, end)
            intervals.append(_iv(round(a, 2), round(a + rng.uniform(0.5, 40), 2), session.session_id))
        segs = label_segments(generate_segments(session), intervals)
        expect = _brute_force_labels(segs, intervals, 1.0)
        assert [s.parents for s in segs] == expect
        assert [s.label for s in segs] == [bool(p) for p in expect]


spans_strategy = st.lists(
    st.tuples(st.floats(0, 5, allow_nan=False), st.floats(0.05, 20, allow_nan=False)), max_size=30
)


def _from_steps(steps):
    t, spans = 0.0, []
    for gap, dur in steps:
        a = round(t + gap, 3)
        b = round(a + dur, 3)
        if b <= a:
            continue
        spans.append((a, b))
        t = b
    return spans


@given(spans_strategy, st.floats(1, 60))
def test_partition_and_local_greedy_optimality(steps, target):
    session = _session(_from_steps(steps))
    segs = generate_segments(session, target)
    flat = [u for s in segs for u in s.utterances]
    assert flat == list(session.utterances)
    utts = session.utterances
    pos = 0
    for seg in segs:
        n = len(seg.utterances)
        dur = seg.end_s - seg.start_s
        if n > 1:
            shorter = utts[pos + n - 2].end_s - seg.start_s
            assert abs(dur - target) < abs(shorter - target)
        if pos + n < len(utts):
            longer = utts[pos + n].end_s - seg.start_s
            assert not abs(longer - target) < abs(dur - target)
        pos += n


@given(spans_strategy, st.floats(0, 100), st.floats(1, 40), st.floats(0, 10), st.floats(0, 10))
def test_growing_an_interval_never_unlabels(steps, a, length, grow_left, grow_right):
    session = _session(_from_steps(steps))
    segs = generate_segments(session)
    before = label_segments(segs, [_iv(a, a + length)])
    after = label_segments(segs, [_iv(max(0.0, a - grow_left), a + length + grow_right)])
    for s0, s1 in zip(before, after):
        assert s1.label or not s0.label


def test_segment_file_round_trip(tmp_path):
    session = _session([(0, 10), (10.5, 20), (21, 30), (31, 60)])
    segs = label_segments(generate_segments(session), [_iv(15, 35)])
    path = tmp_path / "segments.jsonl"
    save_segments(segs, path)
    assert load_segments(path, [session]) == segs
