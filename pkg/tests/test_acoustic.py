import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from empathy_pipeline import acoustic as A
from empathy_pipeline.corpus_io import Session, Utterance
from empathy_pipeline.role_lm import HCP, PAT

SR = 16000


def _raw(x):
    return A.frame_signal(x, SR, preemphasis=None, window=None)


def test_frame_counts():
    assert A.frame_signal(np.zeros(16000)).shape == (98, 400)
    assert A.frame_signal(np.zeros(400)).shape == (1, 400)
    assert A.frame_signal(np.zeros(399)).shape == (0, 400)


def test_frame_count_formula_random_lengths():
    rng = np.random.default_rng(0)
    for n in rng.integers(0, 40000, size=1000):
        expect = 0 if n < 400 else (n - 400) // 160 + 1
        assert A.n_frames(int(n)) == expect
    for n in rng.integers(0, 5000, size=50):
        assert A.frame_signal(np.ones(int(n))).shape[0] == A.n_frames(int(n))


def test_rejects_other_rates():
    with pytest.raises(ValueError, match="16000"):
        A.frame_signal(np.zeros(1000), sr=8000)


def test_window_and_preemphasis():
    x = np.arange(800, dtype=float)
    frames = A.frame_signal(x)
    emph = np.concatenate([[0.0], x[1:] - 0.97 * x[:-1]])
    np.testing.assert_allclose(frames[1], emph[160:560] * np.hamming(400))


def test_dct_orthonormal():
    d = A.dct_matrix(23)
    np.testing.assert_allclose(d @ d.T, np.eye(23), atol=1e-9)
    # matches the textbook orthonormal DCT-II definition
    from scipy.fft import dct

    np.testing.assert_allclose(d, dct(np.eye(23), type=2, norm="ortho", axis=0), atol=1e-12)


def test_silence_mfcc():
    mfcc = A.compute_mfcc(A.frame_signal(np.zeros(4000)))
    assert mfcc.shape[1] == 13
    np.testing.assert_allclose(mfcc[:, 1:], 0, atol=1e-9)
    np.testing.assert_allclose(mfcc[:, 0], np.sqrt(23) * np.log(1e-10))


def test_tone_energy_lands_in_matching_filter():
    t = np.arange(SR) / SR
    frames = A.frame_signal(np.sin(2 * np.pi * 1000 * t))
    spec = np.abs(np.fft.rfft(frames, 512)) ** 2
    energies = spec @ A.mel_filterbank().T
    best = np.argmax(energies.mean(axis=0))
    fb = A.mel_filterbank()
    bin_1k = round(1000 * 512 / SR)
    assert fb[best, bin_1k] == fb[:, bin_1k].max() > 0


def test_filterbank_geometry():
    fb = A.mel_filterbank()
    assert fb.shape == (23, 257)
    assert (fb >= 0).all() and fb.max() <= 1
    peaks = np.argmax(fb, axis=1)
    assert (np.diff(peaks) > 0).all()


def _pitch_hz(x):
    log_pitch, voiced = A.track_pitch(_raw(x))
    return np.exp(np.median(log_pitch[voiced])), voiced


def test_sine_pitch():
    t = np.arange(SR) / SR
    f0, voiced = _pitch_hz(np.sin(2 * np.pi * 220 * t))
    assert abs(f0 - 220) / 220 < 0.05
    assert voiced.mean() > 0.9


@pytest.mark.parametrize("f", np.linspace(80, 350, 20))
def test_pitch_accuracy_sweep(f):
    t = np.arange(SR) / SR
    x = np.sin(2 * np.pi * f * t) + 0.4 * np.sin(4 * np.pi * f * t)
    f0, _ = _pitch_hz(x)
    assert abs(f0 - f) / f < 0.05


def test_silence_and_noise_unvoiced():
    _, voiced = A.track_pitch(_raw(np.zeros(SR)))
    assert not voiced.any()
    noise = np.random.default_rng(0).standard_normal(3 * SR)
    _, voiced = A.track_pitch(_raw(noise))
    assert voiced.mean() < 0.2


def _pulse_train(periods, amps, n):
    x = np.zeros(n)
    bump = np.hanning(11)
    pos, k = 50.0, 0
    while pos + 11 < n:
        i = int(pos)
        x[i : i + 11] += amps[k % len(amps)] * bump
        pos += periods[k % len(periods)]
        k += 1
    return x


def _median_js(x, log_pitch=None):
    if log_pitch is None:
        log_pitch, voiced = A.track_pitch(_raw(x))
    else:
        voiced = np.ones(A.n_frames(len(x)), dtype=bool)
        log_pitch = np.full(len(voiced), log_pitch)
    jit, shim = A.jitter_shimmer(x, log_pitch, voiced)
    inner = slice(len(voiced) // 4, 3 * len(voiced) // 4)
    return np.nanmedian(jit[inner]), np.nanmedian(shim[inner])


def test_periodic_pulse_train_zero_jitter_shimmer():
    jit, shim = _median_js(_pulse_train([100], [1.0], 3 * SR))
    assert jit < 1e-3 and shim < 1e-3


def test_alternating_periods_jitter():
    # periods 100/110 samples; the generator's mean pitch is 16000/105 Hz
    jit, _ = _median_js(_pulse_train([100, 110], [1.0], 3 * SR), np.log(SR / 105))
    assert abs(jit - 10 / 105) < 1e-3


def test_alternating_amplitudes_shimmer():
    _, shim = _median_js(_pulse_train([100], [1.0, 0.8], 3 * SR))
    assert abs(shim - 0.2 / 0.9) < 1e-3


def test_too_few_periods_gives_zero():
    x = _pulse_train([100], [1.0], 3 * SR)
    voiced = np.zeros(A.n_frames(len(x)), dtype=bool)
    voiced[100] = True
    log_pitch = np.where(voiced, np.log(160.0), np.nan)
    jit, shim = A.jitter_shimmer(x, log_pitch, voiced, window_s=0.012)
    assert jit[100] == 0 and shim[100] == 0
    assert np.isnan(jit[99])


def test_znorm_constant_and_moments():
    feats = np.column_stack([np.full(6, 3.0), np.arange(6.0)])
    z = A.znorm_speaker(feats, np.array(["a"] * 6, dtype=object))
    np.testing.assert_array_equal(z[:, 0], 0)
    rng = np.random.default_rng(1)
    feats = rng.normal(size=(300, 4)) * [1, 10, 0.1, 5] + [0, -3, 8, 100]
    speakers = np.array(rng.choice(["a", "b", "c"], size=300), dtype=object)
    z = A.znorm_speaker(feats, speakers)
    for spk in "abc":
        block = z[speakers == spk]
        assert np.abs(block.mean(axis=0)).max() < 1e-9
        assert np.abs(block.std(axis=0) - 1).max() < 1e-6


def test_znorm_speakers_independent():
    base = np.random.default_rng(2).normal(size=(50, 3))
    feats = np.vstack([base + 5, base - 5])
    speakers = np.array(["a"] * 50 + ["b"] * 50, dtype=object)
    z = A.znorm_speaker(feats, speakers)
    np.testing.assert_allclose(z[:50], z[50:], atol=1e-12)


def test_znorm_keeps_nan():
    feats = np.array([[1.0], [np.nan], [3.0]])
    z = A.znorm_speaker(feats, np.array(["a", "a", "a"], dtype=object))
    assert np.isnan(z[1, 0])
    np.testing.assert_allclose(z[[0, 2], 0], [-1, 1])


def test_descriptive_stats_by_hand():
    np.testing.assert_allclose(A.descriptive_stats([2.0] * 5), [2, 2, 2, 2, 0, 0, 0])
    np.testing.assert_allclose(
        A.descriptive_stats([1, 2, 3, 4]), [4, 1, 2.5, 2.5, np.sqrt(1.25), 0, 2.5625 / 1.5625 - 3], atol=1e-12
    )
    assert A.descriptive_stats([1, 2, 3, 4])[6] == pytest.approx(-1.36)


def test_descriptive_stats_against_scipy():
    from scipy import stats

    x = np.random.default_rng(3).gamma(2.0, size=200)
    s = A.descriptive_stats(x)
    np.testing.assert_allclose(s[5], stats.skew(x), rtol=1e-10)
    np.testing.assert_allclose(s[6], stats.kurtosis(x), rtol=1e-10)
    np.testing.assert_allclose(s[4], np.std(x), rtol=1e-12)


@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=40))
def test_stats_order_invariant(values):
    np.testing.assert_allclose(A.descriptive_stats(values[::-1]), A.descriptive_stats(values), rtol=1e-9, atol=1e-9)


def _tone_session(seconds=4.0):
    rng = np.random.default_rng(5)
    n = int(seconds * SR)
    t = np.arange(n) / SR
    audio = 0.01 * rng.standard_normal(n)
    utts = [("p", 0.1, 1.9, 140.0), ("h", 2.0, 3.9, 210.0)]
    for _, a, b, f in utts:
        sl = slice(int(a * SR), int(b * SR))
        audio[sl] += 0.3 * np.sin(2 * np.pi * f * t[sl]) + 0.1 * np.sin(4 * np.pi * f * t[sl])
    session = Session("s", tuple(Utterance("s", spk, a, b, ("x",)) for spk, a, b, _ in utts))
    return audio, session


def test_amplitude_scaling_invariance():
    audio, session = _tone_session()
    ref = A.session_frames(audio, session)
    for c in (0.25, 3.0):
        scaled = A.session_frames(audio * c, session)
        np.testing.assert_array_equal(scaled.voiced, ref.voiced)
        np.testing.assert_allclose(scaled.features, ref.features, atol=1e-6, equal_nan=True)


def test_session_frames_attribution_and_blocks():
    audio, session = _tone_session()
    table = A.session_frames(audio, session)
    assert set(table.speakers.tolist()) == {"p", "h"}
    raw = A.extract_frames(audio, session.utterances)
    for spk, f in (("p", 140.0), ("h", 210.0)):
        mask = (raw.speakers == spk) & raw.voiced
        assert abs(np.exp(np.median(raw.features[mask, A.PITCH_COL])) - f) / f < 0.05
    blocks = A.segment_stats(table, 0.0, 4.0, {"p": PAT, "h": HCP})
    assert blocks[PAT].cepstrum.shape == (84,) and blocks[PAT].prosody.shape == (28,)
    only_p = A.segment_stats(table, 0.0, 1.95, {"p": PAT, "h": HCP})
    assert not only_p[HCP].cepstrum.any() and not only_p[HCP].prosody.any()


def test_overlapping_utterances_go_to_earlier_start():
    times = np.array([0.5, 1.5, 2.5])
    utts = [Utterance("s", "b", 1.0, 3.0, ("x",)), Utterance("s", "a", 0.0, 2.0, ("x",))]
    assert A.attribute_frames(times, utts).tolist() == ["a", "a", "b"]


def test_frame_table_round_trip(tmp_path):
    audio, session = _tone_session(2.5)
    table = A.session_frames(audio, session)
    path = tmp_path / "frames.tsv"
    table.save(path)
    again = A.FrameTable.load(path)
    np.testing.assert_array_equal(again.features, table.features)
    np.testing.assert_array_equal(again.times, table.times)
    assert again.speakers.tolist() == table.speakers.tolist()
