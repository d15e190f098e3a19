import librosa
import numpy as np
import pytest
import soundfile as sf

from src.adguardian.components.data_preprocessing import (
    DataPreprocessor,
    load_audio,
    logmel,
    random_crop,
    segment,
    segment_count,
    short_track_pieces,
    write_audio,
)
from src.adguardian.entity.artifact_entity import AcousticSequence, SegmentationPolicy
from src.adguardian.entity.config_entity import FrontendConfig
from src.adguardian.utils.exceptions import AudioReadError, ConfigError, FrontendError

# 100 units per second keeps segmentation tests small
RATE = 100


def _wave(seconds: float, rate: int = RATE) -> AcousticSequence:
    n = int(round(seconds * rate))
    return AcousticSequence("waveform", np.linspace(0.0, 1.0, n), rate)


def _brute_force_count(T, s, h, pad_last, min_keep):
    if T < max(min_keep, 1):
        return 0
    if T < s:
        return 1
    starts = [k * h for k in range(T // h + 1) if k * h + s <= T]
    covered = np.zeros(T, dtype=bool)
    for start in starts:
        covered[start:start + s] = True
    uncovered = int((~covered).sum())
    return len(starts) + int(pad_last and uncovered > 0 and uncovered >= min_keep)


def test_silence_file(tmp_path):
    write_audio(tmp_path / "silence.wav", np.zeros(16000))
    seq = load_audio(tmp_path / "silence.wav")
    assert seq.length == 16000
    assert not seq.data.any()


def test_resampling_from_8k(tmp_path):
    t = np.arange(8000) / 8000
    sf.write(str(tmp_path / "tone.wav"), 0.5 * np.sin(2 * np.pi * 440 * t), 8000)
    seq = load_audio(tmp_path / "tone.wav")
    assert abs(seq.length - 16000) <= 1
    spectrum = np.abs(np.fft.rfft(seq.data))
    peak_hz = np.argmax(spectrum) * 16000 / seq.length
    assert peak_hz == pytest.approx(440, rel=0.01)


def test_stereo_is_averaged(tmp_path):
    mono = 0.3 * np.sin(np.linspace(0, 50, 4000))
    sf.write(str(tmp_path / "stereo.wav"), np.stack([mono, mono], axis=1), 16000, subtype="FLOAT")
    sf.write(str(tmp_path / "mono.wav"), mono, 16000, subtype="FLOAT")
    np.testing.assert_allclose(load_audio(tmp_path / "stereo.wav").data, load_audio(tmp_path / "mono.wav").data)


def test_corrupt_file_names_path(tmp_path):
    path = tmp_path / "broken.wav"
    path.write_bytes(b"RIFF0000WAVE")
    with pytest.raises(AudioReadError, match="broken.wav"):
        load_audio(path)


def test_logmel_frame_count():
    seq = logmel(AcousticSequence("waveform", np.random.default_rng(0).uniform(-0.5, 0.5, 16000), 16000))
    assert seq.data.shape == (98, 80)
    assert seq.frame_shift == pytest.approx(0.01)


def test_logmel_of_zeros_is_log_epsilon():
    config = FrontendConfig()
    seq = logmel(AcousticSequence("waveform", np.zeros(16000), 16000), config)
    assert np.all(seq.data == np.log(config.epsilon))


def test_logmel_tone_peaks_in_its_mel_bin():
    config = FrontendConfig()
    centers = librosa.mel_frequencies(config.n_mels + 2, fmin=0.0, fmax=8000.0, htk=True)[1:-1]
    k = int(np.argmin(np.abs(centers - 1000.0)))
    t = np.arange(16000) / 16000
    seq = logmel(AcousticSequence("waveform", 0.5 * np.sin(2 * np.pi * centers[k] * t), 16000), config)
    assert int(np.argmax(seq.data.mean(axis=0))) == k


def test_logmel_shift_by_whole_hops_shifts_frames():
    wav = np.random.default_rng(4).uniform(-0.5, 0.5, 16000 + 3 * 160)
    full = logmel(AcousticSequence("waveform", wav, 16000))
    shifted = logmel(AcousticSequence("waveform", wav[3 * 160:], 16000))
    assert full.length == shifted.length + 3
    np.testing.assert_allclose(full.data[3:], shifted.data, atol=1e-5)


def test_logmel_too_short():
    with pytest.raises(FrontendError):
        logmel(AcousticSequence("waveform", np.zeros(399), 16000))


@pytest.mark.parametrize("segment_len,hop,expected", [(3.0, 2.0, 29), (6.0, 1.0, 55)])
def test_sixty_seconds(segment_len, hop, expected):
    policy = SegmentationPolicy(segment_len, hop, pad_last=False)
    pieces = segment(_wave(60.0), policy)
    assert len(pieces) == expected
    assert all(p.length == int(segment_len * RATE) for p in pieces)
    assert segment_count(6000, int(segment_len * RATE), int(hop * RATE), pad_last=False) == expected


def test_segment_of_exact_window_length():
    pieces = segment(_wave(3.0), SegmentationPolicy(3.0, 2.0))
    assert len(pieces) == 1 and not pieces[0].padded
    assert segment_count(300, 300, 200) == 1


@pytest.mark.parametrize("segment_len,hop,expected", [(3.0, 2.0, 30), (6.0, 1.0, 55)])
def test_sixty_seconds_keeping_remainder(segment_len, hop, expected):
    # 3/2 leaves 1 s after the window at 56 s; 6/1 ends exactly at 60 s
    pieces = segment(_wave(60.0), SegmentationPolicy(segment_len, hop, pad_last=True, min_keep=1.0))
    assert len(pieces) == expected
    assert sum(p.padded for p in pieces) == (1 if expected == 30 else 0)


def test_remainder_below_min_keep_is_dropped():
    # windows at 0 and 2 s cover 5 s of 5.5 s
    assert len(segment(_wave(5.5), SegmentationPolicy(3.0, 2.0, min_keep=1.0))) == 2
    assert len(segment(_wave(5.5), SegmentationPolicy(3.0, 2.0, min_keep=0.5))) == 3


def test_non_overlapping_segments_reassemble_a_prefix():
    seq = AcousticSequence("waveform", np.random.default_rng(3).uniform(-1, 1, 1037), RATE)
    pieces = segment(seq, SegmentationPolicy(2.5, 2.5, pad_last=False))
    joined = np.concatenate([p.data for p in pieces])
    assert len(pieces) == 4
    np.testing.assert_array_equal(joined, seq.data[:joined.size])


def test_tail_is_padded_when_kept():
    pieces = segment(_wave(10.0), SegmentationPolicy(3.0, 2.0, pad_last=True, min_keep=1.0))
    assert len(pieces) == 5
    last = pieces[-1]
    assert last.padded and last.length == 300
    assert not last.data[200:].any()


def test_shorter_than_min_keep_gives_nothing():
    assert segment(_wave(0.5), SegmentationPolicy(3.0, 2.0, min_keep=1.0)) == []


def test_short_input_gives_one_padded_segment():
    pieces = segment(_wave(2.0), SegmentationPolicy(3.0, 2.0))
    assert len(pieces) == 1 and pieces[0].length == 300 and pieces[0].padded


def test_segment_count_against_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        s = int(rng.integers(1, 40))
        h = int(rng.integers(1, s + 1))
        T = int(rng.integers(0, 200))
        pad_last = bool(rng.integers(0, 2))
        min_keep = int(rng.integers(0, s + 1))
        expected = _brute_force_count(T, s, h, pad_last, min_keep)
        assert segment_count(T, s, h, pad_last, min_keep) == expected
        if T:
            seq = AcousticSequence("waveform", np.zeros(T), 1)
            policy = SegmentationPolicy(float(s), float(h), pad_last, float(min_keep))
            assert len(segment(seq, policy)) == expected


def test_logmel_segments_pad_with_floor():
    feats = AcousticSequence("logmel", np.arange(250 * 4, dtype=float).reshape(250, 4), 16000, frame_shift=0.01)
    pieces = segment(feats, SegmentationPolicy(2.0, 2.0, min_keep=0.5))
    assert len(pieces) == 2
    assert np.all(pieces[1].data[50:] == 0.0)
    assert pieces[1].data.shape == (200, 4)


def test_random_crop_range():
    seq = _wave(12.0)
    for seed in range(20):
        crop = random_crop(seq, 10.0, np.random.default_rng(seed))
        assert crop.length == 1000
        start = int(np.argmin(np.abs(seq.data - crop.data[0])))
        assert 0 <= start <= 200
        np.testing.assert_array_equal(crop.data, seq.data[start:start + 1000])


def test_random_crop_identity_and_padding():
    seq = _wave(10.0)
    np.testing.assert_array_equal(random_crop(seq, 10.0, np.random.default_rng(0)).data, seq.data)

    short = _wave(4.0)
    crop = random_crop(short, 10.0, np.random.default_rng(0))
    assert crop.length == 1000 and crop.padded
    np.testing.assert_array_equal(crop.data[:400], short.data)
    assert not crop.data[400:].any()


def test_short_track_pieces():
    pieces = short_track_pieces(_wave(14.0), 6.0)
    assert [p.length for p in pieces] == [600, 600, 600]
    assert pieces[-1].padded


def test_invalid_policy():
    with pytest.raises(ConfigError):
        SegmentationPolicy(3.0, 4.0)


def test_preprocessor_cache_matches_direct(tmp_path):
    wav = 0.2 * np.sin(np.linspace(0, 300, 16000))
    write_audio(tmp_path / "a.wav", wav)
    direct = DataPreprocessor(FrontendConfig()).load_features(tmp_path / "a.wav", "logmel")
    cached = DataPreprocessor(FrontendConfig(), cache_dir=tmp_path / "cache").load_features(tmp_path / "a.wav", "logmel")
    np.testing.assert_array_equal(direct.data, cached.data)
    with pytest.raises(FrontendError):
        DataPreprocessor(FrontendConfig()).features(direct, "mfcc")
