from math import gcd
from pathlib import Path
from typing import List, Optional

import joblib
import librosa
import numpy as np
import soundfile as sf
from scipy.signal import resample_poly

from src.adguardian import logger
from src.adguardian.constants import SAMPLE_RATE
from src.adguardian.entity.artifact_entity import AcousticSequence, SegmentationPolicy
from src.adguardian.entity.config_entity import FrontendConfig
from src.adguardian.utils.exceptions import AudioReadError, FrontendError


def load_audio(path, sample_rate: int = SAMPLE_RATE) -> AcousticSequence:
    """Read a WAV/FLAC file as a mono waveform at `sample_rate`, values in [-1, 1]."""
    try:
        data, sr = sf.read(str(path), dtype="float64", always_2d=True)
    except Exception as e:
        logger.error(f"Cannot read {path}: {e}")
        raise AudioReadError(path, str(e)) from e

    wav = data.mean(axis=1)
    if sr != sample_rate:
        g = gcd(int(sr), int(sample_rate))
        wav = resample_poly(wav, sample_rate // g, sr // g)
    peak = np.abs(wav).max() if wav.size else 0.0
    if peak > 1.0:
        wav = wav / peak
    if not np.all(np.isfinite(wav)):
        raise AudioReadError(path, "non-finite samples")
    return AcousticSequence("waveform", wav.astype(np.float64), sample_rate)


def write_audio(path, waveform: np.ndarray, sample_rate: int = SAMPLE_RATE):
    """16-bit PCM mono WAV."""
    sf.write(str(path), np.clip(waveform, -1.0, 1.0), sample_rate, subtype="PCM_16")


def frame_params(config: FrontendConfig):
    win = int(round(config.win_ms * config.sample_rate / 1000.0))
    shift = int(round(config.shift_ms * config.sample_rate / 1000.0))
    return win, shift


def logmel(waveform: AcousticSequence, config: FrontendConfig = FrontendConfig()) -> AcousticSequence:
    """
    Log mel-filterbank energies, frames = floor((T - win) / shift) + 1.

    No centering or padding is applied, so frame k covers samples [k*shift, k*shift + win).
    """
    win, shift = frame_params(config)
    y = np.asarray(waveform.data, dtype=np.float64)
    if y.shape[0] < win:
        raise FrontendError(f"logmel needs at least {win} samples, got {y.shape[0]}")
    mel = librosa.feature.melspectrogram(
        y=y, sr=waveform.sample_rate, n_fft=win, hop_length=shift, win_length=win,
        window="hann", center=False, power=2.0, n_mels=config.n_mels, norm=None, htk=True,
    )
    feats = np.log(np.maximum(mel, config.epsilon)).T
    return AcousticSequence("logmel", feats, waveform.sample_rate, frame_shift=shift / waveform.sample_rate)


def _units(seconds: float, seq: AcousticSequence) -> int:
    return int(round(seconds * seq.units_per_second))


def _pad_value(seq: AcousticSequence) -> float:
    # silence for waveforms, the sequence floor for log-mel
    return 0.0 if seq.kind == "waveform" else float(seq.data.min())


def _padded(seq: AcousticSequence, piece: np.ndarray, length: int) -> AcousticSequence:
    pad = [(0, length - piece.shape[0])] + [(0, 0)] * (piece.ndim - 1)
    return seq.with_data(np.pad(piece, pad, constant_values=_pad_value(seq)), padded=True)


def segment_count(T: int, s: int, h: int, pad_last: bool = True, min_keep: int = 0) -> int:
    if T < max(min_keep, 1):
        return 0
    if T < s:
        return 1
    n = (T - s) // h + 1
    uncovered = T - ((n - 1) * h + s)
    return n + int(pad_last and uncovered > 0 and uncovered >= min_keep)


def segment(seq: AcousticSequence, policy: SegmentationPolicy) -> List[AcousticSequence]:
    """
    Cut `seq` into windows starting at 0, hop, 2*hop, ...

    When the last full window leaves audio uncovered, one more window starting at the next hop is
    kept (zero-padded) iff `pad_last` and the uncovered part is at least `min_keep` long. Inputs
    shorter than one window give a single padded segment, inputs shorter than `min_keep` give none.
    """
    s, h, keep = _units(policy.segment_len, seq), _units(policy.hop, seq), _units(policy.min_keep, seq)
    T = seq.length
    if T < max(keep, 1):
        logger.warning(f"Sequence of {seq.duration:.2f}s is shorter than min_keep={policy.min_keep}s; no segments")
        return []
    if T < s:
        return [_padded(seq, seq.data, s)]

    n = (T - s) // h + 1
    pieces = [seq.with_data(seq.data[i * h:i * h + s]) for i in range(n)]
    uncovered = T - ((n - 1) * h + s)
    if policy.pad_last and uncovered > 0 and uncovered >= keep:
        pieces.append(_padded(seq, seq.data[n * h:], s))
    return pieces


def random_crop(seq: AcousticSequence, crop_len: float, rng: np.random.Generator) -> AcousticSequence:
    c = _units(crop_len, seq)
    if c <= 0:
        raise FrontendError(f"crop_len must be positive, got {crop_len}")
    T = seq.length
    if T < c:
        return _padded(seq, seq.data, c)
    start = int(rng.integers(0, T - c + 1))
    return seq.with_data(seq.data[start:start + c])


def short_track_pieces(seq: AcousticSequence, short_len: float) -> List[AcousticSequence]:
    """Consecutive non-overlapping pieces of `short_len` seconds; a last partial piece is padded."""
    policy = SegmentationPolicy(segment_len=short_len, hop=short_len, pad_last=True,
                                min_keep=min(1.0, short_len))
    return segment(seq, policy)


class DataPreprocessor:
    """Front-end shared by every model: audio loading plus waveform or log-mel features."""

    def __init__(self, config: FrontendConfig, cache_dir: Optional[Path] = None):
        self.cfg = config
        self._memory = joblib.Memory(str(cache_dir), verbose=0) if cache_dir else None
        self._cached_logmel = self._memory.cache(_logmel_from_file) if self._memory else None

    def load(self, path) -> AcousticSequence:
        return load_audio(path, self.cfg.sample_rate)

    def features(self, seq: AcousticSequence, kind: str) -> AcousticSequence:
        if kind == "waveform":
            return seq
        if kind == "logmel":
            return logmel(seq, self.cfg)
        raise FrontendError(f"Unknown feature kind {kind!r}")

    def load_features(self, path, kind: str) -> AcousticSequence:
        if kind == "logmel" and self._cached_logmel is not None:
            data, shift = self._cached_logmel(str(path), self.cfg)
            return AcousticSequence("logmel", data, self.cfg.sample_rate, frame_shift=shift)
        return self.features(self.load(path), kind)


def _logmel_from_file(path: str, config: FrontendConfig):
    # cache key is (path, config); joblib hashes both
    seq = logmel(load_audio(path, config.sample_rate), config)
    return seq.data, seq.frame_shift
