import re
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.adguardian.constants import CLASS_INDEX, CLASS_NAMES, SAMPLE_ID_PATTERN
from src.adguardian.utils.exceptions import ConfigError, FrontendError

_SAMPLE_ID_RE = re.compile(SAMPLE_ID_PATTERN)


# -----------------------------
# ✅ Corpus records
# -----------------------------
class SampleRecord(BaseModel):
    """One audio sample of the AD corpus; group/sex/speaker are encoded in the id."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    sample_id: str
    speaker_id: str
    group: Literal["AD", "MCI", "HC"]
    sex: Literal["M", "F"]
    audio_path: str
    duration: float = Field(gt=0)

    @model_validator(mode="after")
    def _fields_match_sample_id(self) -> "SampleRecord":
        match = _SAMPLE_ID_RE.match(self.sample_id)
        if match is None:
            raise ValueError(f"sample_id {self.sample_id!r} does not match GROUP_SEX_SPEAKER_SEQ")
        group, sex, speaker, _ = match.groups()
        if (group, sex, speaker) != (self.group, self.sex, self.speaker_id):
            raise ValueError(f"fields of {self.sample_id} disagree with its name")
        return self

    @property
    def seq(self) -> str:
        return self.sample_id.rsplit("_", 1)[-1]

    @property
    def label(self) -> int:
        return CLASS_INDEX[self.group]

    @classmethod
    def from_sample_id(cls, sample_id: str, audio_path: str, duration: float) -> "SampleRecord":
        match = _SAMPLE_ID_RE.match(sample_id)
        if match is None:
            raise ValueError(f"sample_id {sample_id!r} does not match GROUP_SEX_SPEAKER_SEQ")
        group, sex, speaker, _ = match.groups()
        return cls(sample_id=sample_id, speaker_id=speaker, group=group, sex=sex,
                   audio_path=audio_path, duration=duration)


@dataclass(frozen=True)
class ManifestIssue:
    path: str
    reason: str


@dataclass
class ManifestParse:
    records: List[SampleRecord]
    issues: List[ManifestIssue]


@dataclass(frozen=True)
class ExclusionList:
    excluded_ids: FrozenSet[str]

    def __post_init__(self):
        bad = sorted(i for i in self.excluded_ids if not _SAMPLE_ID_RE.match(i))
        if bad:
            raise ConfigError("Exclusion list holds malformed sample ids", bad)


@dataclass(frozen=True)
class SplitSpec:
    ratios: Tuple[float, float, float] = (0.70, 0.15, 0.15)
    seed: int = 42
    allow_dev_overlap: bool = False
    n_versions: int = 3
    frozen_test: Optional[FrozenSet[str]] = None

    def __post_init__(self):
        problems = []
        if len(self.ratios) != 3:
            problems.append("ratios must hold (train, dev, test)")
        elif any(not 0.0 < r < 1.0 for r in self.ratios):
            problems.append(f"each ratio must lie in (0, 1), got {self.ratios}")
        elif abs(sum(self.ratios) - 1.0) > 1e-9:
            problems.append(f"ratios must sum to 1.0, got {sum(self.ratios)!r}")
        if self.n_versions < 1:
            problems.append("n_versions must be >= 1")
        if problems:
            raise ConfigError("Invalid split spec", problems)


@dataclass
class SplitResult:
    version_tag: str
    train: List[SampleRecord]
    dev: List[SampleRecord]
    test: List[SampleRecord]
    dev_overlap_speakers: List[str] = field(default_factory=list)
    diagnostics: List[str] = field(default_factory=list)

    def sets(self) -> Dict[str, List[SampleRecord]]:
        return {"train": self.train, "dev": self.dev, "test": self.test}

    def counts(self) -> Dict[str, Dict[str, Dict[str, int]]]:
        """Per set, per group: number of samples and distinct speakers."""
        out = {}
        for name, records in self.sets().items():
            out[name] = {}
            for group in CLASS_NAMES:
                members = [r for r in records if r.group == group]
                out[name][group] = {"samples": len(members),
                                    "speakers": len({r.speaker_id for r in members})}
        return out


# -----------------------------
# ✅ Acoustic front-end
# -----------------------------
@dataclass
class AcousticSequence:
    kind: Literal["waveform", "logmel"]
    data: np.ndarray
    sample_rate: int
    frame_shift: Optional[float] = None
    padded: bool = False

    def __post_init__(self):
        if not np.all(np.isfinite(self.data)):
            raise FrontendError(f"{self.kind} sequence holds NaN/Inf values")
        if self.kind == "waveform":
            if self.data.ndim != 1:
                raise FrontendError("waveform data must be one-dimensional")
            if self.data.size and np.abs(self.data).max() > 1.0:
                raise FrontendError("waveform values must lie in [-1, 1]")
        elif self.kind == "logmel":
            if self.data.ndim != 2 or self.frame_shift is None:
                raise FrontendError("logmel data must be (frames, n_mels) with a frame shift")

    @property
    def units_per_second(self) -> float:
        return float(self.sample_rate) if self.kind == "waveform" else 1.0 / self.frame_shift

    @property
    def length(self) -> int:
        return int(self.data.shape[0])

    @property
    def duration(self) -> float:
        return self.length / self.units_per_second

    def with_data(self, data: np.ndarray, padded: bool = False) -> "AcousticSequence":
        return AcousticSequence(self.kind, data, self.sample_rate, self.frame_shift, padded or self.padded)


@dataclass(frozen=True)
class SegmentationPolicy:
    segment_len: float
    hop: float
    pad_last: bool = True
    min_keep: float = 1.0

    def __post_init__(self):
        if not 0 < self.hop <= self.segment_len:
            raise ConfigError("Invalid segmentation policy", [f"need 0 < hop <= segment_len, got hop={self.hop}"])
        if not 0 <= self.min_keep <= self.segment_len:
            raise ConfigError("Invalid segmentation policy", [f"need 0 <= min_keep <= segment_len, got {self.min_keep}"])


# -----------------------------
# ✅ ASR / SSL
# -----------------------------
@dataclass(frozen=True)
class JointLossConfig:
    ctc_weight: float = 0.3
    label_smoothing: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.ctc_weight <= 1.0:
            raise ConfigError("Invalid joint loss config", [f"ctc_weight {self.ctc_weight} not in [0, 1]"])
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError("Invalid joint loss config", [f"label_smoothing {self.label_smoothing} not in [0, 1)"])


@dataclass
class MaskPlan:
    mask_prob: float
    mask_length: int
    mask: np.ndarray
    starts: np.ndarray
    forced: bool = False

    @property
    def n_masked(self) -> int:
        return int(self.mask.sum())


# -----------------------------
# ✅ Synthetic corpora
# -----------------------------
@dataclass(frozen=True)
class TokenRenderer:
    base_hz: float
    duration_ms: float
    attack_ms: float
    noise_level: float


@dataclass(frozen=True)
class SynthLanguage:
    language_tag: str
    vocab: Tuple[str, ...]
    token_renderers: Tuple[TokenRenderer, ...]
    token_weights: Tuple[float, ...]

    def __post_init__(self):
        if len(self.vocab) < 4:
            raise ConfigError("Invalid synthetic language", ["vocab size must be >= 4"])
        if len(set(self.vocab)) != len(self.vocab):
            raise ConfigError("Invalid synthetic language", ["vocab tokens must be unique"])
        if len(self.token_renderers) != len(self.vocab) or len(set(self.token_renderers)) != len(self.vocab):
            raise ConfigError("Invalid synthetic language", ["each token needs its own distinct renderer"])
        if len(self.token_weights) != len(self.vocab) or abs(sum(self.token_weights) - 1.0) > 1e-9:
            raise ConfigError("Invalid synthetic language", ["token weights must be a distribution over vocab"])


@dataclass(frozen=True)
class SynthAdProfile:
    class_label: Literal["AD", "MCI", "HC"]
    pause_rate: float
    pause_ms: Tuple[float, float]
    token_distribution: Tuple[float, ...]
    speaking_rate_scale: float

    def __post_init__(self):
        problems = []
        if not 0.0 <= self.pause_rate <= 1.0:
            problems.append(f"pause_rate {self.pause_rate} not in [0, 1]")
        if any(p < 0 or p > 1 for p in self.token_distribution) or abs(sum(self.token_distribution) - 1.0) > 1e-9:
            problems.append("token_distribution must be a probability vector")
        if not 0 <= self.pause_ms[0] <= self.pause_ms[1]:
            problems.append(f"pause_ms range {self.pause_ms} invalid")
        if self.speaking_rate_scale <= 0:
            problems.append("speaking_rate_scale must be positive")
        if problems:
            raise ConfigError(f"Invalid profile for {self.class_label}", problems)


# -----------------------------
# ✅ Baseline / evaluation
# -----------------------------
@dataclass
class FeatureVector:
    values: np.ndarray
    feature_set_tag: str
    names: Tuple[str, ...]


@dataclass
class PredictionSet:
    """Segment-level class probabilities plus the sample-level truth."""

    sample_ids: List[str]
    probabilities: np.ndarray
    truth: Dict[str, int]

    def __post_init__(self):
        self.probabilities = np.asarray(self.probabilities, dtype=np.float64).reshape(-1, len(CLASS_NAMES))
        if len(self.sample_ids) != self.probabilities.shape[0]:
            raise ValueError("one probability row per segment is required")
        if np.any(self.probabilities < 0) or np.any(np.abs(self.probabilities.sum(axis=1) - 1.0) > 1e-6):
            raise ValueError("segment probabilities must be nonnegative and sum to 1")
        missing = sorted(set(self.sample_ids) - set(self.truth))
        if missing:
            raise ValueError(f"segments without a truth label: {missing[:5]}")


@dataclass
class EvalReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: np.ndarray
    split_tag: str = ""
    per_class: Dict[str, Dict[str, float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "split_tag": self.split_tag,
            "accuracy": float(self.accuracy),
            "precision": float(self.precision),
            "recall": float(self.recall),
            "f1": float(self.f1),
            "confusion": np.asarray(self.confusion, dtype=int).tolist(),
            "per_class": self.per_class,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(accuracy=d["accuracy"], precision=d["precision"], recall=d["recall"], f1=d["f1"],
                   confusion=np.asarray(d["confusion"], dtype=int), split_tag=d.get("split_tag", ""),
                   per_class=dict(d.get("per_class", {})))
