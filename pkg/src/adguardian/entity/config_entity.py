from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from src.adguardian.entity.artifact_entity import JointLossConfig, SegmentationPolicy


# -----------------------------
# ✅ Synthetic Data Config
# -----------------------------
@dataclass(frozen=True)
class LanguageConfig:
    tag: str
    vocab_size: int
    band_hz: Tuple[float, float]


@dataclass(frozen=True)
class SynthDataConfig:
    root_dir: Path
    asr_dirs: Dict[str, Path]          # language tag -> corpus dir
    ad_dir: Path
    sample_rate: int
    languages: Dict[str, LanguageConfig]  # "matched"/"mismatched" -> language
    n_utts: int
    len_range: Tuple[int, int]
    valid_fraction: float
    ad_language: str
    n_speakers_per_class: int
    samples_per_speaker: int
    duration_range: Tuple[float, float]
    profiles: Dict[str, dict]
    seed: int


# -----------------------------
# ✅ Split Config
# -----------------------------
@dataclass(frozen=True)
class SplitConfig:
    manifest_dir: Path
    exclusions_file: Optional[Path]
    run_dir: Path
    ratios: Tuple[float, float, float]
    n_versions: int
    allow_dev_overlap: bool
    frozen_test: Optional[Tuple[str, ...]]
    seed: int


# -----------------------------
# ✅ Front-end Config
# -----------------------------
@dataclass(frozen=True)
class FrontendConfig:
    sample_rate: int = 16000
    n_mels: int = 80
    win_ms: float = 25.0
    shift_ms: float = 10.0
    epsilon: float = 1e-10


# -----------------------------
# ✅ Model Configs
# -----------------------------
@dataclass(frozen=True)
class AsrModelConfig:
    vocab_size: int          # output classes incl. blank and <sos/eos>
    n_mels: int = 80
    d_model: int = 64
    heads: int = 4
    ff_dim: int = 256
    layers: int = 4
    dropout: float = 0.1


@dataclass(frozen=True)
class SslModelConfig:
    conv_dim: int = 64
    conv_kernels: Tuple[int, ...] = (10, 8, 4, 4)
    conv_strides: Tuple[int, ...] = (5, 4, 4, 4)
    d_model: int = 64
    heads: int = 4
    ff_dim: int = 256
    layers: int = 4
    dropout: float = 0.1
    codebook_groups: int = 2
    codebook_entries: int = 32
    codevector_dim: int = 64
    gumbel_temperature: Tuple[float, float, float] = (2.0, 0.5, 0.995)


# -----------------------------
# ✅ ASR Pre-training Config
# -----------------------------
@dataclass(frozen=True)
class AsrPretrainConfig:
    corpus_dir: Path
    run_dir: Path
    language_tag: str
    model: AsrModelConfig
    frontend: FrontendConfig
    loss: JointLossConfig
    epochs: int
    batch_size: int
    lr: float
    seed: int
    config_digest: str = ""


# -----------------------------
# ✅ SSL Pre-training Config
# -----------------------------
@dataclass(frozen=True)
class SslPretrainConfig:
    corpus_dir: Path
    run_dir: Path
    language_tag: str
    model: SslModelConfig
    sample_rate: int
    mask_prob: float
    mask_length: int
    num_negatives: int
    logit_temperature: float
    diversity_weight: float
    epochs: int
    batch_size: int
    lr: float
    crop_seconds: float
    ctc_epochs: int
    ctc_lr: float
    seed: int
    config_digest: str = ""


# -----------------------------
# ✅ AD Fine-tuning Config
# -----------------------------
@dataclass(frozen=True)
class AugmentationConfig:
    mode: str                 # segment | crop | none
    segment_len: float = 3.0
    hop: float = 1.0
    crop_len: float = 10.0


@dataclass(frozen=True)
class FinetuneConfig:
    encoder: str              # ssl | ctc_attn
    checkpoint: Optional[Path]
    split_dir: Path
    run_dir: Path
    layer_select: str
    hidden_dim: int
    dropout: float
    batch_size: int
    optimizer: str
    lr: float
    scheduler: str
    max_epochs: int
    early_stop_patience: int
    train_augmentation: AugmentationConfig
    freeze_encoder: bool
    freeze_feature_encoder: bool
    frontend: FrontendConfig
    dev_segmentation: Optional[SegmentationPolicy]
    aggregation: str
    seed: int
    asr_model: Optional[AsrModelConfig] = None
    ssl_model: Optional[SslModelConfig] = None
    config_digest: str = ""


# -----------------------------
# ✅ Model Evaluation Config
# -----------------------------
@dataclass(frozen=True)
class EvaluationConfig:
    model_dir: Path
    split_dir: Path
    run_dir: Path
    aggregation: str
    segmentation: Optional[SegmentationPolicy]
    track: str
    short_len: float
    frontend: FrontendConfig
    model_tag: str


# -----------------------------
# ✅ Baseline Config
# -----------------------------
@dataclass(frozen=True)
class BaselineConfig:
    split_dir: Path
    run_dir: Path
    feature_set: str
    C: float
    tol: float
    max_iter: int
    train_segmentation: Optional[SegmentationPolicy]
    test_segmentation: Optional[SegmentationPolicy]
    aggregation: str
    frontend: FrontendConfig
    seed: int


# -----------------------------
# ✅ Ablation Config
# -----------------------------
@dataclass(frozen=True)
class AblationConfig:
    run_dir: Path
    split_dir: Path
    conditions: List[str]
    seeds: List[int]
    checkpoints: Dict[str, Optional[Path]] = field(default_factory=dict)
    finetune: Optional[FinetuneConfig] = None
    evaluation: Optional[EvaluationConfig] = None


# -----------------------------
# ✅ Report Config
# -----------------------------
@dataclass(frozen=True)
class ReportConfig:
    experiment_dir: Path
    run_dir: Path
