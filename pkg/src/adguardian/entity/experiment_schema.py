from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ExperimentSection(_Section):
    name: str = Field(min_length=1)
    model_tag: str = Field(default="model", min_length=1)
    seed: int = 42


class LanguageSection(_Section):
    tag: str
    vocab_size: int = Field(ge=4)
    band_hz: Tuple[float, float]

    @field_validator("band_hz")
    @classmethod
    def _band_ordered(cls, v):
        if not 0 < v[0] < v[1] < 8000:
            raise ValueError("band must satisfy 0 < low < high < 8000 Hz")
        return v


class AsrCorpusSection(_Section):
    n_utts: int = Field(ge=1)
    len_range: Tuple[int, int]
    valid_fraction: float = Field(gt=0, lt=1)


class AdCorpusSection(_Section):
    language: Literal["matched", "mismatched"] = "matched"
    n_speakers_per_class: int = Field(ge=3)
    samples_per_speaker: int = Field(ge=1)
    duration_range: Tuple[float, float]


class ProfileSection(_Section):
    pause_rate: float = Field(ge=0, le=1)
    pause_ms: Tuple[float, float]
    token_skew: float
    speaking_rate_scale: float = Field(gt=0)


class SynthSection(_Section):
    sample_rate: int = 16000
    matched_language: LanguageSection
    mismatched_language: LanguageSection
    asr_corpus: AsrCorpusSection
    ad_corpus: AdCorpusSection
    profiles: Dict[Literal["AD", "MCI", "HC"], ProfileSection]

    @model_validator(mode="after")
    def _all_profiles(self):
        if set(self.profiles) != {"AD", "MCI", "HC"}:
            raise ValueError("profiles must define AD, MCI and HC")
        return self


class SplitSection(_Section):
    ratios: Tuple[float, float, float]
    n_versions: int = Field(ge=1)
    allow_dev_overlap: bool = False
    frozen_test: Optional[List[str]] = None
    exclusions_file: Optional[str] = None


class FrontendSection(_Section):
    n_mels: int = Field(gt=0)
    win_ms: float = Field(gt=0)
    shift_ms: float = Field(gt=0)
    epsilon: float = Field(gt=0)


class AsrSection(_Section):
    language: Literal["matched", "mismatched"] = "matched"
    d_model: int = Field(gt=0)
    heads: int = Field(gt=0)
    ff_dim: int = Field(gt=0)
    layers: int = Field(ge=1)
    dropout: float = Field(ge=0, lt=1)
    ctc_weight: float = Field(ge=0, le=1)
    label_smoothing: float = Field(ge=0, lt=1)
    epochs: int = Field(ge=0)
    batch_size: int = Field(gt=0)
    lr: float = Field(gt=0)


class SslSection(_Section):
    language: Literal["matched", "mismatched"] = "matched"
    conv_dim: int = Field(gt=0)
    conv_kernels: List[int]
    conv_strides: List[int]
    d_model: int = Field(gt=0)
    heads: int = Field(gt=0)
    ff_dim: int = Field(gt=0)
    layers: int = Field(ge=1)
    dropout: float = Field(ge=0, lt=1)
    codebook_groups: int = Field(ge=1)
    codebook_entries: int = Field(ge=2)
    codevector_dim: int = Field(gt=0)
    gumbel_temperature: Tuple[float, float, float]
    mask_prob: float = Field(ge=0, le=1)
    mask_length: int = Field(ge=1)
    num_negatives: int = Field(ge=1)
    logit_temperature: float = Field(gt=0)
    diversity_weight: float = Field(ge=0)
    epochs: int = Field(ge=0)
    batch_size: int = Field(gt=0)
    lr: float = Field(gt=0)
    crop_seconds: float = Field(gt=0)
    ctc_epochs: int = Field(ge=0)
    ctc_lr: float = Field(gt=0)

    @model_validator(mode="after")
    def _conv_shapes(self):
        if len(self.conv_kernels) != len(self.conv_strides):
            raise ValueError("conv_kernels and conv_strides must have equal length")
        if self.codevector_dim % self.codebook_groups:
            raise ValueError("codevector_dim must be divisible by codebook_groups")
        return self


class AugmentationSection(_Section):
    mode: Literal["segment", "crop", "none"]
    segment_len: float = Field(gt=0)
    hop: float = Field(gt=0)
    crop_len: float = Field(gt=0)


class FinetuneSection(_Section):
    encoder: Literal["ssl", "ctc_attn"]
    checkpoint: Optional[str] = None
    layer_select: Literal["last", "concat_last3"]
    hidden_dim: int = Field(gt=0)
    dropout: float = Field(ge=0, lt=1)
    batch_size: int = Field(gt=0)
    optimizer: Literal["adam", "adamw"]
    lr: float = Field(gt=0)
    scheduler: Literal["none", "linear"]
    max_epochs: int = Field(ge=0)
    patience: int = Field(ge=1)
    freeze_encoder: bool = False
    freeze_feature_encoder: bool = False
    train_augmentation: AugmentationSection

    @model_validator(mode="after")
    def _patience_bounded(self):
        if self.max_epochs and self.patience > self.max_epochs:
            raise ValueError("patience must not exceed max_epochs")
        return self


class SegmentationSection(_Section):
    enabled: bool
    segment_len: float = Field(gt=0)
    hop: float = Field(gt=0)
    pad_last: bool = True
    min_keep: float = Field(ge=0)


class EvaluationSection(_Section):
    aggregation: Literal["vote", "mean_prob"]
    segmentation: SegmentationSection
    track: Literal["long", "short"] = "long"
    short_len: float = Field(gt=0)


class BaselineSection(_Section):
    feature_set: Literal["minlld-v1"]
    C: float = Field(gt=0)
    tol: float = Field(gt=0)
    max_iter: int = Field(gt=0)
    train_segmentation: SegmentationSection
    test_segmentation: SegmentationSection


class AblationSection(_Section):
    conditions: List[Literal["scratch", "matched_pretrain", "mismatched_pretrain"]]
    seeds: List[int] = Field(min_length=1)
    split_version: str
    encoder: Literal["ssl", "ctc_attn"]
    max_epochs: int = Field(ge=1)


class ExperimentConfig(_Section):
    """The full hierarchical experiment document; unknown keys anywhere are rejected."""

    experiment: ExperimentSection
    synth: SynthSection
    split: SplitSection
    frontend: FrontendSection
    asr: AsrSection
    ssl: SslSection
    finetune: FinetuneSection
    evaluation: EvaluationSection
    baseline: BaselineSection
    ablation: AblationSection
