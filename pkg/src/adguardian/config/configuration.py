import copy
import os
from pathlib import Path
from typing import Iterable, Optional

import yaml
from dotenv import load_dotenv
from pydantic import ValidationError

from src.adguardian import logger
from src.adguardian.constants import *
from src.adguardian.utils.common import read_yaml, create_directories, config_digest
from src.adguardian.utils.exceptions import ConfigError, UpstreamArtifactError
from src.adguardian.entity.artifact_entity import JointLossConfig, SegmentationPolicy
from src.adguardian.entity.experiment_schema import ExperimentConfig
from src.adguardian.entity.config_entity import (
    AblationConfig,
    AsrModelConfig,
    AsrPretrainConfig,
    AugmentationConfig,
    BaselineConfig,
    EvaluationConfig,
    FinetuneConfig,
    FrontendConfig,
    LanguageConfig,
    ReportConfig,
    SplitConfig,
    SslModelConfig,
    SslPretrainConfig,
    SynthDataConfig,
)

load_dotenv()


def deep_merge(base: dict, update: dict) -> dict:
    """Recursively merge `update` into a copy of `base`; dicts merge, everything else replaces."""
    merged = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def apply_override(document: dict, assignment: str) -> dict:
    """Apply one dotted-path `a.b.c=value` override; the value is typed by the YAML parser."""
    if "=" not in assignment:
        raise ConfigError("Invalid override", [f"{assignment!r} is not of the form key=value"])
    key, raw = assignment.split("=", 1)
    path = [p for p in key.strip().split(".") if p]
    if not path:
        raise ConfigError("Invalid override", [f"{assignment!r} has an empty key"])
    node = document
    for part in path[:-1]:
        if not isinstance(node.get(part), dict):
            raise ConfigError("Invalid override", [f"{key}: {part!r} is not a section"])
        node = node[part]
    node[path[-1]] = yaml.safe_load(raw)
    return document


def _segmentation(section) -> Optional[SegmentationPolicy]:
    if not section.enabled:
        return None
    return SegmentationPolicy(segment_len=section.segment_len, hop=section.hop,
                              pad_last=section.pad_last, min_keep=section.min_keep)


class ConfigurationManager:
    def __init__(self,
                config_filepath=CONFIG_FILE_PATH,
                params_filepath=PARAMS_FILE_PATH,
                schema_filepath=SCHEMA_FILE_PATH,
                experiment_filepath: Optional[Path] = None,
                overrides: Iterable[str] = (),
                seed: Optional[int] = None,
                out_dir: Optional[Path] = None):
        self.config = read_yaml(Path(config_filepath))
        self.schema = read_yaml(Path(schema_filepath))

        document = read_yaml(Path(params_filepath)).to_dict()
        if experiment_filepath is not None:
            if not Path(experiment_filepath).exists():
                raise ConfigError("Unknown experiment config", [f"{experiment_filepath} does not exist"])
            preset = read_yaml(Path(experiment_filepath)).to_dict()
            document = deep_merge(document, preset)
            logger.info(f"Experiment config merged: {experiment_filepath}")
        for assignment in overrides:
            document = apply_override(document, assignment)
        if seed is not None:
            document["experiment"]["seed"] = int(seed)

        try:
            self.experiment = ExperimentConfig.model_validate(document)
        except ValidationError as e:
            fields = [f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()]
            raise ConfigError("Invalid experiment config", fields) from e

        self.params = self.experiment.model_dump(mode="json")
        self.digest = config_digest(self.params)

        self.data_root = Path(os.getenv(DATA_ROOT_ENV, self.config.synth_data.root_dir))
        self.runs_root = Path(out_dir) if out_dir is not None else Path(self.config.runs_root)
        self.experiment_dir = self.runs_root / self.experiment.experiment.name

        create_directories([self.config.artifacts_root], verbose=False)

    # ------------------------------------------------------------------ helpers
    def _language(self, which: str) -> LanguageConfig:
        section = getattr(self.experiment.synth, f"{which}_language")
        return LanguageConfig(tag=section.tag, vocab_size=section.vocab_size, band_hz=tuple(section.band_hz))

    def asr_corpus_dir(self, tag: str) -> Path:
        return self.data_root / f"asr_{tag}"

    def ad_corpus_dir(self) -> Path:
        return self.data_root / "ad"

    def split_dir(self, version: Optional[str] = None) -> Path:
        root = self.experiment_dir / "splits"
        return root / version if version else root

    def split_versions(self) -> list:
        """Split version tags already produced by the `split` stage, in order."""
        root = self.split_dir()
        versions = sorted((p.name for p in root.glob("v*") if p.is_dir()), key=lambda v: int(v[1:]))
        if not versions:
            raise UpstreamArtifactError(str(root), "split")
        return versions

    def get_frontend_config(self) -> FrontendConfig:
        fe = self.experiment.frontend
        return FrontendConfig(sample_rate=self.experiment.synth.sample_rate, n_mels=fe.n_mels,
                              win_ms=fe.win_ms, shift_ms=fe.shift_ms, epsilon=fe.epsilon)

    def get_asr_model_config(self, language: str) -> AsrModelConfig:
        asr = self.experiment.asr
        return AsrModelConfig(vocab_size=self._language(language).vocab_size + 2,
                              n_mels=self.experiment.frontend.n_mels, d_model=asr.d_model, heads=asr.heads,
                              ff_dim=asr.ff_dim, layers=asr.layers, dropout=asr.dropout)

    def get_ssl_model_config(self) -> SslModelConfig:
        ssl = self.experiment.ssl
        return SslModelConfig(conv_dim=ssl.conv_dim, conv_kernels=tuple(ssl.conv_kernels),
                              conv_strides=tuple(ssl.conv_strides), d_model=ssl.d_model, heads=ssl.heads,
                              ff_dim=ssl.ff_dim, layers=ssl.layers, dropout=ssl.dropout,
                              codebook_groups=ssl.codebook_groups, codebook_entries=ssl.codebook_entries,
                              codevector_dim=ssl.codevector_dim,
                              gumbel_temperature=tuple(ssl.gumbel_temperature))

    def pretrain_checkpoint(self, encoder: str, language: str) -> Path:
        stage = "pretrain-ssl" if encoder == "ssl" else "pretrain-asr"
        return self.experiment_dir / stage / self._language(language).tag / "checkpoints" / "best.pt"

    # ------------------------------------------------------------------ stages
    def get_synth_data_config(self) -> SynthDataConfig:
        synth = self.experiment.synth
        languages = {which: self._language(which) for which in ("matched", "mismatched")}
        create_directories([self.data_root])
        return SynthDataConfig(
            root_dir=self.data_root,
            asr_dirs={lang.tag: self.asr_corpus_dir(lang.tag) for lang in languages.values()},
            ad_dir=self.ad_corpus_dir(),
            sample_rate=synth.sample_rate,
            languages=languages,
            n_utts=synth.asr_corpus.n_utts,
            len_range=tuple(synth.asr_corpus.len_range),
            valid_fraction=synth.asr_corpus.valid_fraction,
            ad_language=synth.ad_corpus.language,
            n_speakers_per_class=synth.ad_corpus.n_speakers_per_class,
            samples_per_speaker=synth.ad_corpus.samples_per_speaker,
            duration_range=tuple(synth.ad_corpus.duration_range),
            profiles={k: v.model_dump() for k, v in synth.profiles.items()},
            seed=self.experiment.experiment.seed,
        )

    def get_split_config(self) -> SplitConfig:
        split = self.experiment.split
        exclusions = Path(split.exclusions_file) if split.exclusions_file \
            else self.ad_corpus_dir() / self.config.split.exclusions_file
        if not exclusions.exists():
            log = logger.warning if split.exclusions_file else logger.info
            log(f"Exclusion list {exclusions} not found; no samples will be excluded")
            exclusions = None
        return SplitConfig(
            manifest_dir=self.ad_corpus_dir(),
            exclusions_file=exclusions,
            run_dir=self.split_dir(),
            ratios=tuple(split.ratios),
            n_versions=split.n_versions,
            allow_dev_overlap=split.allow_dev_overlap,
            frozen_test=tuple(split.frozen_test) if split.frozen_test else None,
            seed=self.experiment.experiment.seed,
        )

    def get_asr_pretrain_config(self) -> AsrPretrainConfig:
        asr = self.experiment.asr
        language = self._language(asr.language)
        return AsrPretrainConfig(
            corpus_dir=self.asr_corpus_dir(language.tag),
            run_dir=self.experiment_dir / "pretrain-asr" / language.tag,
            language_tag=language.tag,
            model=self.get_asr_model_config(asr.language),
            frontend=self.get_frontend_config(),
            loss=JointLossConfig(ctc_weight=asr.ctc_weight, label_smoothing=asr.label_smoothing),
            epochs=asr.epochs,
            batch_size=asr.batch_size,
            lr=asr.lr,
            seed=self.experiment.experiment.seed,
            config_digest=self.digest,
        )

    def get_ssl_pretrain_config(self) -> SslPretrainConfig:
        ssl = self.experiment.ssl
        language = self._language(ssl.language)
        return SslPretrainConfig(
            corpus_dir=self.asr_corpus_dir(language.tag),
            run_dir=self.experiment_dir / "pretrain-ssl" / language.tag,
            language_tag=language.tag,
            model=self.get_ssl_model_config(),
            sample_rate=self.experiment.synth.sample_rate,
            mask_prob=ssl.mask_prob,
            mask_length=ssl.mask_length,
            num_negatives=ssl.num_negatives,
            logit_temperature=ssl.logit_temperature,
            diversity_weight=ssl.diversity_weight,
            epochs=ssl.epochs,
            batch_size=ssl.batch_size,
            lr=ssl.lr,
            crop_seconds=ssl.crop_seconds,
            ctc_epochs=ssl.ctc_epochs,
            ctc_lr=ssl.ctc_lr,
            seed=self.experiment.experiment.seed,
            config_digest=self.digest,
        )

    def get_finetune_config(self, version: str, run_dir: Optional[Path] = None, seed: Optional[int] = None,
                            encoder: Optional[str] = None, checkpoint: Optional[str] = "default",
                            max_epochs: Optional[int] = None) -> FinetuneConfig:
        """
        Build the fine-tuning config for one split version.

        `checkpoint="default"` resolves the pre-training checkpoint of the configured encoder family,
        `None` means training from scratch.
        """
        ft = self.experiment.finetune
        encoder = encoder or ft.encoder
        if checkpoint == "default":
            if ft.checkpoint == "scratch":
                checkpoint = None
            elif ft.checkpoint:
                checkpoint = ft.checkpoint
            else:
                language = self.experiment.ssl.language if encoder == "ssl" else self.experiment.asr.language
                checkpoint = self.pretrain_checkpoint(encoder, language)
        checkpoint = Path(checkpoint) if checkpoint else None
        if checkpoint is not None and not checkpoint.exists():
            raise UpstreamArtifactError(str(checkpoint), "pretrain-ssl" if encoder == "ssl" else "pretrain-asr")

        split_dir = self.split_dir(version)
        if not split_dir.exists():
            raise UpstreamArtifactError(str(split_dir), "split")

        epochs = ft.max_epochs if max_epochs is None else max_epochs
        aug = ft.train_augmentation
        language = self.experiment.asr.language
        return FinetuneConfig(
            encoder=encoder,
            checkpoint=checkpoint,
            split_dir=split_dir,
            run_dir=run_dir or self.experiment_dir / "finetune" / self.experiment.experiment.model_tag / version,
            layer_select=ft.layer_select,
            hidden_dim=ft.hidden_dim,
            dropout=ft.dropout,
            batch_size=ft.batch_size,
            optimizer=ft.optimizer,
            lr=ft.lr,
            scheduler=ft.scheduler,
            max_epochs=epochs,
            early_stop_patience=min(ft.patience, max(epochs, 1)),
            train_augmentation=AugmentationConfig(mode=aug.mode, segment_len=aug.segment_len,
                                                  hop=aug.hop, crop_len=aug.crop_len),
            freeze_encoder=ft.freeze_encoder,
            freeze_feature_encoder=ft.freeze_feature_encoder,
            frontend=self.get_frontend_config(),
            dev_segmentation=_segmentation(self.experiment.evaluation.segmentation),
            aggregation=self.experiment.evaluation.aggregation,
            seed=self.experiment.experiment.seed if seed is None else seed,
            asr_model=self.get_asr_model_config(language) if encoder == "ctc_attn" else None,
            ssl_model=self.get_ssl_model_config() if encoder == "ssl" else None,
            config_digest=self.digest,
        )

    def get_evaluation_config(self, version: str, model_dir: Optional[Path] = None,
                              run_dir: Optional[Path] = None) -> EvaluationConfig:
        ev = self.experiment.evaluation
        tag = self.experiment.experiment.model_tag
        model_dir = model_dir or self.experiment_dir / "finetune" / tag / version
        if not (model_dir / "model" / "best.pt").exists():
            raise UpstreamArtifactError(str(model_dir / "model" / "best.pt"), "finetune")
        return EvaluationConfig(
            model_dir=model_dir,
            split_dir=self.split_dir(version),
            run_dir=run_dir or self.experiment_dir / "evaluate" / tag / version,
            aggregation=ev.aggregation,
            segmentation=_segmentation(ev.segmentation),
            track=ev.track,
            short_len=ev.short_len,
            frontend=self.get_frontend_config(),
            model_tag=tag,
        )

    def get_baseline_config(self, version: str) -> BaselineConfig:
        bl = self.experiment.baseline
        split_dir = self.split_dir(version)
        if not split_dir.exists():
            raise UpstreamArtifactError(str(split_dir), "split")
        return BaselineConfig(
            split_dir=split_dir,
            run_dir=self.experiment_dir / "baseline" / self.experiment.experiment.model_tag / version,
            feature_set=bl.feature_set,
            C=bl.C,
            tol=bl.tol,
            max_iter=bl.max_iter,
            train_segmentation=_segmentation(bl.train_segmentation),
            test_segmentation=_segmentation(bl.test_segmentation),
            aggregation=self.experiment.evaluation.aggregation,
            frontend=self.get_frontend_config(),
            seed=self.experiment.experiment.seed,
        )

    def get_ablation_config(self) -> AblationConfig:
        ab = self.experiment.ablation
        checkpoints = {}
        for condition in ab.conditions:
            if condition == "scratch":
                checkpoints[condition] = None
                continue
            which = "matched" if condition == "matched_pretrain" else "mismatched"
            path = self.pretrain_checkpoint(ab.encoder, which)
            if not path.exists():
                producer = "pretrain-ssl" if ab.encoder == "ssl" else "pretrain-asr"
                raise UpstreamArtifactError(str(path), f"{producer} --set {ab.encoder.replace('ctc_attn', 'asr')}.language={which}")
            checkpoints[condition] = path
        run_dir = self.experiment_dir / "ablation"
        base = self.get_finetune_config(ab.split_version, run_dir=run_dir, encoder=ab.encoder,
                                        checkpoint=None, max_epochs=ab.max_epochs)
        return AblationConfig(
            run_dir=run_dir,
            split_dir=self.split_dir(ab.split_version),
            conditions=list(ab.conditions),
            seeds=list(ab.seeds),
            checkpoints=checkpoints,
            finetune=base,
        )

    def get_report_config(self) -> ReportConfig:
        if not self.experiment_dir.exists():
            raise UpstreamArtifactError(str(self.experiment_dir), "evaluate")
        return ReportConfig(experiment_dir=self.experiment_dir, run_dir=self.experiment_dir / "report")
