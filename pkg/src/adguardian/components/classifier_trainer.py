import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
import torch.nn as nn
import torch.nn.functional as F
from tqdm import tqdm

from src.adguardian import logger
from src.adguardian.components.checkpoint import CheckpointReader, save_checkpoint
from src.adguardian.components.classifier import AdClassifier, batch_logits, freeze, predict_sequences, to_tensor
from src.adguardian.components.data_preprocessing import DataPreprocessor, random_crop, segment
from src.adguardian.components.model_evaluation import load_split_set, score_predictions
from src.adguardian.components.model_trainer import GRAD_CLIP, batch_order
from src.adguardian.entity.artifact_entity import AcousticSequence, PredictionSet, SampleRecord, SegmentationPolicy
from src.adguardian.entity.config_entity import FinetuneConfig
from src.adguardian.utils.exceptions import ConfigError, TrainingDivergedError

CURVE_COLUMNS = ("epoch", "train_loss", "dev_loss", "dev_accuracy")
FRONTEND_OF = {"ctc_attn": "logmel", "ssl": "waveform"}


class EarlyStopping:
    """Stops `patience` epochs after the first epoch that reached the best score."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ConfigError("Invalid early stopping", [f"patience must be >= 1, got {patience}"])
        self.patience = patience
        self.best_score = -math.inf
        self.best_epoch = 0

    def step(self, epoch: int, score: float) -> bool:
        """Record an epoch's score; True if training should stop now."""
        if score > self.best_score:
            self.best_score, self.best_epoch = score, epoch
        return epoch - self.best_epoch >= self.patience


@dataclass
class FinetuneResult:
    best_epoch: int
    best_dev_accuracy: float
    epochs_run: int
    curves: pd.DataFrame
    checkpoint: Path


def check_frontend_compatible(encoder: str, reader: CheckpointReader):
    expected = "ssl" if encoder == "ssl" else "asr"
    if not reader.kind.startswith(expected):
        raise ConfigError(f"Checkpoint {reader.path} does not match encoder {encoder!r}",
                          [f"checkpoint kind {reader.kind!r}, encoder {encoder!r} consumes {FRONTEND_OF[encoder]} input"])


class ClassifierTrainer:
    """
    Fine-tunes a pre-trained (or freshly initialised) encoder plus pooling head on the AD split.

    Training works on segments or crops that inherit their sample's label; model selection
    and early stopping use sample-level dev accuracy after aggregation.
    """

    def __init__(self, config: FinetuneConfig):
        self.cfg = config
        self.run_dir = Path(config.run_dir)
        self.model_dir = self.run_dir / "model"
        self.model_dir.mkdir(parents=True, exist_ok=True)
        torch.manual_seed(config.seed)

        reader = None
        if config.checkpoint is not None:
            reader = CheckpointReader(config.checkpoint, producer="pretrain-ssl" if config.encoder == "ssl"
                                      else "pretrain-asr")
            check_frontend_compatible(config.encoder, reader)
        model_cfg = config.ssl_model if config.encoder == "ssl" else config.asr_model
        self.model = AdClassifier.build(config.encoder, asdict(model_cfg) if model_cfg else {}, config.layer_select,
                                        config.hidden_dim, config.dropout, checkpoint=reader)
        if config.freeze_encoder:
            logger.info(f"Frozen encoder parameters: {freeze(self.model.encoder)}")
        elif config.freeze_feature_encoder and config.encoder == "ssl":
            logger.info(f"Frozen feature-encoder parameters: {freeze(self.model.encoder.feature_encoder)}")

        self.preprocessor = DataPreprocessor(config.frontend)
        self.train_records = load_split_set(config.split_dir, "train")
        self.dev_records = load_split_set(config.split_dir, "dev")
        if not self.dev_records:
            raise ConfigError("Empty dev set", [f"{config.split_dir / 'dev.jsonl'} holds no samples"])
        self._features: Dict[str, AcousticSequence] = {}

    def sequence(self, record: SampleRecord) -> AcousticSequence:
        if record.sample_id not in self._features:
            self._features[record.sample_id] = self.preprocessor.load_features(record.audio_path,
                                                                               self.model.input_kind)
        return self._features[record.sample_id]

    def train_items(self, epoch: int) -> List[Tuple[torch.Tensor, int]]:
        """Training examples of one epoch under the configured augmentation."""
        aug = self.cfg.train_augmentation
        items = []
        for i, record in enumerate(self.train_records):
            seq = self.sequence(record)
            if aug.mode == "segment":
                policy = SegmentationPolicy(aug.segment_len, aug.hop, min_keep=min(1.0, aug.segment_len))
                pieces = segment(seq, policy) or [seq]
            elif aug.mode == "crop":
                pieces = [random_crop(seq, aug.crop_len, np.random.default_rng([self.cfg.seed, epoch, i]))]
            else:
                pieces = [seq]
            items.extend((to_tensor(p, self.model.min_input_units), record.label) for p in pieces)
        return items

    def make_optimizer(self, steps_per_epoch: int):
        params = [p for p in self.model.parameters() if p.requires_grad]
        if self.cfg.optimizer == "adamw":
            optimizer = torch.optim.AdamW(params, lr=self.cfg.lr)
        else:
            optimizer = torch.optim.Adam(params, lr=self.cfg.lr)
        total = max(self.cfg.max_epochs * steps_per_epoch, 1)
        if self.cfg.scheduler == "linear":
            scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, lambda step: max(0.0, 1.0 - step / total))
        else:
            scheduler = None
        return optimizer, scheduler

    def predict(self, records: Sequence[SampleRecord],
                segmentation: Optional[SegmentationPolicy] = None) -> Tuple[PredictionSet, List[int]]:
        items = [(r.sample_id, self.sequence(r)) for r in records]
        ids, index, probs = predict_sequences(self.model, items, segmentation, self.cfg.batch_size)
        return PredictionSet(ids, probs, {r.sample_id: r.label for r in records}), index

    def evaluate_dev(self, epoch: int) -> Tuple[float, float]:
        """Segment-level dev cross-entropy and sample-level dev accuracy."""
        predictions, _ = self.predict(self.dev_records, self.cfg.dev_segmentation)
        truth = np.array([predictions.truth[s] for s in predictions.sample_ids])
        picked = predictions.probabilities[np.arange(len(truth)), truth]
        dev_loss = float(-np.log(np.clip(picked, 1e-12, None)).mean())
        _, report = score_predictions(predictions, self.cfg.aggregation)
        return dev_loss, report.accuracy

    def save(self, path: Path, epoch: int, tags=()) -> Path:
        modules = dict(self.model.encoder_modules())
        modules["head"] = self.model.head
        return save_checkpoint(path, "ad_classifier", modules, self.model.head_config(), self.cfg.config_digest,
                               None, epoch, tags, extra={"checkpoint": str(self.cfg.checkpoint or "scratch")})

    def run_epoch(self, epoch: int, optimizer, scheduler) -> float:
        self.model.train()
        if self.cfg.freeze_encoder:
            self.model.encoder.eval()
        items = self.train_items(epoch)
        losses = []
        for idx in tqdm(batch_order(len(items), self.cfg.batch_size, self.cfg.seed, epoch),
                        desc=f"finetune epoch {epoch}", leave=False):
            logits, _ = batch_logits(self.model, [items[i][0] for i in idx])
            target = torch.tensor([items[i][1] for i in idx], dtype=torch.long)
            loss = F.cross_entropy(logits, target)
            if not torch.isfinite(loss):
                best = self.model_dir / "best.pt"
                logger.error(f"Fine-tuning loss is not finite at epoch {epoch}; aborting")
                raise TrainingDivergedError(f"fine-tuning diverged at epoch {epoch} (NaN/Inf loss)",
                                            best if best.exists() else None)
            optimizer.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_([p for p in self.model.parameters() if p.requires_grad], GRAD_CLIP)
            optimizer.step()
            if scheduler is not None:
                scheduler.step()
            losses.append(float(loss))
        return float(np.mean(losses)) if losses else float("nan")

    def train(self) -> FinetuneResult:
        steps = math.ceil(len(self.train_items(0)) / self.cfg.batch_size)
        optimizer, scheduler = self.make_optimizer(steps)
        stopper = EarlyStopping(self.cfg.early_stop_patience)
        rows, epoch = [], 0
        best_path = self.model_dir / "best.pt"
        if self.cfg.max_epochs == 0:
            self.save(best_path, 0, tags=("init", "best"))

        for epoch in range(1, self.cfg.max_epochs + 1):
            train_loss = self.run_epoch(epoch, optimizer, scheduler)
            dev_loss, dev_accuracy = self.evaluate_dev(epoch)
            rows.append({"epoch": epoch, "train_loss": train_loss, "dev_loss": dev_loss,
                         "dev_accuracy": dev_accuracy})
            logger.info(f"Fine-tune epoch {epoch}: train {train_loss:.4f} dev {dev_loss:.4f} "
                        f"dev acc {dev_accuracy:.4f}")
            pd.DataFrame(rows, columns=list(CURVE_COLUMNS)).to_csv(self.run_dir / "curves.csv", index=False)
            stop = stopper.step(epoch, dev_accuracy)
            self.save(self.model_dir / "last.pt", epoch)
            if stopper.best_epoch == epoch:
                self.save(best_path, epoch, tags=("best",))
            if stop:
                logger.info(f"Early stopping at epoch {epoch}; best epoch {stopper.best_epoch} "
                            f"(dev accuracy {stopper.best_score:.4f})")
                break

        curves = pd.DataFrame(rows, columns=list(CURVE_COLUMNS))
        curves.to_csv(self.run_dir / "curves.csv", index=False)
        return FinetuneResult(best_epoch=stopper.best_epoch,
                              best_dev_accuracy=max(stopper.best_score, 0.0) if rows else 0.0,
                              epochs_run=epoch, curves=curves, checkpoint=best_path)
