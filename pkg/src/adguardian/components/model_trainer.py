import hashlib
import math
import shutil
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import editdistance
import numpy as np
import pandas as pd
import torch
import torch.nn as nn
from tqdm import tqdm

from src.adguardian import logger
from src.adguardian.components.asr_model import JointCTCAttentionModel
from src.adguardian.components.checkpoint import CheckpointReader, save_checkpoint
from src.adguardian.components.ctc import batch_ctc_loss
from src.adguardian.components.data_preprocessing import DataPreprocessor, random_crop
from src.adguardian.components.ssl_model import SslCtcModel, Wav2VecModel, sample_masks
from src.adguardian.entity.artifact_entity import AcousticSequence
from src.adguardian.entity.config_entity import AsrPretrainConfig, FrontendConfig, SslPretrainConfig
from src.adguardian.utils.common import load_json, load_jsonl
from src.adguardian.utils.exceptions import ConfigError, TrainingDivergedError, UpstreamArtifactError

GRAD_CLIP = 5.0
PERPLEXITY_FLOOR = 1.5


def batch_order(n: int, batch_size: int, seed: int, epoch: int) -> List[np.ndarray]:
    """Batch composition depends only on (seed, epoch)."""
    order = np.random.default_rng([seed, epoch]).permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def pad_batch(items: Sequence[torch.Tensor]) -> Tuple[torch.Tensor, torch.Tensor]:
    lengths = torch.tensor([x.size(0) for x in items], dtype=torch.long)
    return nn.utils.rnn.pad_sequence(list(items), batch_first=True), lengths


def corpus_cer(references: Sequence[Sequence[int]], hypotheses: Sequence[Sequence[int]]) -> float:
    """Total edit distance over total reference length."""
    errors = sum(editdistance.eval(list(r), list(h)) for r, h in zip(references, hypotheses))
    return errors / max(sum(len(r) for r in references), 1)


def state_fingerprint(module: nn.Module) -> str:
    """Stable hash of a module's parameters and buffers."""
    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


class AsrCorpus:
    """The transcribed toy corpus written by `synth-data`: audio, token ids and the vocabulary."""

    def __init__(self, corpus_dir: Path, frontend: FrontendConfig, kind: str):
        corpus_dir = Path(corpus_dir)
        if not (corpus_dir / "vocab.json").exists():
            raise UpstreamArtifactError(str(corpus_dir), "synth-data")
        self.vocab: List[str] = list(load_json(corpus_dir / "vocab.json").vocab)
        self.token_index = {tok: i + 1 for i, tok in enumerate(self.vocab)}
        preprocessor = DataPreprocessor(frontend)
        self.sets: Dict[str, Tuple[List[torch.Tensor], List[List[int]]]] = {}
        for name in ("train", "valid"):
            feats, refs = [], []
            for row in load_jsonl(corpus_dir / f"{name}.jsonl"):
                seq = preprocessor.load_features(row["audio_path"], kind)
                feats.append(torch.as_tensor(seq.data, dtype=torch.float32))
                refs.append([self.token_index[t] for t in row["tokens"].split()])
            self.sets[name] = (feats, refs)
            logger.info(f"Loaded {len(feats)} {name} utterances from {corpus_dir} as {kind}")


class _Trainer:
    """Shared bookkeeping: curves, per-epoch checkpoints, best tagging and divergence abort."""

    curve_columns: Tuple[str, ...] = ()

    def __init__(self, run_dir: Path, seed: int):
        self.run_dir = Path(run_dir)
        self.ckpt_dir = self.run_dir / "checkpoints"
        self.ckpt_dir.mkdir(parents=True, exist_ok=True)
        self.seed = seed
        self.rows: List[dict] = []
        self.last_good: Optional[Path] = None
        torch.manual_seed(seed)

    def check_finite(self, value: torch.Tensor, what: str):
        if not torch.isfinite(value).all():
            logger.error(f"{what} is not finite; aborting")
            raise TrainingDivergedError(f"{what} diverged (NaN/Inf loss)", self.last_good)

    def write_curves(self, name: str = "curves.csv") -> pd.DataFrame:
        df = pd.DataFrame(self.rows, columns=list(self.curve_columns))
        df.to_csv(self.run_dir / name, index=False)
        return df

    def mark_best(self, epoch_path: Path):
        shutil.copyfile(epoch_path, self.ckpt_dir / "best.pt")
        logger.info(f"Best checkpoint <- {epoch_path.name}")


class AsrPretrainer(_Trainer):
    """Joint CTC-attention pre-training on the toy transcribed corpus."""

    curve_columns = ("epoch", "train_loss", "valid_loss", "valid_cer")

    def __init__(self, config: AsrPretrainConfig):
        super().__init__(config.run_dir, config.seed)
        self.cfg = config
        self.corpus = AsrCorpus(config.corpus_dir, config.frontend, "logmel")
        if config.model.vocab_size != len(self.corpus.vocab) + 2:
            raise ConfigError("Vocabulary mismatch", [f"model vocab_size {config.model.vocab_size} != "
                                                      f"{len(self.corpus.vocab)} tokens + blank + <sos/eos>"])
        self.model = JointCTCAttentionModel(config.model)
        self.optimizer = torch.optim.Adam(self.model.parameters(), lr=config.lr)

    def save(self, epoch: int, tags=()) -> Path:
        path = save_checkpoint(
            self.ckpt_dir / f"epoch_{epoch:03d}.pt", "asr_ctc_attn",
            {"encoder": self.model.encoder, "ctc": self.model.ctc, "decoder": self.model.decoder},
            self.model.model_config(), self.cfg.config_digest, self.corpus.vocab, epoch, tags,
            extra={"language_tag": self.cfg.language_tag})
        self.last_good = path
        return path

    def run_epoch(self, epoch: int) -> float:
        feats, refs = self.corpus.sets["train"]
        self.model.train()
        losses = []
        for idx in tqdm(batch_order(len(feats), self.cfg.batch_size, self.seed, epoch), desc=f"asr epoch {epoch}",
                        leave=False):
            x, lengths = pad_batch([feats[i] for i in idx])
            loss, _, _ = self.model(x, lengths, [refs[i] for i in idx], self.cfg.loss)
            self.check_finite(loss, f"ASR train loss at epoch {epoch}")
            self.optimizer.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(self.model.parameters(), GRAD_CLIP)
            self.optimizer.step()
            losses.append(float(loss))
        return float(np.mean(losses)) if losses else float("nan")

    @torch.no_grad()
    def validate(self) -> Tuple[float, float]:
        feats, refs = self.corpus.sets["valid"]
        self.model.eval()
        losses, hyps = [], []
        for start in range(0, len(feats), self.cfg.batch_size):
            x, lengths = pad_batch(feats[start:start + self.cfg.batch_size])
            batch_refs = refs[start:start + self.cfg.batch_size]
            loss, _, _ = self.model(x, lengths, batch_refs, self.cfg.loss)
            losses.append(float(loss) * len(batch_refs))
            hyps.extend(self.model.recognize(x, lengths))
        return sum(losses) / max(len(feats), 1), corpus_cer(refs, hyps)

    def train(self) -> pd.DataFrame:
        best_cer = math.inf
        if self.cfg.epochs == 0:
            self.mark_best(self.save(0, tags=("init", "best")))
        for epoch in range(1, self.cfg.epochs + 1):
            train_loss = self.run_epoch(epoch)
            valid_loss, valid_cer = self.validate()
            self.rows.append({"epoch": epoch, "train_loss": train_loss, "valid_loss": valid_loss,
                              "valid_cer": valid_cer})
            logger.info(f"ASR epoch {epoch}: train {train_loss:.4f} valid {valid_loss:.4f} CER {valid_cer:.4f}")
            is_best = valid_cer < best_cer
            path = self.save(epoch, tags=("best",) if is_best else ())
            if is_best:
                best_cer = valid_cer
                self.mark_best(path)
            self.write_curves()
        return self.write_curves()


class SslPretrainer(_Trainer):
    """
    Masked contrastive pre-training of the waveform encoder, then supervised CTC training of
    a projection layer on top (the SSL model's ASR stage).
    """

    curve_columns = ("epoch", "train_loss", "valid_loss", "contrastive", "diversity", "prob_perplexity")
    ctc_curve_columns = ("epoch", "train_loss", "valid_loss", "valid_cer")

    def __init__(self, config: SslPretrainConfig):
        super().__init__(config.run_dir, config.seed)
        self.cfg = config
        frontend = FrontendConfig(sample_rate=config.sample_rate)
        self.corpus = AsrCorpus(config.corpus_dir, frontend, "waveform")
        self.model = Wav2VecModel(config.model)
        self.updates = 0

    # ------------------------------------------------------------------ contrastive stage
    def _crops(self, wavs: List[torch.Tensor], idx: np.ndarray, epoch: int) -> Tuple[torch.Tensor, torch.Tensor]:
        crops, lengths = [], []
        for i in idx:
            seq = AcousticSequence("waveform", wavs[i].numpy().astype(np.float64), self.cfg.sample_rate)
            crop = random_crop(seq, self.cfg.crop_seconds, np.random.default_rng([self.seed, epoch, int(i)]))
            crops.append(torch.as_tensor(crop.data, dtype=torch.float32))
            lengths.append(min(seq.length, crop.length))
        return torch.stack(crops), torch.tensor(lengths, dtype=torch.long)

    def _masks(self, lengths: torch.Tensor, rng: np.random.Generator, force_span: bool = True) -> List[np.ndarray]:
        frames = self.model.encoder.feature_encoder.output_lengths(lengths)
        return [sample_masks(int(n), self.cfg.mask_prob, self.cfg.mask_length, rng, force_span).mask for n in frames]

    def _step_loss(self, wav: torch.Tensor, lengths: torch.Tensor, rng: np.random.Generator) -> Dict[str, torch.Tensor]:
        masks = self._masks(lengths, rng)
        return self.model.pretrain_loss(wav, lengths, masks, self.cfg.num_negatives, self.cfg.logit_temperature,
                                        self.cfg.diversity_weight, rng)

    def save_pretrain(self, epoch: int, tags=()) -> Path:
        path = save_checkpoint(self.ckpt_dir / f"pretrain_epoch_{epoch:03d}.pt", "ssl_pretrain",
                               self.model.modules_for_checkpoint(), self.model.model_config(),
                               self.cfg.config_digest, self.corpus.vocab, epoch, tags,
                               extra={"language_tag": self.cfg.language_tag})
        self.last_good = path
        return path

    def pretrain(self) -> pd.DataFrame:
        wavs, _ = self.corpus.sets["train"]
        valid_wavs, _ = self.corpus.sets["valid"]
        best, best_path = math.inf, self.save_pretrain(0, tags=("init",))
        optimizer = torch.optim.AdamW(self.model.parameters(), lr=self.cfg.lr)
        for epoch in range(1, self.cfg.epochs + 1):
            self.model.train()
            rng = np.random.default_rng([self.seed, epoch, 1])
            stats = []
            for idx in tqdm(batch_order(len(wavs), self.cfg.batch_size, self.seed, epoch),
                            desc=f"ssl epoch {epoch}", leave=False):
                self.model.quantizer.set_num_updates(self.updates)
                wav, lengths = self._crops(wavs, idx, epoch)
                out = self._step_loss(wav, lengths, rng)
                self.check_finite(out["loss"], f"SSL loss at epoch {epoch}")
                optimizer.zero_grad()
                out["loss"].backward()
                nn.utils.clip_grad_norm_(self.model.parameters(), GRAD_CLIP)
                optimizer.step()
                self.updates += 1
                stats.append({k: float(out[k]) for k in ("loss", "contrastive", "diversity", "prob_perplexity")})
            valid_loss = self.validate(valid_wavs, epoch)
            mean = pd.DataFrame(stats).mean().to_dict()
            self.rows.append({"epoch": epoch, "train_loss": mean["loss"], "valid_loss": valid_loss,
                              "contrastive": mean["contrastive"], "diversity": mean["diversity"],
                              "prob_perplexity": mean["prob_perplexity"]})
            logger.info(f"SSL epoch {epoch}: loss {mean['loss']:.4f} valid {valid_loss:.4f} "
                        f"perplexity {mean['prob_perplexity']:.2f} temp {self.model.quantizer.curr_temp:.3f}")
            if mean["prob_perplexity"] < PERPLEXITY_FLOOR:
                logger.warning(f"Codebook collapse: perplexity {mean['prob_perplexity']:.2f} < {PERPLEXITY_FLOOR}; "
                               f"consider raising ssl.diversity_weight (now {self.cfg.diversity_weight})")
            path = self.save_pretrain(epoch, tags=("best",) if valid_loss < best else ())
            if valid_loss < best:
                best, best_path = valid_loss, path
            self.write_curves("pretrain_curves.csv")
        shutil.copyfile(best_path, self.ckpt_dir / "pretrain_best.pt")
        return self.write_curves("pretrain_curves.csv")

    @torch.no_grad()
    def validate(self, wavs: List[torch.Tensor], epoch: int) -> float:
        self.model.eval()
        rng = np.random.default_rng([self.seed, epoch, 2])
        total, n = 0.0, 0
        for start in range(0, len(wavs), self.cfg.batch_size):
            idx = np.arange(start, min(start + self.cfg.batch_size, len(wavs)))
            wav, lengths = self._crops(wavs, idx, 0)
            out = self._step_loss(wav, lengths, rng)
            total += float(out["contrastive"]) * len(idx)
            n += len(idx)
        return total / max(n, 1)

    # ------------------------------------------------------------------ CTC stage
    def asr_finetune(self, pretrained: Optional[CheckpointReader] = None) -> Tuple[SslCtcModel, pd.DataFrame]:
        """
        Train a fresh projection (and the context encoder) with CTC on the transcribed corpus.

        The feature encoder stays frozen during this stage. Without a checkpoint the encoder
        starts from random initialisation.
        """
        vocab = self.corpus.vocab
        if pretrained is not None and pretrained.vocab is not None and list(pretrained.vocab) != vocab:
            raise ConfigError("Vocabulary mismatch", [f"checkpoint vocab {pretrained.vocab} != corpus vocab {vocab}"])
        model = SslCtcModel(self.cfg.model, odim=len(vocab) + 1)
        if pretrained is not None:
            pretrained.load_into("feature_encoder", model.encoder.feature_encoder)
            pretrained.load_into("context_encoder", model.encoder.context_encoder)
        for p in model.encoder.feature_encoder.parameters():
            p.requires_grad_(False)

        feats, refs = self.corpus.sets["train"]
        valid_feats, valid_refs = self.corpus.sets["valid"]
        optimizer = torch.optim.Adam([p for p in model.parameters() if p.requires_grad], lr=self.cfg.ctc_lr)
        rows, best = [], math.inf

        def save(epoch: int, tags=()) -> Path:
            path = save_checkpoint(self.ckpt_dir / f"ctc_epoch_{epoch:03d}.pt", "ssl_ctc",
                                   model.modules_for_checkpoint(), self.model.model_config(),
                                   self.cfg.config_digest, vocab, epoch, tags,
                                   extra={"language_tag": self.cfg.language_tag})
            self.last_good = path
            return path

        if self.cfg.ctc_epochs == 0:
            self.mark_best(save(0, tags=("init", "best")))
        for epoch in range(1, self.cfg.ctc_epochs + 1):
            model.train()
            losses = []
            for idx in tqdm(batch_order(len(feats), self.cfg.batch_size, self.seed, epoch),
                            desc=f"ssl-ctc epoch {epoch}", leave=False):
                wav, lengths = pad_batch([feats[i] for i in idx])
                log_probs, frame_lengths = model(wav, lengths)
                loss = batch_ctc_loss(log_probs, frame_lengths, [refs[i] for i in idx])
                self.check_finite(loss, f"SSL CTC loss at epoch {epoch}")
                optimizer.zero_grad()
                loss.backward()
                nn.utils.clip_grad_norm_(model.parameters(), GRAD_CLIP)
                optimizer.step()
                losses.append(float(loss))

            model.eval()
            valid_losses, hyps = [], []
            with torch.no_grad():
                for start in range(0, len(valid_feats), self.cfg.batch_size):
                    wav, lengths = pad_batch(valid_feats[start:start + self.cfg.batch_size])
                    batch_refs = valid_refs[start:start + self.cfg.batch_size]
                    log_probs, frame_lengths = model(wav, lengths)
                    valid_losses.append(float(batch_ctc_loss(log_probs, frame_lengths, batch_refs)) * len(batch_refs))
                    hyps.extend(model.recognize(wav, lengths))
            valid_cer = corpus_cer(valid_refs, hyps)
            row = {"epoch": epoch, "train_loss": float(np.mean(losses)),
                   "valid_loss": sum(valid_losses) / max(len(valid_feats), 1), "valid_cer": valid_cer}
            rows.append(row)
            logger.info(f"SSL-CTC epoch {epoch}: train {row['train_loss']:.4f} CER {valid_cer:.4f}")
            path = save(epoch, tags=("best",) if valid_cer < best else ())
            if valid_cer < best:
                best = valid_cer
                self.mark_best(path)
            pd.DataFrame(rows, columns=list(self.ctc_curve_columns)).to_csv(self.run_dir / "ctc_curves.csv", index=False)
        return model, pd.DataFrame(rows, columns=list(self.ctc_curve_columns))

    def train(self) -> Tuple[pd.DataFrame, pd.DataFrame]:
        pretrain_curves = self.pretrain()
        reader = CheckpointReader(self.ckpt_dir / "pretrain_best.pt")
        _, ctc_curves = self.asr_finetune(reader)
        return pretrain_curves, ctc_curves
