from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

from src.adguardian import logger
from src.adguardian.components.asr_model import AsrEncoder, make_pad_mask
from src.adguardian.components.checkpoint import CheckpointReader
from src.adguardian.components.data_preprocessing import segment
from src.adguardian.components.ssl_model import SslEncoder
from src.adguardian.constants import CLASS_NAMES
from src.adguardian.entity.artifact_entity import AcousticSequence, SegmentationPolicy
from src.adguardian.entity.config_entity import AsrModelConfig, SslModelConfig
from src.adguardian.utils.exceptions import ConfigError

LAYER_SELECT = ("last", "concat_last3")

# checkpoint modules that make up each encoder family; nothing else is read
ENCODER_MODULES = {
    "ctc_attn": ("encoder",),
    "ssl": ("feature_encoder", "context_encoder"),
}


def select_layers(hiddens: List[torch.Tensor], layer_select: str) -> torch.Tensor:
    if layer_select == "last":
        return hiddens[-1]
    if layer_select == "concat_last3":
        if len(hiddens) < 3:
            raise ConfigError("Invalid layer selection", [f"concat_last3 needs >= 3 layers, encoder has {len(hiddens)}"])
        return torch.cat(hiddens[-3:], dim=-1)
    raise ConfigError("Invalid layer selection", [f"unknown layer_select {layer_select!r}"])


def masked_mean(x: torch.Tensor, lengths: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Temporal mean of (B, T, D) over the valid frames only."""
    if lengths is None:
        return x.mean(dim=1)
    valid = (~make_pad_mask(lengths.to(x.device), x.size(1))).unsqueeze(-1).to(x.dtype)
    return (x * valid).sum(dim=1) / valid.sum(dim=1).clamp(min=1.0)


class ClassifierHead(nn.Module):
    """Average pooling followed by a two-layer feed-forward network with 3 outputs."""

    def __init__(self, d_model: int, layer_select: str = "last", hidden_dim: int = 64, dropout: float = 0.1):
        super().__init__()
        if layer_select not in LAYER_SELECT:
            raise ConfigError("Invalid layer selection", [f"unknown layer_select {layer_select!r}"])
        self.layer_select = layer_select
        self.input_dim = d_model * (3 if layer_select == "concat_last3" else 1)
        self.ffn = nn.Sequential(
            nn.Linear(self.input_dim, hidden_dim),
            nn.ReLU(),
            nn.Dropout(dropout),
            nn.Linear(hidden_dim, len(CLASS_NAMES)),
        )

    def forward(self, pooled: torch.Tensor) -> torch.Tensor:
        return self.ffn(pooled)


def pool_and_classify(hiddens: List[torch.Tensor], head: ClassifierHead,
                      lengths: Optional[torch.Tensor] = None) -> torch.Tensor:
    frames = {h.size(1) for h in hiddens}
    if len(frames) != 1:
        raise ConfigError("Invalid encoder output", [f"layers disagree on frame count: {sorted(frames)}"])
    return head(masked_mean(select_layers(hiddens, head.layer_select), lengths))


def build_encoder(encoder: str, model_config: dict) -> nn.Module:
    if encoder == "ctc_attn":
        return AsrEncoder(AsrModelConfig(**model_config))
    if encoder == "ssl":
        cfg = dict(model_config)
        for key in ("conv_kernels", "conv_strides", "gumbel_temperature"):
            cfg[key] = tuple(cfg[key])
        return SslEncoder(SslModelConfig(**cfg))
    raise ConfigError("Invalid encoder family", [f"unknown encoder {encoder!r}"])


class AdClassifier(nn.Module):
    """Truncated pre-trained encoder + classification head."""

    def __init__(self, encoder_family: str, encoder: nn.Module, head: ClassifierHead, encoder_config: dict):
        super().__init__()
        self.encoder_family = encoder_family
        self.encoder = encoder
        self.head = head
        self.encoder_config = dict(encoder_config)

    @property
    def input_kind(self) -> str:
        return self.encoder.input_kind

    @property
    def min_input_units(self) -> int:
        return self.encoder.min_input_units

    def forward(self, inputs: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        hiddens, out_lengths = self.encoder(inputs, lengths)
        return pool_and_classify(hiddens, self.head, out_lengths)

    def encoder_modules(self) -> dict:
        if self.encoder_family == "ssl":
            return {"feature_encoder": self.encoder.feature_encoder, "context_encoder": self.encoder.context_encoder}
        return {"encoder": self.encoder}

    def head_config(self) -> dict:
        return {
            "encoder_family": self.encoder_family,
            "encoder_config": self.encoder_config,
            "layer_select": self.head.layer_select,
            "hidden_dim": self.head.ffn[0].out_features,
            "dropout": self.head.ffn[2].p,
        }

    @classmethod
    def build(cls, encoder_family: str, encoder_config: dict, layer_select: str, hidden_dim: int,
              dropout: float, checkpoint: Optional[CheckpointReader] = None) -> "AdClassifier":
        """
        Build the AD model; when a pre-training checkpoint is given only its encoder
        modules are read, the decoder/CTC/quantizer/projection weights are never touched.
        """
        if checkpoint is not None:
            encoder_config = checkpoint.model_config
            if encoder_family == "ctc_attn":
                encoder_config = {k: v for k, v in encoder_config.items() if k in AsrModelConfig.__dataclass_fields__}
            else:
                encoder_config = {k: v for k, v in encoder_config.items() if k in SslModelConfig.__dataclass_fields__}
        encoder = build_encoder(encoder_family, encoder_config)
        head = ClassifierHead(encoder.d_model, layer_select, hidden_dim, dropout)
        if layer_select == "concat_last3" and encoder.n_layers < 3:
            raise ConfigError("Invalid layer selection", [f"concat_last3 needs >= 3 layers, encoder has {encoder.n_layers}"])
        model = cls(encoder_family, encoder, head, encoder_config)
        if checkpoint is not None:
            missing = [m for m in ENCODER_MODULES[encoder_family] if m not in checkpoint.module_names]
            if missing:
                raise ConfigError(f"Checkpoint {checkpoint.path} does not hold a {encoder_family} encoder",
                                  [f"missing module {m}" for m in missing])
            for name, module in model.encoder_modules().items():
                checkpoint.load_into(name, module)
            logger.info(f"Encoder initialised from {checkpoint.path} ({checkpoint.kind})")
        return model

    @classmethod
    def from_ad_checkpoint(cls, reader: CheckpointReader) -> "AdClassifier":
        cfg = reader.model_config
        model = cls.build(cfg["encoder_family"], cfg["encoder_config"], cfg["layer_select"], cfg["hidden_dim"],
                          cfg["dropout"])
        for name, module in model.encoder_modules().items():
            reader.load_into(name, module)
        reader.load_into("head", model.head)
        return model


def freeze(module: nn.Module) -> int:
    """Turn off gradients; returns the number of frozen parameters."""
    count = 0
    for p in module.parameters():
        p.requires_grad_(False)
        count += p.numel()
    return count


def batch_logits(model: AdClassifier, batch: List[torch.Tensor]) -> Tuple[torch.Tensor, torch.Tensor]:
    """Pad a list of 1-D waveforms or (T, n_mels) feature matrices and run the model."""
    lengths = torch.tensor([b.size(0) for b in batch], dtype=torch.long)
    padded = nn.utils.rnn.pad_sequence(batch, batch_first=True)
    return model(padded, lengths), lengths


def to_tensor(seq: AcousticSequence, min_units: int) -> torch.Tensor:
    data = seq.data
    if data.shape[0] < min_units:
        pad = [(0, min_units - data.shape[0])] + [(0, 0)] * (data.ndim - 1)
        data = np.pad(data, pad, constant_values=0.0 if seq.kind == "waveform" else float(data.min()))
    return torch.as_tensor(data, dtype=torch.float32)


@torch.no_grad()
def predict_sequences(model: AdClassifier, items: Sequence[Tuple[str, AcousticSequence]],
                      segmentation: Optional[SegmentationPolicy] = None,
                      batch_size: int = 32) -> Tuple[List[str], List[int], np.ndarray]:
    """
    Segment-level class probabilities for (sample_id, sequence) pairs.

    Returns the sample id and segment index of every row plus the (N, 3) probability matrix.
    A sample whose segmentation yields nothing is scored once over its full length.
    """
    model.eval()
    ids, index, tensors = [], [], []
    for sample_id, seq in items:
        pieces = segment(seq, segmentation) if segmentation is not None else [seq]
        for k, piece in enumerate(pieces or [seq]):
            ids.append(sample_id)
            index.append(k)
            tensors.append(to_tensor(piece, model.min_input_units))
    probs = []
    for start in range(0, len(tensors), batch_size):
        logits, _ = batch_logits(model, tensors[start:start + batch_size])
        probs.append(torch.softmax(logits.double(), dim=-1).cpu().numpy())
    matrix = np.concatenate(probs) if probs else np.zeros((0, len(CLASS_NAMES)))
    return ids, index, matrix
