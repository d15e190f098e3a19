from dataclasses import asdict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from src.adguardian import logger
from src.adguardian.components.asr_model import EncoderStack, make_pad_mask
from src.adguardian.components.ctc import greedy_ctc_decode
from src.adguardian.entity.artifact_entity import MaskPlan
from src.adguardian.entity.config_entity import SslModelConfig
from src.adguardian.utils.exceptions import FrontendError


def conv_output_length(n_samples: int, kernels: Sequence[int], strides: Sequence[int]) -> int:
    """Frames after the valid (unpadded) convolution stack; 0 if the input is too short."""
    length = n_samples
    for k, s in zip(kernels, strides):
        if length < k:
            return 0
        length = (length - k) // s + 1
    return length


def receptive_field(kernels: Sequence[int], strides: Sequence[int]) -> int:
    field, jump = 1, 1
    for k, s in zip(kernels, strides):
        field += (k - 1) * jump
        jump *= s
    return field


class FeatureEncoder(nn.Module):
    """Strided 1-D convolutions from raw waveform to latent frames Z."""

    def __init__(self, conv_dim: int, kernels: Sequence[int], strides: Sequence[int]):
        super().__init__()
        self.kernels, self.strides = tuple(kernels), tuple(strides)
        blocks, in_dim = [], 1
        for i, (k, s) in enumerate(zip(kernels, strides)):
            layers = [nn.Conv1d(in_dim, conv_dim, k, s, bias=False)]
            if i == 0:
                layers.append(nn.GroupNorm(conv_dim, conv_dim, affine=True))
            layers.append(nn.GELU())
            blocks.append(nn.Sequential(*layers))
            in_dim = conv_dim
        self.blocks = nn.ModuleList(blocks)

    @property
    def receptive_field(self) -> int:
        return receptive_field(self.kernels, self.strides)

    def output_lengths(self, lengths: torch.Tensor) -> torch.Tensor:
        return torch.tensor([conv_output_length(int(n), self.kernels, self.strides) for n in lengths],
                            dtype=torch.long)

    def forward(self, wav: torch.Tensor) -> torch.Tensor:
        if wav.size(-1) < self.receptive_field:
            raise FrontendError(f"feature encoder needs at least {self.receptive_field} samples, got {wav.size(-1)}")
        x = wav.unsqueeze(1)
        for block in self.blocks:
            x = block(x)
        return x.transpose(1, 2)


class ContextEncoder(nn.Module):
    """Projection of latent frames, convolutional positions, then the transformer stack (C)."""

    def __init__(self, config: SslModelConfig):
        super().__init__()
        self.layer_norm = nn.LayerNorm(config.conv_dim)
        self.proj = nn.Linear(config.conv_dim, config.d_model)
        self.dropout = nn.Dropout(config.dropout)
        self.pos_conv = nn.Conv1d(config.d_model, config.d_model, kernel_size=15, padding=7, groups=config.heads)
        self.pos_norm = nn.LayerNorm(config.d_model)
        self.stack = EncoderStack(config.d_model, config.heads, config.ff_dim, config.layers, config.dropout)

    def project(self, latents: torch.Tensor) -> torch.Tensor:
        return self.dropout(self.proj(self.layer_norm(latents)))

    def forward(self, x: torch.Tensor, pad_mask: Optional[torch.Tensor] = None) -> List[torch.Tensor]:
        x = x + F.gelu(self.pos_conv(x.transpose(1, 2))).transpose(1, 2)
        x = self.dropout(self.pos_norm(x))
        return self.stack(x, pad_mask)


class GumbelVectorQuantizer(nn.Module):
    """
    G codebooks of V entries; a frame's target is the concatenation of one entry per group.

    Training uses straight-through Gumbel-softmax at the annealed temperature, evaluation a
    hard argmax.
    """

    def __init__(self, input_dim: int, groups: int, entries: int, codevector_dim: int,
                 temperature: Tuple[float, float, float]):
        super().__init__()
        if codevector_dim % groups:
            raise ValueError("codevector_dim must be divisible by the number of groups")
        self.groups, self.entries = groups, entries
        self.vars = nn.Parameter(torch.empty(1, groups * entries, codevector_dim // groups))
        nn.init.uniform_(self.vars)
        self.weight_proj = nn.Linear(input_dim, groups * entries)
        nn.init.normal_(self.weight_proj.weight, mean=0, std=1)
        nn.init.zeros_(self.weight_proj.bias)
        self.max_temp, self.min_temp, self.temp_decay = temperature
        self.curr_temp = self.max_temp

    @property
    def num_vars(self) -> int:
        return self.groups * self.entries

    def set_num_updates(self, num_updates: int) -> float:
        self.curr_temp = max(self.max_temp * self.temp_decay ** num_updates, self.min_temp)
        return self.curr_temp

    def forward(self, x: torch.Tensor, pad_mask: Optional[torch.Tensor] = None) -> Dict[str, torch.Tensor]:
        """`pad_mask` (B, T) is True at padded frames; those frames are left out of both perplexities."""
        bsz, tsz, fsz = x.shape
        logits = self.weight_proj(x.reshape(-1, fsz)).view(bsz * tsz * self.groups, -1)
        valid = torch.ones(bsz * tsz, dtype=torch.bool, device=x.device)
        if pad_mask is not None:
            valid = ~pad_mask.reshape(-1).to(x.device)

        _, k = logits.max(-1)
        hard = logits.new_zeros(logits.shape).scatter_(-1, k.view(-1, 1), 1.0).view(bsz * tsz, self.groups, -1)
        hard_probs = hard[valid].float().mean(dim=0)
        code_perplexity = torch.exp(-torch.sum(hard_probs * torch.log(hard_probs + 1e-7), dim=-1)).sum()

        avg_probs = torch.softmax(logits.view(bsz * tsz, self.groups, -1)[valid].float(), dim=-1).mean(dim=0)
        prob_perplexity = torch.exp(-torch.sum(avg_probs * torch.log(avg_probs + 1e-7), dim=-1)).sum()

        if self.training:
            onehot = F.gumbel_softmax(logits.float(), tau=self.curr_temp, hard=True).type_as(logits)
        else:
            onehot = hard
        onehot = onehot.view(bsz * tsz, -1)
        q = (onehot.unsqueeze(-1) * self.vars).view(bsz * tsz, self.groups, self.entries, -1).sum(-2)
        return {
            "x": q.view(bsz, tsz, -1),
            "targets": k.view(bsz, tsz, self.groups),
            "code_perplexity": code_perplexity,
            "prob_perplexity": prob_perplexity,
            "temp": torch.tensor(self.curr_temp),
        }


class ContrastiveHead(nn.Module):
    """Pre-training-only parts: the mask embedding and the two output projections."""

    def __init__(self, config: SslModelConfig):
        super().__init__()
        self.mask_emb = nn.Parameter(torch.empty(config.d_model).uniform_())
        self.project_q = nn.Linear(config.codevector_dim, config.codevector_dim)
        self.final_proj = nn.Linear(config.d_model, config.codevector_dim)


# --------------------------------------------------------------------------- masking
def sample_masks(n_frames: int, mask_prob: float, mask_length: int, rng: np.random.Generator,
                 force_span: bool = True) -> MaskPlan:
    """
    Every frame starts a span of `mask_length` frames with probability `mask_prob`; spans
    are clipped at the end. With `force_span`, an empty draw is replaced by one span at a
    uniform start.
    """
    starts = np.flatnonzero(rng.random(n_frames) < mask_prob)
    forced = False
    if starts.size == 0 and force_span and n_frames > 0:
        starts = np.array([int(rng.integers(0, max(n_frames - mask_length, 0) + 1))])
        forced = True
    mask = np.zeros(n_frames, dtype=bool)
    for s in starts:
        mask[s:s + mask_length] = True
    return MaskPlan(mask_prob=mask_prob, mask_length=mask_length, mask=mask, starts=starts, forced=forced)


def sample_negatives(masked_idx: np.ndarray, num_negatives: int, rng: np.random.Generator) -> np.ndarray:
    """
    For every masked frame, `K` distinct other masked frames of the same utterance.

    K shrinks to (#masked - 1) when fewer candidates exist.
    """
    n = masked_idx.size
    k = min(num_negatives, max(n - 1, 0))
    if k < num_negatives:
        logger.warning(f"Only {n} masked frames: distractors reduced from {num_negatives} to {k}")
    out = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        others = np.delete(masked_idx, i)
        out[i] = rng.choice(others, size=k, replace=False) if k else others[:0]
    return out


def contrastive_loss(context: torch.Tensor, quantized: torch.Tensor, mask: np.ndarray, num_negatives: int,
                     temperature: float, rng: Optional[np.random.Generator] = None,
                     negatives: Optional[np.ndarray] = None, reduction: str = "mean") -> torch.Tensor:
    """
    Masked contrastive loss of one utterance; context and quantized are (T, d).

    For each masked t: cross-entropy of cosine similarities / temperature, with the true
    q_t at index 0 and distractors from other masked frames. Without masked frames the
    result is a zero that still carries (zero) gradients.
    """
    masked_idx = np.flatnonzero(np.asarray(mask))
    if masked_idx.size == 0:
        return (context.sum() + quantized.sum()) * 0.0
    if negatives is None:
        negatives = sample_negatives(masked_idx, num_negatives, rng or np.random.default_rng(0))
    idx = torch.as_tensor(masked_idx, dtype=torch.long)
    neg = torch.as_tensor(negatives, dtype=torch.long)

    c = context[idx]                                           # (M, d)
    candidates = torch.cat([quantized[idx].unsqueeze(1), quantized[neg]], dim=1)  # (M, K+1, d)
    logits = F.cosine_similarity(c.unsqueeze(1), candidates, dim=-1) / temperature
    target = torch.zeros(logits.size(0), dtype=torch.long)
    return F.cross_entropy(logits, target, reduction=reduction)


def diversity_loss(prob_perplexity: torch.Tensor, num_vars: int) -> torch.Tensor:
    return (num_vars - prob_perplexity) / num_vars


# --------------------------------------------------------------------------- models
class SslEncoder(nn.Module):
    """The kept part of the SSL stack: waveform in, per-layer context sequences out."""

    input_kind = "waveform"

    def __init__(self, config: SslModelConfig):
        super().__init__()
        self.config = config
        self.d_model = config.d_model
        self.n_layers = config.layers
        self.feature_encoder = FeatureEncoder(config.conv_dim, config.conv_kernels, config.conv_strides)
        self.context_encoder = ContextEncoder(config)

    @property
    def min_input_units(self) -> int:
        return self.feature_encoder.receptive_field

    def feature_encode(self, wav: torch.Tensor) -> torch.Tensor:
        return self.feature_encoder(wav)

    def forward(self, wav: torch.Tensor, lengths: torch.Tensor) -> Tuple[List[torch.Tensor], torch.Tensor]:
        latents = self.feature_encoder(wav)
        frame_lengths = self.feature_encoder.output_lengths(lengths).to(latents.device)
        x = self.context_encoder.project(latents)
        pad_mask = make_pad_mask(frame_lengths, x.size(1))
        hiddens = self.context_encoder(x, pad_mask if bool(pad_mask.any()) else None)
        return hiddens, frame_lengths


class Wav2VecModel(nn.Module):
    """Feature encoder + context encoder + quantizer, trained by masked contrastive prediction."""

    def __init__(self, config: SslModelConfig):
        super().__init__()
        self.config = config
        self.encoder = SslEncoder(config)
        self.quantizer = GumbelVectorQuantizer(config.conv_dim, config.codebook_groups, config.codebook_entries,
                                               config.codevector_dim, tuple(config.gumbel_temperature))
        self.head = ContrastiveHead(config)

    def modules_for_checkpoint(self) -> Dict[str, nn.Module]:
        return {
            "feature_encoder": self.encoder.feature_encoder,
            "context_encoder": self.encoder.context_encoder,
            "quantizer": self.quantizer,
            "contrastive_head": self.head,
        }

    def forward(self, wav: torch.Tensor, lengths: torch.Tensor, masks: Sequence[np.ndarray]):
        """Returns projected context, projected quantized targets, frame lengths and the quantizer output."""
        latents = self.encoder.feature_encoder(wav)
        frame_lengths = self.encoder.feature_encoder.output_lengths(lengths).to(latents.device)
        mask = torch.zeros(latents.shape[:2], dtype=torch.bool, device=latents.device)
        for i, m in enumerate(masks):
            mask[i, :len(m)] = torch.as_tensor(m[:latents.size(1)])

        pad_mask = make_pad_mask(frame_lengths, latents.size(1))
        quant = self.quantizer(latents, pad_mask)
        x = self.encoder.context_encoder.project(latents)
        x = torch.where(mask.unsqueeze(-1), self.head.mask_emb.to(x.dtype), x)
        context = self.encoder.context_encoder(x, pad_mask if bool(pad_mask.any()) else None)[-1]
        return {
            "context": self.head.final_proj(context),
            "quantized": self.head.project_q(quant["x"]),
            "frame_lengths": frame_lengths,
            "quantizer": quant,
        }

    def pretrain_loss(self, wav: torch.Tensor, lengths: torch.Tensor, masks: Sequence[np.ndarray],
                      num_negatives: int, temperature: float, diversity_weight: float,
                      rng: np.random.Generator) -> Dict[str, torch.Tensor]:
        """Contrastive loss averaged over every masked frame of the batch, plus the weighted diversity term."""
        out = self.forward(wav, lengths, masks)
        total, n_masked = out["context"].new_zeros(()), 0
        for i, m in enumerate(masks):
            n = int(out["frame_lengths"][i])
            m = np.asarray(m[:n])
            total = total + contrastive_loss(out["context"][i, :n], out["quantized"][i, :n], m, num_negatives,
                                             temperature, rng, reduction="sum")
            n_masked += int(m.sum())
        contrastive = total / max(n_masked, 1)
        diversity = diversity_loss(out["quantizer"]["prob_perplexity"], self.quantizer.num_vars)
        return {
            "loss": contrastive + diversity_weight * diversity,
            "contrastive": contrastive,
            "diversity": diversity,
            "prob_perplexity": out["quantizer"]["prob_perplexity"],
            "code_perplexity": out["quantizer"]["code_perplexity"],
        }

    def model_config(self) -> dict:
        return asdict(self.config)


class SslCtcModel(nn.Module):
    """Pre-trained SSL encoder plus a randomly initialised projection to CTC vocabulary logits."""

    def __init__(self, config: SslModelConfig, odim: int, encoder: Optional[SslEncoder] = None):
        super().__init__()
        self.config = config
        self.odim = odim
        self.encoder = encoder if encoder is not None else SslEncoder(config)
        self.projection = nn.Linear(config.d_model, odim)

    def modules_for_checkpoint(self) -> Dict[str, nn.Module]:
        return {
            "feature_encoder": self.encoder.feature_encoder,
            "context_encoder": self.encoder.context_encoder,
            "projection": self.projection,
        }

    def forward(self, wav: torch.Tensor, lengths: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        hiddens, frame_lengths = self.encoder(wav, lengths)
        return F.log_softmax(self.projection(hiddens[-1]), dim=-1), frame_lengths

    @torch.no_grad()
    def recognize(self, wav: torch.Tensor, lengths: torch.Tensor) -> List[List[int]]:
        log_probs, frame_lengths = self.forward(wav, lengths)
        return [greedy_ctc_decode(log_probs[i, :int(frame_lengths[i])]) for i in range(log_probs.size(0))]
