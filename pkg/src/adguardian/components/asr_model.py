import math
from dataclasses import asdict
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from src.adguardian.components.ctc import batch_ctc_loss, greedy_ctc_decode
from src.adguardian.entity.artifact_entity import AcousticSequence, JointLossConfig
from src.adguardian.entity.config_entity import AsrModelConfig
from src.adguardian.utils.exceptions import FrontendError

IGNORE_ID = -1


def make_pad_mask(lengths: torch.Tensor, max_len: Optional[int] = None) -> torch.Tensor:
    """True at padded positions, shape (B, max_len)."""
    max_len = int(max_len or lengths.max().item())
    return torch.arange(max_len, device=lengths.device)[None, :] >= lengths[:, None]


class PositionalEncoding(nn.Module):
    """Sinusoidal positions added to inputs scaled by sqrt(d)."""

    def __init__(self, d_model: int, dropout: float, max_len: int = 5000):
        super().__init__()
        self.d_model = d_model
        self.xscale = math.sqrt(d_model)
        self.dropout = nn.Dropout(dropout)
        self.register_buffer("pe", self._table(max_len), persistent=False)

    def _table(self, length: int) -> torch.Tensor:
        pe = torch.zeros(length, self.d_model)
        position = torch.arange(length, dtype=torch.float32).unsqueeze(1)
        div_term = torch.exp(torch.arange(0, self.d_model, 2, dtype=torch.float32)
                             * -(math.log(10000.0) / self.d_model))
        pe[:, 0::2] = torch.sin(position * div_term)
        pe[:, 1::2] = torch.cos(position * div_term)
        return pe.unsqueeze(0)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.size(1) > self.pe.size(1):
            self.pe = self._table(x.size(1)).to(x.device)
        return self.dropout(x * self.xscale + self.pe[:, :x.size(1)].to(x.dtype))


class Conv2dSubsampling(nn.Module):
    """Two stride-2 convolutions: T frames become ceil(T / 4)."""

    def __init__(self, idim: int, d_model: int, dropout: float):
        super().__init__()
        self.conv = nn.Sequential(
            nn.Conv2d(1, d_model, 3, 2, padding=1),
            nn.ReLU(),
            nn.Conv2d(d_model, d_model, 3, 2, padding=1),
            nn.ReLU(),
        )
        freq = ((idim + 1) // 2 + 1) // 2
        self.out = nn.Linear(d_model * freq, d_model)
        self.pos = PositionalEncoding(d_model, dropout)

    @staticmethod
    def output_lengths(lengths: torch.Tensor) -> torch.Tensor:
        return ((lengths + 1) // 2 + 1) // 2

    def forward(self, x: torch.Tensor, lengths: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        x = self.conv(x.unsqueeze(1))
        b, c, t, f = x.size()
        x = self.out(x.transpose(1, 2).contiguous().view(b, t, c * f))
        return self.pos(x), self.output_lengths(lengths)


class EncoderStack(nn.Module):
    """Self-attention blocks exposing every layer's hidden sequence."""

    def __init__(self, d_model: int, heads: int, ff_dim: int, layers: int, dropout: float):
        super().__init__()
        self.layers = nn.ModuleList([
            nn.TransformerEncoderLayer(d_model, heads, ff_dim, dropout, batch_first=True)
            for _ in range(layers)
        ])

    def forward(self, x: torch.Tensor, pad_mask: Optional[torch.Tensor] = None) -> List[torch.Tensor]:
        hiddens = []
        for layer in self.layers:
            x = layer(x, src_key_padding_mask=pad_mask)
            hiddens.append(x)
        return hiddens


class AsrEncoder(nn.Module):
    """Shared encoder of the joint CTC-attention model: log-mel frames in, per-layer hiddens out."""

    input_kind = "logmel"
    min_input_units = 4

    def __init__(self, config: AsrModelConfig):
        super().__init__()
        self.d_model = config.d_model
        self.n_layers = config.layers
        self.embed = Conv2dSubsampling(config.n_mels, config.d_model, config.dropout)
        self.stack = EncoderStack(config.d_model, config.heads, config.ff_dim, config.layers, config.dropout)

    def forward(self, feats: torch.Tensor, lengths: torch.Tensor) -> Tuple[List[torch.Tensor], torch.Tensor]:
        if feats.size(1) < self.min_input_units:
            raise FrontendError(f"encoder needs at least {self.min_input_units} frames, got {feats.size(1)}")
        x, out_lengths = self.embed(feats, lengths)
        pad_mask = make_pad_mask(out_lengths, x.size(1))
        return self.stack(x, pad_mask if bool(pad_mask.any()) else None), out_lengths


class AttentionDecoder(nn.Module):
    """Single-layer transformer decoder fed the reference prefix during training."""

    def __init__(self, odim: int, d_model: int, heads: int, ff_dim: int, dropout: float):
        super().__init__()
        self.embed = nn.Embedding(odim, d_model)
        self.pos = PositionalEncoding(d_model, dropout)
        self.layer = nn.TransformerDecoderLayer(d_model, heads, ff_dim, dropout, batch_first=True)
        self.norm = nn.LayerNorm(d_model)
        self.out = nn.Linear(d_model, odim)

    def forward(self, ys_in: torch.Tensor, memory: torch.Tensor, memory_pad_mask: Optional[torch.Tensor],
                ys_pad_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        L = ys_in.size(1)
        causal = torch.triu(torch.ones(L, L, dtype=torch.bool, device=ys_in.device), diagonal=1)
        x = self.layer(self.pos(self.embed(ys_in)), memory, tgt_mask=causal,
                       tgt_key_padding_mask=ys_pad_mask, memory_key_padding_mask=memory_pad_mask)
        return self.out(self.norm(x))


def add_sos_eos(ys: Sequence[Sequence[int]], sos: int, eos: int) -> Tuple[torch.Tensor, torch.Tensor]:
    """Decoder input `<sos> y` padded with eos, target `y <eos>` padded with IGNORE_ID."""
    max_len = max(len(y) for y in ys) + 1
    ys_in = torch.full((len(ys), max_len), eos, dtype=torch.long)
    ys_out = torch.full((len(ys), max_len), IGNORE_ID, dtype=torch.long)
    for i, y in enumerate(ys):
        y = torch.tensor(list(y), dtype=torch.long)
        ys_in[i, 0] = sos
        ys_in[i, 1:len(y) + 1] = y
        ys_out[i, :len(y)] = y
        ys_out[i, len(y)] = eos
    return ys_in, ys_out


class JointCTCAttentionModel(nn.Module):
    """
    Shared encoder + CTC head + attention decoder.

    Output classes: 0 is the CTC blank, 1..n the tokens, n + 1 doubles as <sos>/<eos>.
    """

    def __init__(self, config: AsrModelConfig):
        super().__init__()
        self.config = config
        self.odim = config.vocab_size
        self.sos = self.eos = config.vocab_size - 1
        self.encoder = AsrEncoder(config)
        self.ctc = nn.Linear(config.d_model, config.vocab_size)
        self.decoder = AttentionDecoder(config.vocab_size, config.d_model, config.heads, config.ff_dim, config.dropout)

    def encode(self, feats: torch.Tensor, lengths: torch.Tensor) -> Tuple[List[torch.Tensor], torch.Tensor]:
        return self.encoder(feats, lengths)

    def ctc_log_probs(self, enc_out: torch.Tensor) -> torch.Tensor:
        return F.log_softmax(self.ctc(enc_out), dim=-1)

    def attention_loss(self, enc_out: torch.Tensor, enc_lengths: torch.Tensor, references: Sequence[Sequence[int]],
                       label_smoothing: float) -> torch.Tensor:
        ys_in, ys_out = add_sos_eos(references, self.sos, self.eos)
        ys_in, ys_out = ys_in.to(enc_out.device), ys_out.to(enc_out.device)
        mem_mask = make_pad_mask(enc_lengths, enc_out.size(1))
        logits = self.decoder(ys_in, enc_out, mem_mask, ys_pad_mask=(ys_out == IGNORE_ID) & (ys_in == self.eos))
        loss = F.cross_entropy(logits.reshape(-1, self.odim), ys_out.reshape(-1), ignore_index=IGNORE_ID,
                               label_smoothing=label_smoothing, reduction="sum")
        return loss / len(references)

    def joint_loss(self, enc_out: torch.Tensor, enc_lengths: torch.Tensor, references: Sequence[Sequence[int]],
                   loss_cfg: JointLossConfig) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """lambda * CTC + (1 - lambda) * label-smoothed attention CE, both normalised by batch size."""
        loss_ctc = batch_ctc_loss(self.ctc_log_probs(enc_out), enc_lengths, [list(r) for r in references])
        loss_att = self.attention_loss(enc_out, enc_lengths, references, loss_cfg.label_smoothing)
        lam = loss_cfg.ctc_weight
        return lam * loss_ctc + (1.0 - lam) * loss_att, loss_ctc, loss_att

    def forward(self, feats: torch.Tensor, lengths: torch.Tensor, references: Sequence[Sequence[int]],
                loss_cfg: JointLossConfig):
        hiddens, enc_lengths = self.encode(feats, lengths)
        return self.joint_loss(hiddens[-1], enc_lengths, references, loss_cfg)

    @torch.no_grad()
    def recognize(self, feats: torch.Tensor, lengths: torch.Tensor) -> List[List[int]]:
        hiddens, enc_lengths = self.encode(feats, lengths)
        log_probs = self.ctc_log_probs(hiddens[-1])
        return [greedy_ctc_decode(log_probs[i, :int(enc_lengths[i])]) for i in range(log_probs.size(0))]

    def model_config(self) -> dict:
        return asdict(self.config)


def encode(model: nn.Module, seq: AcousticSequence) -> List[torch.Tensor]:
    """
    Per-layer hidden sequences of one log-mel sequence, each (ceil(frames / 4), d).

    Runs in eval mode so dropout is off; the module's previous mode is restored afterwards.
    """
    if seq.kind != "logmel":
        raise FrontendError("the CTC-attention encoder consumes log-mel sequences")
    encoder = model.encoder if isinstance(model, JointCTCAttentionModel) else model
    feats = torch.as_tensor(seq.data, dtype=torch.float32).unsqueeze(0)
    lengths = torch.tensor([seq.length])
    was_training = encoder.training
    encoder.eval()
    try:
        with torch.no_grad():
            hiddens, _ = encoder(feats, lengths)
    finally:
        encoder.train(was_training)
    return [h[0] for h in hiddens]
