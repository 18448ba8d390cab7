"""Conformer encoder with convolutional x4 subsampling and a CTC head."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from . import numerics as nx


@dataclass
class EncoderConfig:
    num_blocks: int = 2
    attn_dim: int = 64
    num_heads: int = 4
    ffn_dim: int = 256
    depthwise_kernel: int = 15
    dropout: float = 0.1
    block_kind: str = "conformer"  # or "transformer"
    n_mels: int = 40

    def __post_init__(self):
        if self.attn_dim % self.num_heads:
            raise ValueError(
                f"attn_dim {self.attn_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.depthwise_kernel % 2 == 0:
            raise ValueError(f"depthwise_kernel must be odd, got {self.depthwise_kernel}")
        if self.block_kind not in ("conformer", "transformer"):
            raise ValueError(f"unknown block_kind {self.block_kind!r}")
        if self.num_blocks < 0:
            raise ValueError("num_blocks must be non-negative")


@dataclass
class EncoderOutput:
    states: torch.Tensor  # [B, T', d]
    valid_lens: torch.Tensor  # [B] int64
    ctc_logprobs: torch.Tensor  # [B, T', V]

    @property
    def mask(self) -> torch.Tensor:
        return length_mask(self.valid_lens, self.states.shape[1])


MIN_FRAMES = 7


def length_mask(lens: torch.Tensor, t: int) -> torch.Tensor:
    """``[B, t]`` bool, True at valid positions."""
    return torch.arange(t)[None, :] < lens[:, None]


def subsampled_length(t):
    """Frames left after two kernel-3 stride-2 unpadded convolutions."""
    for _ in range(2):
        t = (t - 3) // 2 + 1
    return t


def sinusoidal_encoding(t: int, d: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(t, dtype=torch.float64)[:, None]
    div = torch.exp(torch.arange(0, d, 2, dtype=torch.float64) * (-math.log(10000.0) / d))
    pe = torch.zeros(t, d, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div[: d // 2])
    return pe.to(dtype)


class Dropout(nn.Module):
    """Dropout drawing masks from an explicitly attached generator."""

    def __init__(self, p: float):
        super().__init__()
        self.p = p
        self.generator: torch.Generator | None = None

    def forward(self, x):
        return nx.dropout(x, self.p, self.training, self.generator)


class MaskedBatchNorm1d(nn.Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.register_buffer("running_mean", torch.zeros(channels))
        self.register_buffer("running_var", torch.ones(channels))
        self.momentum = momentum
        self.eps = eps

    def forward(self, x, mask=None):
        return nx.batch_norm(
            x, self.running_mean, self.running_var, self.weight, self.bias,
            training=self.training, momentum=self.momentum, eps=self.eps, mask=mask,
        )


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention. The last weights are kept on ``self.weights``."""

    def __init__(self, d: int, heads: int, dropout: float):
        super().__init__()
        self.h = heads
        self.dk = d // heads
        self.q = nn.Linear(d, d)
        self.k = nn.Linear(d, d)
        self.v = nn.Linear(d, d)
        self.out = nn.Linear(d, d)
        self.drop = Dropout(dropout)
        self.weights: torch.Tensor | None = None

    def forward(self, query, memory, key_mask=None, causal=False):
        b, tq, d = query.shape
        tk = memory.shape[1]
        q = self.q(query).view(b, tq, self.h, self.dk).transpose(1, 2)
        k = self.k(memory).view(b, tk, self.h, self.dk).transpose(1, 2)
        v = self.v(memory).view(b, tk, self.h, self.dk).transpose(1, 2)
        scores = nx.matmul(q, k.transpose(-2, -1)) / math.sqrt(self.dk)
        blocked = torch.zeros(b, 1, tq, tk, dtype=torch.bool)
        if key_mask is not None:
            blocked = blocked | ~key_mask[:, None, None, :]
        if causal:
            blocked = blocked | torch.ones(tq, tk, dtype=torch.bool).triu(1)
        scores = nx.masked_fill(scores, blocked, float("-inf"))
        attn = nx.softmax(scores, dim=-1)
        self.weights = attn.detach()
        ctx = nx.matmul(self.drop(attn), v).transpose(1, 2).reshape(b, tq, d)
        return self.out(ctx)


class FeedForward(nn.Module):
    def __init__(self, d: int, hidden: int, dropout: float, activation: str = "swish"):
        super().__init__()
        self.w1 = nn.Linear(d, hidden)
        self.w2 = nn.Linear(hidden, d)
        self.act = nx.swish if activation == "swish" else nx.relu
        self.drop1 = Dropout(dropout)
        self.drop2 = Dropout(dropout)

    def forward(self, x):
        return self.drop2(self.w2(self.drop1(self.act(self.w1(x)))))


class ConvModule(nn.Module):
    """LN -> pointwise(2d) -> GLU -> depthwise -> BN -> swish -> pointwise -> dropout."""

    def __init__(self, d: int, kernel: int, dropout: float):
        super().__init__()
        self.norm = nn.LayerNorm(d)
        self.pw1 = nn.Parameter(torch.empty(2 * d, d, 1))
        self.pw1_bias = nn.Parameter(torch.zeros(2 * d))
        self.dw = nn.Parameter(torch.empty(d, 1, kernel))
        self.dw_bias = nn.Parameter(torch.zeros(d))
        self.bn = MaskedBatchNorm1d(d)
        self.pw2 = nn.Parameter(torch.empty(d, d, 1))
        self.pw2_bias = nn.Parameter(torch.zeros(d))
        self.drop = Dropout(dropout)

    def forward(self, x, mask):
        y = self.norm(x).transpose(1, 2)  # [B, d, T]
        y = nx.glu(nx.pointwise_conv1d(y, self.pw1, self.pw1_bias), dim=1)
        # zero the padding so it cannot leak through the depthwise kernel
        y = nx.masked_fill(y, ~mask[:, None, :], 0.0)
        y = nx.depthwise_conv1d(y, self.dw, self.dw_bias)
        y = nx.swish(self.bn(y, mask))
        y = nx.pointwise_conv1d(y, self.pw2, self.pw2_bias)
        return self.drop(y.transpose(1, 2))


class ConformerBlock(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        d = cfg.attn_dim
        self.ff1_norm = nn.LayerNorm(d)
        self.ff1 = FeedForward(d, cfg.ffn_dim, cfg.dropout, "swish")
        self.att_norm = nn.LayerNorm(d)
        self.att = MultiHeadAttention(d, cfg.num_heads, cfg.dropout)
        self.att_drop = Dropout(cfg.dropout)
        self.conv = ConvModule(d, cfg.depthwise_kernel, cfg.dropout)
        self.ff2_norm = nn.LayerNorm(d)
        self.ff2 = FeedForward(d, cfg.ffn_dim, cfg.dropout, "swish")
        self.final_norm = nn.LayerNorm(d)

    def forward(self, x, mask):
        x = x + 0.5 * self.ff1(self.ff1_norm(x))
        h = self.att_norm(x)
        x = x + self.att_drop(self.att(h, h, key_mask=mask))
        x = x + self.conv(x, mask)
        x = x + 0.5 * self.ff2(self.ff2_norm(x))
        return self.final_norm(x)


class TransformerBlock(nn.Module):
    """Pre-norm self-attention + ReLU feed-forward (the non-conformer ablation)."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        d = cfg.attn_dim
        self.att_norm = nn.LayerNorm(d)
        self.att = MultiHeadAttention(d, cfg.num_heads, cfg.dropout)
        self.att_drop = Dropout(cfg.dropout)
        self.ff_norm = nn.LayerNorm(d)
        self.ff = FeedForward(d, cfg.ffn_dim, cfg.dropout, "relu")

    def forward(self, x, mask):
        h = self.att_norm(x)
        x = x + self.att_drop(self.att(h, h, key_mask=mask))
        return x + self.ff(self.ff_norm(x))


class Conv2dSubsampling(nn.Module):
    def __init__(self, n_mels: int, d: int):
        super().__init__()
        self.conv1_w = nn.Parameter(torch.empty(d, 1, 3, 3))
        self.conv1_b = nn.Parameter(torch.zeros(d))
        self.conv2_w = nn.Parameter(torch.empty(d, d, 3, 3))
        self.conv2_b = nn.Parameter(torch.zeros(d))
        self.proj = nn.Linear(d * subsampled_length(n_mels), d)

    def forward(self, feats, lens):
        t = feats.shape[1]
        if t < MIN_FRAMES:
            raise ValueError(f"subsample: need at least {MIN_FRAMES} frames, got {t}")
        if int(lens.min()) < MIN_FRAMES:
            raise ValueError(
                f"subsample: utterance with {int(lens.min())} frames; minimum is {MIN_FRAMES}"
            )
        x = feats.unsqueeze(1)  # [B, 1, T, F]
        x = nx.relu(nx.conv2d(x, self.conv1_w, self.conv1_b, stride=2))
        x = nx.conv2d(x, self.conv2_w, self.conv2_b, stride=2)
        b, c, t2, f2 = x.shape
        x = self.proj(x.transpose(1, 2).reshape(b, t2, c * f2))
        return x, subsampled_length(lens)


class ConformerEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig, vocab_size: int):
        super().__init__()
        self.cfg = cfg
        self.subsample = Conv2dSubsampling(cfg.n_mels, cfg.attn_dim)
        self.pos_drop = Dropout(cfg.dropout)
        block = ConformerBlock if cfg.block_kind == "conformer" else TransformerBlock
        self.blocks = nn.ModuleList([block(cfg) for _ in range(cfg.num_blocks)])
        # conformer blocks end in their own layer norm
        self.after_norm = nn.LayerNorm(cfg.attn_dim) if cfg.block_kind == "transformer" else None
        self.ctc_head = nn.Linear(cfg.attn_dim, vocab_size)

    def forward(self, feats: torch.Tensor, lens: torch.Tensor) -> EncoderOutput:
        x, out_lens = self.subsample(feats, lens)
        x = self.pos_drop(x + sinusoidal_encoding(x.shape[1], x.shape[2], x.dtype))
        mask = length_mask(out_lens, x.shape[1])
        for blk in self.blocks:
            x = blk(x, mask)
        if self.after_norm is not None:
            x = self.after_norm(x)
        logprobs = nx.log_softmax(self.ctc_head(x), dim=-1)
        return EncoderOutput(x, out_lens, logprobs)

    def attention_modules(self) -> list[MultiHeadAttention]:
        return [b.att for b in self.blocks]
