"""Autoregressive transformer decoders (phoneme and grapheme) over encoder states."""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from . import numerics as nx
from .encoder import Dropout, EncoderOutput, FeedForward, MultiHeadAttention, sinusoidal_encoding


@dataclass
class DecoderConfig:
    num_layers: int = 2
    attn_dim: int = 64
    num_heads: int = 4
    ffn_dim: int = 256
    vocab_size: int = 0
    dropout: float = 0.1
    max_len: int = 512

    def __post_init__(self):
        if self.attn_dim % self.num_heads:
            raise ValueError(
                f"attn_dim {self.attn_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.num_layers < 0:
            raise ValueError("num_layers must be non-negative")


class DecoderLayer(nn.Module):
    def __init__(self, cfg: DecoderConfig):
        super().__init__()
        d = cfg.attn_dim
        self.self_norm = nn.LayerNorm(d)
        self.self_att = MultiHeadAttention(d, cfg.num_heads, cfg.dropout)
        self.src_norm = nn.LayerNorm(d)
        self.src_att = MultiHeadAttention(d, cfg.num_heads, cfg.dropout)
        self.ff_norm = nn.LayerNorm(d)
        self.ff = FeedForward(d, cfg.ffn_dim, cfg.dropout, "relu")
        self.drop1 = Dropout(cfg.dropout)
        self.drop2 = Dropout(cfg.dropout)

    def forward(self, x, memory, memory_mask):
        h = self.self_norm(x)
        x = x + self.drop1(self.self_att(h, h, causal=True))
        x = x + self.drop2(self.src_att(self.src_norm(x), memory, key_mask=memory_mask))
        return x + self.ff(self.ff_norm(x))


class TransformerDecoder(nn.Module):
    """Token embedding + positions -> M pre-norm layers -> vocabulary logits.

    Causal self-attention makes the logits at step ``i`` depend only on
    ``prefix[:i+1]``, so right-padding a batch of prefixes is harmless.
    """

    def __init__(self, cfg: DecoderConfig):
        super().__init__()
        if cfg.vocab_size <= 0:
            raise ValueError("decoder vocab_size must be set")
        self.cfg = cfg
        self.embed = nn.Embedding(cfg.vocab_size, cfg.attn_dim)
        self.drop = Dropout(cfg.dropout)
        self.layers = nn.ModuleList([DecoderLayer(cfg) for _ in range(cfg.num_layers)])
        self.after_norm = nn.LayerNorm(cfg.attn_dim)
        self.out = nn.Linear(cfg.attn_dim, cfg.vocab_size)

    def forward(self, enc: EncoderOutput, prefix: torch.Tensor) -> torch.Tensor:
        """``prefix`` is ``[B, U]`` token ids starting with sos; returns ``[B, U, V]``."""
        if prefix.shape[1] > self.cfg.max_len:
            raise ValueError(f"prefix length {prefix.shape[1]} exceeds max_len {self.cfg.max_len}")
        if prefix.numel() and int(prefix.max()) >= self.cfg.vocab_size:
            raise ValueError(
                f"token id {int(prefix.max())} >= decoder vocab_size {self.cfg.vocab_size}"
            )
        x = nx.embedding(prefix, self.embed.weight)
        x = x + sinusoidal_encoding(x.shape[1], x.shape[2], x.dtype)
        x = self.drop(x)
        mem_mask = enc.mask
        for layer in self.layers:
            x = layer(x, enc.states, mem_mask)
        return self.out(self.after_norm(x))

    def attention_modules(self) -> list[MultiHeadAttention]:
        return [m for layer in self.layers for m in (layer.self_att, layer.src_att)]


@torch.no_grad()
def greedy_decode(
    enc: EncoderOutput, decoder: TransformerDecoder, sos_eos: int, max_len: int
) -> list[list[int]]:
    """Argmax decoding per utterance until eos or ``max_len`` tokens (eos excluded)."""
    b = enc.states.shape[0]
    results: list[list[int]] = [[] for _ in range(b)]
    if max_len <= 0:
        return results
    prefix = torch.full((b, 1), sos_eos, dtype=torch.long)
    done = torch.zeros(b, dtype=torch.bool)
    for _ in range(max_len):
        nxt = decoder(enc, prefix)[:, -1].argmax(dim=-1)
        for i in range(b):
            if not done[i]:
                if int(nxt[i]) == sos_eos:
                    done[i] = True
                else:
                    results[i].append(int(nxt[i]))
        if bool(done.all()):
            break
        prefix = torch.cat([prefix, nxt[:, None]], dim=1)
    return results
