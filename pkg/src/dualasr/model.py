"""The full dual-decoder network: shared encoder, PHN/GRP decoders, LID head."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn

from . import numerics as nx
from .decoders import DecoderConfig, TransformerDecoder
from .encoder import ConformerEncoder, Dropout, EncoderConfig, EncoderOutput
from .lid import LidHead, pool_utterance
from .losses import LossBreakdown, LossWeights, ce_label_loss, ctc_batch_loss, multitask_loss
from .vocab import LANGUAGES, TargetEncoding

PAD = -1


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    grp_layers: int = 2
    phn_layers: int = 1
    decoder_heads: int = 4
    decoder_ffn: int = 256
    decoder_dropout: float = 0.1
    grapheme_vocab_size: int = 0
    phoneme_vocab_size: int = 0
    lid_hidden: tuple[int, int] = (128, 64)

    def grp_decoder(self) -> DecoderConfig:
        return DecoderConfig(
            self.grp_layers, self.encoder.attn_dim, self.decoder_heads,
            self.decoder_ffn, self.grapheme_vocab_size, self.decoder_dropout,
        )

    def phn_decoder(self) -> DecoderConfig:
        return DecoderConfig(
            self.phn_layers, self.encoder.attn_dim, self.decoder_heads,
            self.decoder_ffn, self.phoneme_vocab_size, self.decoder_dropout,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["encoder"] = EncoderConfig(**d["encoder"])
        d["lid_hidden"] = tuple(d["lid_hidden"])
        return cls(**d)


@dataclass
class Batch:
    utt_ids: list[str]
    feats: torch.Tensor  # [B, T, 40]
    lens: torch.Tensor  # [B]
    ctc_targets: list[list[int]]
    grp_in: torch.Tensor  # [B, U]
    grp_out: torch.Tensor  # [B, U], PAD beyond target
    phn_in: torch.Tensor
    phn_out: torch.Tensor
    languages: torch.Tensor  # [B] index into LANGUAGES

    def to(self, dtype) -> "Batch":
        return Batch(**{**self.__dict__, "feats": self.feats.to(dtype)})


def _pad(seqs: Sequence[Sequence[int]], value: int) -> torch.Tensor:
    width = max(len(s) for s in seqs)
    out = torch.full((len(seqs), width), value, dtype=torch.long)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = torch.as_tensor(list(s), dtype=torch.long)
    return out


def make_batch(
    utt_ids: Sequence[str],
    feats: Sequence[np.ndarray],
    targets: Sequence[TargetEncoding],
    phn_sos_eos: int,
) -> Batch:
    lens = torch.tensor([f.shape[0] for f in feats], dtype=torch.long)
    x = torch.zeros(len(feats), int(lens.max()), feats[0].shape[1])
    for i, f in enumerate(feats):
        x[i, : f.shape[0]] = torch.from_numpy(np.asarray(f, dtype=np.float32))
    grp_eos = targets[0].attn_labels_in[0]
    return Batch(
        utt_ids=list(utt_ids),
        feats=x,
        lens=lens,
        ctc_targets=[list(t.ctc_labels) for t in targets],
        # input padding is never attended to by valid positions (causal mask)
        grp_in=_pad([t.attn_labels_in for t in targets], grp_eos),
        grp_out=_pad([t.attn_labels_out for t in targets], PAD),
        phn_in=_pad([[phn_sos_eos] + t.phoneme_labels for t in targets], phn_sos_eos),
        phn_out=_pad([t.phoneme_labels + [phn_sos_eos] for t in targets], PAD),
        languages=torch.tensor([LANGUAGES.index(t.language) for t in targets]),
    )


def init_parameters(module: nn.Module, generator: torch.Generator) -> None:
    """Xavier-uniform matrices, unit norm scales, zero biases; all from ``generator``."""
    with torch.no_grad():
        for name, p in module.named_parameters():
            leaf = name.rsplit(".", 1)[-1]
            if p.dim() >= 2:
                receptive = math.prod(p.shape[2:]) if p.dim() > 2 else 1
                fan_in, fan_out = p.shape[1] * receptive, p.shape[0] * receptive
                bound = math.sqrt(6.0 / (fan_in + fan_out))
                p.copy_((torch.rand(p.shape, generator=generator, dtype=p.dtype) * 2 - 1) * bound)
            elif leaf == "weight":
                p.fill_(1.0)
            else:
                p.zero_()


class DualDecoderASR(nn.Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.encoder = ConformerEncoder(cfg.encoder, cfg.grapheme_vocab_size)
        self.grp_decoder = TransformerDecoder(cfg.grp_decoder())
        self.phn_decoder = TransformerDecoder(cfg.phn_decoder())
        self.lid = LidHead(cfg.encoder.attn_dim, cfg.lid_hidden)
        self.generator = nx.make_generator(seed)
        init_parameters(self, self.generator)
        for m in self.modules():
            if isinstance(m, Dropout):
                m.generator = self.generator

    def encode(self, feats: torch.Tensor, lens: torch.Tensor) -> EncoderOutput:
        return self.encoder(feats, lens)

    def losses(self, batch: Batch, weights: LossWeights) -> tuple[LossBreakdown, dict]:
        enc = self.encode(batch.feats, batch.lens)
        l_ctc = ctc_batch_loss(enc.ctc_logprobs, enc.valid_lens, batch.ctc_targets)
        grp_logits = self.grp_decoder(enc, batch.grp_in)
        phn_logits = self.phn_decoder(enc, batch.phn_in)
        l_gr = ce_label_loss(grp_logits, batch.grp_out, PAD)
        l_pr = ce_label_loss(phn_logits, batch.phn_out, PAD)
        lid_logits = self.lid.logits(pool_utterance(enc))
        l_lid = nx.cross_entropy(lid_logits, batch.languages)
        breakdown = multitask_loss(l_ctc, l_pr, l_gr, l_lid, weights)
        return breakdown, {"enc": enc, "lid_logits": lid_logits}

    @torch.no_grad()
    def predict_language(self, enc: EncoderOutput) -> list[str]:
        probs = self.lid(pool_utterance(enc))
        return [LANGUAGES[i] for i in probs.argmax(dim=-1).tolist()]
