"""Utterance-level language classifier on pooled encoder states."""
from __future__ import annotations

import torch
from torch import nn

from . import numerics as nx
from .encoder import EncoderOutput, length_mask
from .vocab import LANGUAGES


def pool_utterance(enc: EncoderOutput) -> torch.Tensor:
    """Mean of the final-layer states over valid frames only, ``[B, d]``."""
    lens = enc.valid_lens
    if int(lens.min()) < 1:
        raise ValueError("pool_utterance: utterance with zero valid frames")
    m = length_mask(lens, enc.states.shape[1]).unsqueeze(-1).to(enc.states.dtype)
    # fill rather than multiply so padded garbage (even inf) never enters the sum
    summed = nx.masked_fill(enc.states, m == 0, 0.0).sum(dim=1)
    return summed / lens[:, None].to(enc.states.dtype)


class LidHead(nn.Module):
    def __init__(self, d: int, hidden=(128, 64), num_languages: int = len(LANGUAGES)):
        super().__init__()
        self.linear1 = nn.Linear(d, hidden[0])
        self.linear2 = nn.Linear(hidden[0], hidden[1])
        self.output = nn.Linear(hidden[1], num_languages)

    def logits(self, pooled: torch.Tensor) -> torch.Tensor:
        return self.output(nx.relu(self.linear2(nx.relu(self.linear1(pooled)))))

    def forward(self, pooled: torch.Tensor) -> torch.Tensor:
        """Distribution over the six languages, ``[B, 6]``."""
        return nx.softmax(self.logits(pooled), dim=-1)
