"""CTC, label cross-entropy and the weighted multi-task objective."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch

from . import numerics as nx

# Stands in for log(0): keeps logsumexp gradients finite on unreachable states.
LOG_ZERO = -1e30


class CTCInfeasibleError(ValueError):
    """The target cannot be aligned to the available frames (loss is +inf)."""


def ctc_min_frames(target: Sequence[int]) -> int:
    """Frames needed: one per label plus one blank between each repeated pair."""
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def ctc_log_likelihood(
    logprobs: torch.Tensor,
    lens: torch.Tensor,
    targets: Sequence[Sequence[int]],
    blank: int = 0,
) -> torch.Tensor:
    """Per-utterance ``log P(target | x)`` by the log-space forward recursion.

    ``logprobs`` is ``[B, T, V]`` log-softmax output, ``lens`` the valid frame
    counts. Returns ``[B]``; differentiable through autograd.
    """
    b, t_max, v = logprobs.shape
    if len(targets) != b or lens.shape != (b,):
        raise nx.ShapeError(
            f"ctc: batch of {b} logprob rows vs {len(targets)} targets / lens {tuple(lens.shape)}"
        )
    for i, tgt in enumerate(targets):
        if any(int(y) == blank for y in tgt):
            raise ValueError(f"ctc: target {i} contains the blank id {blank}")
        if any(not 0 <= int(y) < v for y in tgt):
            raise ValueError(f"ctc: target {i} has ids outside [0, {v})")
        need = ctc_min_frames(list(tgt))
        if need > int(lens[i]):
            raise CTCInfeasibleError(
                f"ctc: target {i} needs {need} frames but only {int(lens[i])} are available"
            )

    l_max = max((len(t) for t in targets), default=0)
    s = 2 * l_max + 1
    ext = torch.full((b, s), blank, dtype=torch.long)
    for i, tgt in enumerate(targets):
        if len(tgt):
            ext[i, 1 : 2 * len(tgt) : 2] = torch.as_tensor(list(tgt), dtype=torch.long)
    skip = torch.zeros(b, s, dtype=torch.bool)
    if s > 2:
        skip[:, 2:] = (ext[:, 2:] != blank) & (ext[:, 2:] != ext[:, :-2])

    emit = logprobs.gather(2, ext[:, None, :].expand(b, t_max, s))  # [B, T, S]
    dtype = logprobs.dtype
    neg = torch.full((b, s), LOG_ZERO, dtype=dtype)
    alpha = torch.where(torch.arange(s)[None, :] < 2, emit[:, 0], neg)
    pad1 = torch.full((b, 1), LOG_ZERO, dtype=dtype)
    pad2 = torch.full((b, 2), LOG_ZERO, dtype=dtype)
    for t in range(1, t_max):
        stay = alpha
        step = torch.cat([pad1, alpha[:, :-1]], dim=1)
        jump = torch.where(skip, torch.cat([pad2, alpha[:, :-2]], dim=1)[:, :s], neg)
        nxt = torch.logsumexp(torch.stack([stay, step, jump]), dim=0) + emit[:, t]
        alpha = torch.where((t < lens)[:, None], nxt, alpha)

    out = []
    for i, tgt in enumerate(targets):
        last = 2 * len(tgt)
        if last == 0:
            out.append(alpha[i, 0])
        else:
            out.append(torch.logaddexp(alpha[i, last], alpha[i, last - 1]))
    return torch.stack(out)


def ctc_loss(logprobs: torch.Tensor, target: Sequence[int], blank: int = 0) -> torch.Tensor:
    """Negative log-likelihood of one target under ``[T, V]`` frame logprobs."""
    t = logprobs.shape[0]
    return -ctc_log_likelihood(
        logprobs.unsqueeze(0), torch.tensor([t]), [list(target)], blank
    )[0]


def ctc_batch_loss(logprobs, lens, targets, blank: int = 0) -> torch.Tensor:
    """Mean over utterances of the per-utterance CTC loss."""
    return -ctc_log_likelihood(logprobs, lens, targets, blank).mean()


def ce_label_loss(logits: torch.Tensor, targets: torch.Tensor, pad_id: int = -1) -> torch.Tensor:
    """Token-mean cross-entropy over positions whose target is not ``pad_id``."""
    if logits.shape[:-1] != targets.shape:
        raise nx.ShapeError(
            f"ce_label_loss: logits {tuple(logits.shape)} vs targets {tuple(targets.shape)}"
        )
    keep = targets != pad_id
    if not bool(keep.any()):
        raise ValueError("ce_label_loss: every target position is padding")
    logp = nx.log_softmax(logits, dim=-1)
    safe = torch.where(keep, targets, torch.zeros_like(targets))
    nll = -logp.gather(-1, safe.unsqueeze(-1)).squeeze(-1)
    return nll[keep].mean()


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.3  # CTC
    beta: float = 0.5  # phoneme decoder
    gamma: float = 0.5  # grapheme decoder
    pi: float = 10.0  # language id

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "pi"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be non-negative")


@dataclass
class LossBreakdown:
    l_ctc: torch.Tensor
    l_pr: torch.Tensor
    l_gr: torch.Tensor
    l_lid: torch.Tensor
    total: torch.Tensor
    weights: LossWeights

    def as_floats(self) -> dict[str, float]:
        """Component values as Python floats, total recomputed from them.

        The logged total is the weighted sum of the logged components in
        double precision, so the identity holds bit-exactly in the log.
        """
        parts = {k: float(getattr(self, k).detach()) for k in ("l_ctc", "l_pr", "l_gr", "l_lid")}
        parts["total"] = weighted_total(
            parts["l_ctc"], parts["l_pr"], parts["l_gr"], parts["l_lid"], self.weights
        )
        return parts


def weighted_total(l_ctc, l_pr, l_gr, l_lid, w: LossWeights):
    return w.alpha * l_ctc + w.beta * l_pr + w.gamma * l_gr + w.pi * l_lid


def multitask_loss(l_ctc, l_pr, l_gr, l_lid, w: LossWeights) -> LossBreakdown:
    for name, val in (("l_ctc", l_ctc), ("l_pr", l_pr), ("l_gr", l_gr), ("l_lid", l_lid)):
        nx.check_finite(torch.as_tensor(val).detach(), name)
    total = weighted_total(l_ctc, l_pr, l_gr, l_lid, w)
    return LossBreakdown(l_ctc, l_pr, l_gr, l_lid, total, w)
