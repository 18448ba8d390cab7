"""CTC prefix beam search with n-gram shallow fusion."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch

from .lm import NGramLM
from .vocab import Vocabulary, decode_labels

NEG_INF = -math.inf


@dataclass(frozen=True)
class BeamConfig:
    beam_size: int | None = 20  # None: keep every prefix (exact search)
    lm_weight: float = 1.4

    def __post_init__(self):
        if self.beam_size is not None and self.beam_size < 1:
            raise ValueError(f"beam_size must be >= 1, got {self.beam_size}")
        if self.lm_weight < 0:
            raise ValueError(f"lm_weight must be >= 0, got {self.lm_weight}")


@dataclass
class Hypothesis:
    labels: tuple[int, ...]
    text: str
    language: str | None
    log_p_ctc: float
    log_p_lm: float
    fused: float

    def to_json(self, utt_id: str) -> str:
        d = asdict(self)
        d.pop("labels")
        return json.dumps({"utt_id": utt_id, **d}, ensure_ascii=False)


def collapse_ctc(path: Sequence[int], blank: int = 0) -> list[int]:
    out: list[int] = []
    prev = None
    for p in path:
        p = int(p)
        if p != prev and p != blank:
            out.append(p)
        prev = p
    return out


def _lse(a: float, b: float) -> float:
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    m = max(a, b)
    return m + math.log1p(math.exp(-abs(a - b)))


class _Prefix:
    __slots__ = ("pb", "pnb", "lm")

    def __init__(self, lm: float):
        self.pb = NEG_INF
        self.pnb = NEG_INF
        self.lm = lm  # log P_lm of the prefix tokens, no end marker

    @property
    def total(self) -> float:
        return _lse(self.pb, self.pnb)


def ctc_beam_search(
    logprobs,
    vocab: Vocabulary,
    lm: NGramLM | None,
    cfg: BeamConfig = BeamConfig(),
    blank: int = 0,
) -> list[Hypothesis]:
    """Rank label sequences by ``log P_ctc(Y|X) + lm_weight * log P_lm(Y)``.

    ``logprobs`` is ``[T, V]`` per-frame log posteriors. Each prefix tracks
    the probability of paths ending in blank and in its last label; the LM
    term for a label is added when a prefix is extended by it, and the end
    marker term is added before the final ranking. Ties go to the
    lexicographically smaller label sequence.
    """
    if isinstance(logprobs, torch.Tensor):
        logprobs = logprobs.detach().cpu().numpy()
    lp = np.asarray(logprobs, dtype=np.float64)
    t_len, v = lp.shape
    lam = cfg.lm_weight
    use_lm = lm is not None and lam > 0
    symbols = vocab.symbols

    def lm_ext(prefix: tuple[int, ...], c: int) -> float:
        if not use_lm:
            return 0.0
        # NGramLM.step keeps only the last order-1 history tokens
        history = ["<s>"] + [symbols[i] for i in prefix[-(lm.order - 1):]] if lm.order > 1 else []
        return lm.step(history, symbols[c])

    beams: dict[tuple[int, ...], _Prefix] = {(): _Prefix(0.0)}
    beams[()].pb = 0.0
    labels = [c for c in range(v) if c != blank]
    for t in range(t_len):
        row = lp[t]
        nxt: dict[tuple[int, ...], _Prefix] = {}

        def get(prefix, parent_lm, c):
            node = nxt.get(prefix)
            if node is None:
                node = _Prefix(parent_lm + lm_ext(prefix[:-1], c) if c is not None else parent_lm)
                nxt[prefix] = node
            return node

        for prefix, st in beams.items():
            total = st.total
            same = get(prefix, st.lm, None)
            same.pb = _lse(same.pb, total + row[blank])
            if prefix:
                same.pnb = _lse(same.pnb, st.pnb + row[prefix[-1]])
            for c in labels:
                ext = prefix + (c,)
                node = get(ext, st.lm, c)
                src = st.pb if prefix and prefix[-1] == c else total
                node.pnb = _lse(node.pnb, src + row[c])
        if cfg.beam_size is not None and len(nxt) > cfg.beam_size:
            ranked = sorted(nxt.items(), key=lambda kv: (-(kv[1].total + lam * kv[1].lm), kv[0]))
            nxt = dict(ranked[: cfg.beam_size])
        beams = nxt

    hyps = []
    for prefix, st in beams.items():
        log_p_ctc = st.total
        if log_p_ctc == NEG_INF:
            continue
        log_p_lm = 0.0
        if lm is not None:
            # same step sequence as the incremental sum, plus the end marker
            log_p_lm = lm.score([symbols[i] for i in prefix])
        fused = log_p_ctc + lam * log_p_lm
        language, text = decode_labels(prefix, vocab)
        hyps.append(Hypothesis(prefix, text, language, log_p_ctc, log_p_lm, fused))
    hyps.sort(key=lambda h: (-h.fused, h.labels))
    return hyps if cfg.beam_size is None else hyps[: cfg.beam_size]


@torch.no_grad()
def decode_utterance(
    model, feats, lm: NGramLM | None, cfg: BeamConfig, vocab: Vocabulary
) -> Hypothesis:
    """Encode normalised ``[T, 40]`` features and return the top CTC/LM hypothesis.

    The attention decoders are not consulted.
    """
    model.eval()
    x = torch.as_tensor(np.asarray(feats), dtype=next(model.parameters()).dtype)[None]
    enc = model.encode(x, torch.tensor([x.shape[1]]))
    t = int(enc.valid_lens[0])
    return ctc_beam_search(enc.ctc_logprobs[0, :t], vocab, lm, cfg)[0]


@torch.no_grad()
def decode_dataset(model, dataset, lm: NGramLM | None, cfg: BeamConfig, batch_size: int = 20):
    """Top hypothesis and LID-head language for every utterance, keyed by utt id."""
    model.eval()
    hyps: dict[str, Hypothesis] = {}
    lid: dict[str, str] = {}
    for batch in dataset.batches(batch_size):
        enc = model.encode(batch.feats, batch.lens)
        for i, utt in enumerate(batch.utt_ids):
            t = int(enc.valid_lens[i])
            hyps[utt] = ctc_beam_search(enc.ctc_logprobs[i, :t], dataset.graphemes, lm, cfg)[0]
        for utt, lang in zip(batch.utt_ids, model.predict_language(enc)):
            lid[utt] = lang
    return dict(sorted(hyps.items())), dict(sorted(lid.items()))
