"""Token n-gram language model with interpolated Witten-Bell smoothing.

The trained model is held in backoff form: ``logprob[(history, token)]`` for
every observed n-gram (and every vocabulary unigram), and ``backoff[history]``
for every observed context. For Witten-Bell interpolation this is exact:

    P(w | h) = (c(h, w) + T(h) P(w | h')) / (c(h) + T(h))

reduces to ``bow(h) * P(w | h')`` when ``c(h, w) == 0``, with
``bow(h) = T(h) / (c(h) + T(h))``. The unigram level interpolates with a
uniform distribution over the vocabulary.
"""
from __future__ import annotations

import math
from collections import Counter, defaultdict
from pathlib import Path
from typing import Iterable, Sequence

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"

History = tuple[str, ...]


class NGramLM:
    def __init__(
        self,
        order: int,
        vocab: Iterable[str],
        logprob: dict[tuple[History, str], float],
        backoff: dict[History, float],
    ):
        self.order = order
        self.vocab = tuple(vocab)
        self._vocab_set = frozenset(self.vocab)
        self.logprob = logprob
        self.backoff = backoff
        self.smoothing = "witten-bell"
        self._cache: dict[tuple[History, str], float] = {}

    def _map(self, token: str) -> str:
        return token if token in self._vocab_set else UNK

    def _cond(self, history: History, token: str) -> float:
        key = (history, token)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        lp = self.logprob.get(key)
        if lp is None:
            if not history:
                lp = -math.inf
            else:
                lp = self.backoff.get(history, 0.0) + self._cond(history[1:], token)
        self._cache[key] = lp
        return lp

    def step(self, history: Sequence[str], token: str) -> float:
        """``log P(token | history)``; ``history`` starts with ``<s>``."""
        h = tuple(history)[-(self.order - 1):] if self.order > 1 else ()
        h = tuple(t if t == BOS else self._map(t) for t in h)
        return self._cond(h, self._map(token))

    def score(self, tokens: Sequence[str]) -> float:
        """Sentence log probability including the end marker."""
        history = [BOS]
        total = 0.0
        for tok in list(tokens) + [EOS]:
            total += self.step(history, tok)
            history.append(tok)
        return total

    # -- serialisation -----------------------------------------------------

    def dumps(self) -> str:
        lines = [f"# ngram order={self.order} smoothing={self.smoothing}"]
        rows = []
        for (hist, tok), lp in self.logprob.items():
            bow = self.backoff.get(hist + (tok,), 0.0)
            rows.append((len(hist) + 1, hist, tok, lp, bow))
        # <s> is a context but never predicted: it gets a row for its backoff only
        for hist, bow in self.backoff.items():
            if hist and hist[-1] == BOS and (hist[:-1], BOS) not in self.logprob:
                rows.append((len(hist), hist[:-1], BOS, -math.inf, bow))
        rows.sort(key=lambda r: (r[0], r[1], r[2]))
        for n, hist, tok, lp, bow in rows:
            lines.append(f"{n}\t{' '.join(hist)}\t{tok}\t{lp!r}\t{bow!r}")
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str) -> "NGramLM":
        order = 0
        vocab: list[str] = []
        logprob: dict[tuple[History, str], float] = {}
        backoff: dict[History, float] = {}
        for line in text.splitlines():
            if not line or line.startswith("#"):
                if "order=" in line:
                    order = int(line.split("order=")[1].split()[0])
                continue
            n, hist, tok, lp, bow = line.split("\t")
            h = tuple(hist.split(" ")) if hist else ()
            lp, bow = float(lp), float(bow)
            order = max(order, int(n))
            if lp != -math.inf:
                logprob[(h, tok)] = lp
                if not h:
                    vocab.append(tok)
            if bow != 0.0:
                backoff[h + (tok,)] = bow
        return cls(order, vocab, logprob, backoff)

    @classmethod
    def load(cls, path: str | Path) -> "NGramLM":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def train_ngram(
    sentences: Iterable[Sequence[str]], order: int = 3, extra_vocab: Iterable[str] = ()
) -> NGramLM:
    """Count n-grams over ``<s> tokens </s>`` and build a Witten-Bell model.

    ``extra_vocab`` adds tokens that never occur in the text but must receive
    probability mass (e.g. the full grapheme inventory).
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    counts: dict[History, Counter] = defaultdict(Counter)
    n_sent = 0
    for sent in sentences:
        n_sent += 1
        toks = [BOS, *sent, EOS]
        for i in range(1, len(toks)):
            for k in range(0, order):
                if i - k < 0:
                    break
                counts[tuple(toks[i - k:i])][toks[i]] += 1
    if n_sent == 0:
        raise ValueError("cannot train a language model on an empty corpus")

    vocab = set(counts[()]) | set(extra_vocab) | {EOS, UNK}
    vocab.discard(BOS)
    vocab = sorted(vocab)

    logprob: dict[tuple[History, str], float] = {}
    backoff: dict[History, float] = {}
    probs: dict[tuple[History, str], float] = {}

    def prob(h: History, w: str) -> float:
        p = probs.get((h, w))
        if p is not None:
            return p
        lower = 1.0 / len(vocab) if not h else prob(h[1:], w)
        c = counts.get(h)
        if not c:
            return lower
        total, types = sum(c.values()), len(c)
        return (c[w] + types * lower) / (total + types)

    for h in sorted(counts, key=len):
        c = counts[h]
        total, types = sum(c.values()), len(c)
        backoff[h] = math.log(types / (total + types))
        targets = vocab if not h else sorted(c)
        for w in targets:
            p = prob(h, w)
            probs[(h, w)] = p
            logprob[(h, w)] = math.log(p)
    backoff.pop((), None)
    return NGramLM(order, vocab, logprob, backoff)


def lm_score(lm: NGramLM, tokens: Sequence[str]) -> float:
    return lm.score(tokens)


def lm_step(lm: NGramLM, history: Sequence[str], token: str) -> float:
    return lm.step(history, token)
