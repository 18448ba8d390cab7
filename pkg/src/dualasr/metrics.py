"""WER/CER scoring with per-language and weighted-average aggregation."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence


def edit_distance(ref: Sequence, hyp: Sequence) -> tuple[int, int, int]:
    """(substitutions, deletions, insertions) of a minimum-cost alignment.

    On equal-cost ties the backtrace prefers a match/substitution, then a
    deletion, then an insertion.
    """
    n, m = len(ref), len(hyp)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        d[i][0] = i
    for j in range(1, m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        ri = ref[i - 1]
        row, prev = d[i], d[i - 1]
        for j in range(1, m + 1):
            row[j] = min(
                prev[j - 1] + (ri != hyp[j - 1]),
                prev[j] + 1,
                row[j - 1] + 1,
            )
    s = dl = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i][j] == d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and d[i][j] == d[i - 1][j] + 1:
            dl += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return s, dl, ins


@dataclass
class ErrorCounts:
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    ref_tokens: int = 0

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def rate(self) -> float:
        return self.errors / self.ref_tokens if self.ref_tokens else 0.0

    def add(self, sdi: tuple[int, int, int], n_ref: int) -> None:
        self.substitutions += sdi[0]
        self.deletions += sdi[1]
        self.insertions += sdi[2]
        self.ref_tokens += n_ref


@dataclass
class LanguageScore:
    words: ErrorCounts = field(default_factory=ErrorCounts)
    chars: ErrorCounts = field(default_factory=ErrorCounts)
    utterances: int = 0

    @property
    def wer(self) -> float:
        return self.words.rate

    @property
    def cer(self) -> float:
        return self.chars.rate


@dataclass
class ScoreReport:
    languages: dict[str, LanguageScore]
    missing: list[str] = field(default_factory=list)

    def _pooled(self, attr: str) -> float:
        errs = sum(getattr(s, attr).errors for s in self.languages.values())
        refs = sum(getattr(s, attr).ref_tokens for s in self.languages.values())
        return errs / refs if refs else 0.0

    @property
    def weighted_wer(self) -> float:
        """Errors over reference words pooled across languages."""
        return self._pooled("words")

    @property
    def weighted_cer(self) -> float:
        return self._pooled("chars")

    def to_dict(self) -> dict:
        out = {}
        for lang, sc in sorted(self.languages.items()):
            out[lang] = {
                "utterances": sc.utterances,
                "words": asdict(sc.words),
                "chars": asdict(sc.chars),
                "wer": sc.wer,
                "cer": sc.cer,
            }
        return {
            "languages": out,
            "weighted_wer": self.weighted_wer,
            "weighted_cer": self.weighted_cer,
            "missing": list(self.missing),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2)

    def table(self) -> str:
        head = (f"{'language':<10}{'utts':>6}{'words':>8}{'S':>6}{'D':>6}{'I':>6}"
                f"{'WER%':>8}{'CER%':>8}")
        lines = [head, "-" * len(head)]
        for lang, sc in sorted(self.languages.items()):
            w = sc.words
            lines.append(
                f"{lang:<10}{sc.utterances:>6}{w.ref_tokens:>8}{w.substitutions:>6}"
                f"{w.deletions:>6}{w.insertions:>6}{100 * sc.wer:>8.2f}{100 * sc.cer:>8.2f}"
            )
        lines.append("-" * len(head))
        lines.append(
            f"{'weighted':<10}{'':>6}{'':>8}{'':>6}{'':>6}{'':>6}"
            f"{100 * self.weighted_wer:>8.2f}{100 * self.weighted_cer:>8.2f}"
        )
        if self.missing:
            lines.append(f"missing hypotheses (scored as deletions): {len(self.missing)}")
        return "\n".join(lines)


def _chars(text: str) -> list[str]:
    return [c for c in " ".join(text.split())]


def score_manifest(
    refs: Mapping[str, tuple[str, str]], hyps: Mapping[str, str]
) -> ScoreReport:
    """``refs``: utt_id -> (language, transcript); ``hyps``: utt_id -> text.

    A missing hypothesis is scored as an empty one (all deletions) and listed.
    """
    langs: dict[str, LanguageScore] = {}
    missing = []
    for utt in sorted(refs):
        lang, ref = refs[utt]
        if utt not in hyps:
            missing.append(utt)
        hyp = hyps.get(utt, "")
        sc = langs.setdefault(lang, LanguageScore())
        sc.utterances += 1
        rw, hw = ref.split(), hyp.split()
        sc.words.add(edit_distance(rw, hw), len(rw))
        rc, hc = _chars(ref), _chars(hyp)
        sc.chars.add(edit_distance(rc, hc), len(rc))
    return ScoreReport(langs, missing)
