"""Grapheme and phoneme vocabularies and target encoding."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

BLANK = "<blank>"
UNK = "<unk>"
SPACE = "<space>"
SOS_EOS = "<sos/eos>"
LANGUAGES = ("TE", "TA", "GU", "MA", "HI", "OD")
LANGUAGE_TAGS = tuple(f"[{code}]" for code in LANGUAGES)


def language_tag(language: str) -> str:
    """Accepts ``"TE"`` or ``"[TE]"``; returns the bracketed tag."""
    tag = language if language.startswith("[") else f"[{language}]"
    if tag not in LANGUAGE_TAGS:
        raise ValueError(f"unknown language {language!r}; expected one of {LANGUAGES}")
    return tag


@dataclass(frozen=True)
class Vocabulary:
    kind: str  # "grapheme" | "phoneme"
    symbols: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("vocabulary symbols must be unique")
        if self.symbols[0] != BLANK:
            raise ValueError("blank must have id 0")
        object.__setattr__(self, "_ids", {s: i for i, s in enumerate(self.symbols)})

    def __len__(self) -> int:
        return len(self.symbols)

    def __contains__(self, sym: str) -> bool:
        return sym in self._ids

    def id_of(self, sym: str) -> int:
        return self._ids.get(sym, self._ids[UNK])

    def symbol(self, idx: int) -> str:
        if not 0 <= idx < len(self.symbols):
            raise ValueError(f"id {idx} outside vocabulary of size {len(self.symbols)}")
        return self.symbols[idx]

    @property
    def blank(self) -> int:
        return self._ids[BLANK]

    @property
    def unk(self) -> int:
        return self._ids[UNK]

    @property
    def space(self) -> int:
        return self._ids[SPACE]

    @property
    def sos_eos(self) -> int:
        return self._ids[SOS_EOS]

    @property
    def language_ids(self) -> dict[str, int]:
        return {t[1:-1]: self._ids[t] for t in LANGUAGE_TAGS if t in self._ids}

    @property
    def special_ids(self) -> frozenset[int]:
        return frozenset(self._ids[s] for s in (BLANK, UNK, SPACE, SOS_EOS) if s in self._ids)

    def language_of(self, idx: int) -> str | None:
        sym = self.symbols[idx]
        return sym[1:-1] if sym in LANGUAGE_TAGS else None

    def dumps(self) -> str:
        return "".join(s + "\n" for s in self.symbols)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str) -> "Vocabulary":
        symbols = tuple(text.split("\n")[:-1] if text.endswith("\n") else text.split("\n"))
        kind = "grapheme" if LANGUAGE_TAGS[0] in symbols else "phoneme"
        return cls(kind, symbols)

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def transcript_symbols(text: str) -> list[str]:
    """Characters of ``text`` with whitespace runs collapsed to ``<space>``."""
    return [c if c != " " else SPACE for c in " ".join(text.split())]


def build_grapheme_vocab(corpora: Mapping[str, Iterable[str]]) -> Vocabulary:
    """Union of transcript characters across languages, plus specials and tags."""
    chars: set[str] = set()
    seen_any = False
    for lang, texts in corpora.items():
        language_tag(lang)
        for text in texts:
            seen_any = True
            chars.update(c for c in text if not c.isspace())
    if not seen_any:
        raise ValueError("cannot build a grapheme vocabulary from empty corpora")
    graphemes = sorted(chars)
    symbols = [BLANK, *graphemes, UNK, SPACE, SOS_EOS, *LANGUAGE_TAGS]
    return Vocabulary("grapheme", tuple(symbols))


def build_phoneme_vocab(phoneme_set: Sequence[str]) -> Vocabulary:
    if not phoneme_set:
        raise ValueError("phoneme set is empty")
    if len(set(phoneme_set)) != len(phoneme_set):
        dup = sorted({p for p in phoneme_set if list(phoneme_set).count(p) > 1})
        raise ValueError(f"duplicate phonemes: {dup}")
    clash = {BLANK, UNK, SPACE, SOS_EOS} & set(phoneme_set)
    if clash:
        raise ValueError(f"phoneme set contains reserved symbols {sorted(clash)}")
    return Vocabulary("phoneme", (BLANK, *phoneme_set, UNK, SPACE, SOS_EOS))


@dataclass
class TargetEncoding:
    ctc_labels: list[int]
    attn_labels_in: list[int]
    attn_labels_out: list[int]
    phoneme_labels: list[int]
    language: str


def phoneme_symbols(phonemes: str | Sequence[str]) -> list[str]:
    """Phoneme strings are whitespace-separated; ``|`` or ``<space>`` marks a word break."""
    toks = phonemes.split() if isinstance(phonemes, str) else list(phonemes)
    return [SPACE if t == "|" else t for t in toks]


def encode_target(
    transcript: str,
    phonemes: str | Sequence[str],
    language: str,
    graphemes: Vocabulary,
    phoneme_vocab: Vocabulary | None = None,
) -> TargetEncoding:
    tag = language_tag(language)
    ids = [graphemes.id_of(tag)] + [graphemes.id_of(s) for s in transcript_symbols(transcript)]
    eos = graphemes.sos_eos
    phn: list[int] = []
    if phoneme_vocab is not None:
        phn = [phoneme_vocab.id_of(s) for s in phoneme_symbols(phonemes)]
    return TargetEncoding(
        ctc_labels=ids,
        attn_labels_in=[eos] + ids,
        attn_labels_out=ids + [eos],
        phoneme_labels=phn,
        language=tag[1:-1],
    )


def decode_labels(ids: Sequence[int], vocab: Vocabulary) -> tuple[str | None, str]:
    """Inverse of encoding: strip a leading language tag, drop specials."""
    ids = [int(i) for i in ids]
    for i in ids:
        vocab.symbol(i)
    language = None
    if ids and vocab.language_of(ids[0]) is not None:
        language = vocab.language_of(ids[0])
        ids = ids[1:]
    out = []
    for i in ids:
        sym = vocab.symbols[i]
        if sym == SPACE:
            out.append(" ")
        elif i in vocab.special_ids or sym in LANGUAGE_TAGS:
            continue
        else:
            out.append(sym)
    return language, "".join(out)
