"""Synthetic multilingual corpus: tone-coded graphemes rendered to WAV.

Each language owns a disjoint set of script characters. Grapheme ``i`` of a
language is pronounced as phoneme ``i`` of a shared inventory, so phonemes
are common across languages while graphemes are not. Acoustically a grapheme
is a steady two-tone segment: the low tone (plus its second harmonic)
encodes the phoneme and the high tone encodes the language. Words are drawn
from a fixed per-language lexicon, which gives the character LM something to
learn.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .frontend import TARGET_RATE, Waveform, hz_to_mel, mel_to_hz, write_wav
from .vocab import LANGUAGES

SCRIPTS = {
    "TE": "కఖగచజటడతదనపబమయరలవసహ",
    "TA": "கஙசஞடணதநபமயரலவழளறன",
    "GU": "કખગઘચછજઝટઠડઢણતથદધન",
    "HI": "कखगघचछजझटठ",
    "MA": "डढणतथदधनपफ",
    "OD": "କଖଗଘଙଚଛଜଝଞଟଠ",
}
PHONEMES = ("k", "kh", "g", "gh", "c", "ch", "j", "jh", "t", "th", "d", "dh")

LOW_TONES = mel_to_hz(np.linspace(hz_to_mel(250.0), hz_to_mel(1500.0), len(PHONEMES)))
HIGH_TONES = mel_to_hz(np.linspace(hz_to_mel(2000.0), hz_to_mel(6500.0), len(LANGUAGES)))


@dataclass
class SynthSpec:
    languages: tuple[str, ...] = ("TE", "HI")
    alphabet_size: int = 8
    lexicon_size: int = 20
    min_tokens: int = 3
    max_tokens: int = 8
    # fixes alphabets' lexicons; utterance sampling uses its own seed
    lexicon_seed: int = 1234
    sample_rate: int = TARGET_RATE
    disjoint: bool = True
    alphabets: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.languages = tuple(self.languages)
        for lang in self.languages:
            if lang not in LANGUAGES:
                raise ValueError(f"unknown language {lang!r}")
        if not 1 <= self.alphabet_size <= len(PHONEMES):
            raise ValueError(f"alphabet_size must lie in [1, {len(PHONEMES)}]")
        if not 1 <= self.min_tokens <= self.max_tokens:
            raise ValueError("need 1 <= min_tokens <= max_tokens")
        for lang in self.languages:
            a = self.alphabet(lang)
            if not a or len(a) > len(PHONEMES) or len(set(a)) != len(a):
                raise ValueError(f"{lang}: alphabet needs 1..{len(PHONEMES)} distinct characters")
        if self.disjoint:
            seen: dict[str, str] = {}
            for lang in self.languages:
                for ch in self.alphabet(lang):
                    if ch in seen:
                        raise ValueError(
                            f"alphabets overlap: {ch!r} is in both {seen[ch]} and {lang}"
                        )
                    seen[ch] = lang

    def alphabet(self, lang: str) -> str:
        return self.alphabets.get(lang, SCRIPTS[lang][: self.alphabet_size])

    def phoneme_of(self, lang: str, ch: str) -> str:
        return PHONEMES[self.alphabet(lang).index(ch)]

    def phoneme_set(self) -> list[str]:
        n = max(len(self.alphabet(lang)) for lang in self.languages)
        return list(PHONEMES[:n])

    def lexicons(self) -> dict[str, list[str]]:
        rng = np.random.default_rng(self.lexicon_seed)
        out = {}
        for lang in self.languages:
            alpha = self.alphabet(lang)
            words: list[str] = []
            # two one-letter words let any token budget be filled exactly
            lengths = [1, 1] + list(rng.integers(2, 5, size=max(0, self.lexicon_size - 2)))
            for n in lengths:
                while True:
                    w = "".join(alpha[i] for i in rng.integers(0, len(alpha), size=int(n)))
                    if w not in words:
                        words.append(w)
                        break
            out[lang] = words
        return out


@dataclass
class Record:
    utt_id: str
    audio_path: str
    transcript: str
    phonemes: str
    language: str
    sample_rate: int

    def to_json(self) -> str:
        return json.dumps(self.__dict__, ensure_ascii=False)


def _segment(
    f_low: float, f_high: float, n: int, rate: int, rng: np.random.Generator
) -> np.ndarray:
    t = np.arange(n) / rate
    phase = rng.uniform(0, 2 * np.pi, size=3)
    y = (
        np.sin(2 * np.pi * f_low * t + phase[0])
        + 0.5 * np.sin(2 * np.pi * 2 * f_low * t + phase[1])
        + 0.7 * np.sin(2 * np.pi * f_high * t + phase[2])
    )
    fade = min(n // 2, int(0.01 * rate))
    env = np.ones(n)
    if fade:
        ramp = np.hanning(2 * fade)
        env[:fade] = ramp[:fade]
        env[-fade:] = ramp[fade:]
    return y * env


def render(spec: SynthSpec, lang: str, transcript: str, rng: np.random.Generator) -> Waveform:
    rate = spec.sample_rate
    pitch = rng.uniform(0.98, 1.02)
    f_high = HIGH_TONES[LANGUAGES.index(lang)] * pitch
    alpha = spec.alphabet(lang)

    def silence(lo_ms, hi_ms):
        return np.zeros(int(rate * rng.uniform(lo_ms, hi_ms) / 1000))

    parts = [silence(50, 150)]
    for wi, word in enumerate(transcript.split(" ")):
        if wi:
            parts.append(silence(80, 150))
        for ci, ch in enumerate(word):
            if ci:
                parts.append(silence(15, 30))
            n = int(rate * rng.uniform(0.09, 0.13))
            f_low = LOW_TONES[alpha.index(ch)] * pitch
            parts.append(_segment(f_low, f_high, n, rate, rng))
    parts.append(silence(50, 150))
    y = np.concatenate(parts) * rng.uniform(0.15, 0.3)
    noise_db = rng.uniform(25, 35)
    power = np.mean(y**2)
    y = y + rng.standard_normal(len(y)) * np.sqrt(power / 10 ** (noise_db / 10))
    return Waveform(np.clip(y, -1, 1), rate)


def sample_transcript(spec: SynthSpec, lexicon: list[str], rng: np.random.Generator) -> str:
    budget = int(rng.integers(spec.min_tokens, spec.max_tokens + 1))
    words = []
    while budget > 0:
        fits = [w for w in lexicon if len(w) <= budget]
        w = fits[int(rng.integers(0, len(fits)))]
        words.append(w)
        budget -= len(w)
    return " ".join(words)


def generate_synthetic_dataset(
    spec: SynthSpec,
    out_dir: str | Path,
    utts_per_language: int,
    seed: int,
    prefix: str = "utt",
) -> list[Record]:
    """Write ``wav/*.wav`` and ``manifest.jsonl`` under ``out_dir``."""
    out = Path(out_dir)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    lexicons = spec.lexicons()
    records = []
    for lang in spec.languages:
        for k in range(utts_per_language):
            utt_id = f"{prefix}-{lang}-{k:04d}"
            text = sample_transcript(spec, lexicons[lang], rng)
            phonemes = " | ".join(
                " ".join(spec.phoneme_of(lang, ch) for ch in word) for word in text.split(" ")
            )
            wav = render(spec, lang, text, rng)
            rel = f"wav/{utt_id}.wav"
            write_wav(out / rel, wav)
            records.append(Record(utt_id, rel, text, phonemes, lang, spec.sample_rate))
    with open(out / "manifest.jsonl", "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")
    return records
