"""Manifest ingestion, feature preparation and length-sorted batching."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .frontend import (
    Normalizer,
    SpecAugmentPolicy,
    compute_fbank,
    mask_bands,
    read_wav,
    speed_perturb,
)
from .model import Batch, make_batch
from .vocab import (
    LANGUAGES,
    TargetEncoding,
    Vocabulary,
    encode_target,
    language_tag,
    transcript_symbols,
)


@dataclass
class ManifestEntry:
    utt_id: str
    audio_path: Path
    transcript: str
    phonemes: str
    language: str
    sample_rate: int


def load_manifest(path: str | Path, check_audio: bool = True) -> list[ManifestEntry]:
    """Read JSON-lines records; relative audio paths resolve against the manifest's folder."""
    path = Path(path)
    entries = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            d = json.loads(line)
            lang = d["language"].strip("[]")
            if lang not in LANGUAGES:
                raise ValueError(f"{path}:{n}: language {d['language']!r} not in {LANGUAGES}")
            audio = Path(d["audio_path"])
            if not audio.is_absolute():
                audio = path.parent / audio
            if check_audio and not audio.exists():
                raise FileNotFoundError(f"{path}:{n}: audio file {audio} not found")
            entries.append(
                ManifestEntry(
                    d["utt_id"], audio, d["transcript"], d.get("phonemes", ""),
                    lang, int(d.get("sample_rate", 16000)),
                )
            )
    return entries


def lm_corpus(entries: Sequence[ManifestEntry]) -> list[list[str]]:
    """LM training sentences: language tag followed by grapheme tokens."""
    return [[language_tag(e.language)] + transcript_symbols(e.transcript) for e in entries]


def _features(entry: ManifestEntry, factors: Sequence[float]) -> dict[float, np.ndarray]:
    wav = read_wav(entry.audio_path)
    return {f: compute_fbank(speed_perturb(wav, f)).frames for f in factors}


@dataclass
class Utterance:
    utt_id: str
    language: str
    transcript: str
    # speed factor -> raw log-mel features
    views: dict[float, np.ndarray]
    target: TargetEncoding


class SpeechDataset:
    """Features for every utterance of a manifest, kept in memory."""

    def __init__(
        self,
        entries: Sequence[ManifestEntry],
        graphemes: Vocabulary,
        phonemes: Vocabulary,
        speed_factors: Sequence[float] = (1.0,),
        workers: int = 1,
    ):
        factors = tuple(sorted(set(speed_factors) | {1.0}))
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            views = list(pool.map(lambda e: _features(e, factors), entries))
        self.graphemes = graphemes
        self.phonemes = phonemes
        self.factors = factors
        self.utterances = [
            Utterance(
                e.utt_id, e.language, e.transcript, v,
                encode_target(e.transcript, e.phonemes, e.language, graphemes, phonemes),
            )
            for e, v in zip(entries, views)
        ]
        self.normalizer = Normalizer.identity()

    def __len__(self) -> int:
        return len(self.utterances)

    def fit_normalizer(self) -> Normalizer:
        return Normalizer.fit([u.views[1.0] for u in self.utterances])

    def batches(
        self,
        batch_size: int,
        rng: np.random.Generator | None = None,
        speed_factors: Sequence[float] = (1.0,),
        policy: SpecAugmentPolicy | None = None,
    ) -> Iterator[Batch]:
        """Length-sorted batches; with ``rng`` the batch order is shuffled and
        each utterance gets a random speed view and SpecAugment masks."""
        order = sorted(range(len(self.utterances)), key=lambda i: (
            self.utterances[i].views[1.0].shape[0], self.utterances[i].utt_id))
        chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
        if rng is not None:
            chunks = [chunks[i] for i in rng.permutation(len(chunks))]
        for chunk in chunks:
            utts = [self.utterances[i] for i in chunk]
            feats = []
            for u in utts:
                f = 1.0
                if rng is not None and len(speed_factors) > 1:
                    f = float(speed_factors[int(rng.integers(0, len(speed_factors)))])
                x = self.normalizer(u.views[f])
                if rng is not None and policy is not None:
                    x, _ = mask_bands(x, policy, rng)
                feats.append(x)
            yield make_batch(
                [u.utt_id for u in utts], feats, [u.target for u in utts], self.phonemes.sos_eos
            )
