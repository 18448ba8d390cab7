import numpy as np
import pytest
import torch

from dualasr.encoder import EncoderConfig
from dualasr.model import ModelConfig
from dualasr.vocab import build_grapheme_vocab, build_phoneme_vocab, encode_target


def tiny_encoder(**kw) -> EncoderConfig:
    base = dict(num_blocks=2, attn_dim=16, num_heads=2, ffn_dim=32, depthwise_kernel=5, dropout=0.0)
    base.update(kw)
    return EncoderConfig(**base)


def random_feats(lens, seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(len(lens), max(lens), 40, generator=g, dtype=dtype)
    return x, torch.tensor(lens)


@pytest.fixture
def toy_vocabs():
    gv = build_grapheme_vocab({"TE": ["ab ca", "bc"], "HI": ["de f"]})
    pv = build_phoneme_vocab(["p", "t", "k"])
    return gv, pv


@pytest.fixture
def toy_targets(toy_vocabs):
    gv, pv = toy_vocabs
    return [
        encode_target("ab ca", "p t | k p", "TE", gv, pv),
        encode_target("de f", "t k | p", "HI", gv, pv),
    ]


def tiny_model_config(gv, pv, **kw) -> ModelConfig:
    base = dict(
        encoder=tiny_encoder(), grp_layers=1, phn_layers=1, decoder_heads=2, decoder_ffn=32,
        decoder_dropout=0.0, grapheme_vocab_size=len(gv), phoneme_vocab_size=len(pv),
        lid_hidden=(8, 8),
    )
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def np_rng():
    return np.random.default_rng(0)


def synth_corpus(out_dir, utts_per_language, seed, prefix="utt", **spec_kw):
    """Synthetic corpus plus vocabularies built from it."""
    from dualasr.data import load_manifest
    from dualasr.synth import SynthSpec, generate_synthetic_dataset

    spec = SynthSpec(**spec_kw)
    generate_synthetic_dataset(spec, out_dir, utts_per_language, seed, prefix)
    entries = load_manifest(f"{out_dir}/manifest.jsonl")
    corpora = {}
    for e in entries:
        corpora.setdefault(e.language, []).append(e.transcript)
    return spec, entries, build_grapheme_vocab(corpora), build_phoneme_vocab(spec.phoneme_set())


def small_train_config(**kw):
    from dualasr.config import TrainConfig

    base = dict(
        enc_blocks=1, attn_dim=16, heads=2, ffn_dim=32, depthwise_kernel=5, dropout=0.0,
        grp_layers=1, phn_layers=1, dec_ffn=32, lid_hidden=(8, 8), batch_size=8,
        speed_factors=(1.0,), spec_augment=False, epochs=2, beam_size=4,
    )
    base.update(kw)
    return TrainConfig(**base)


# acceptance criterion verdicts, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def report_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
