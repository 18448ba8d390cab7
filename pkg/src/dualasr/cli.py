"""Command-line entry point: ``dualasr <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import frontend
from .config import dump_config, load_config
from .data import SpeechDataset, lm_corpus, load_manifest
from .decode import BeamConfig, decode_dataset
from .lm import NGramLM, train_ngram
from .metrics import score_manifest
from .vocab import (
    Vocabulary,
    build_grapheme_vocab,
    build_phoneme_vocab,
    phoneme_symbols,
)

log = logging.getLogger("dualasr")


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")


def _vocabs(vocab_dir: str) -> tuple[Vocabulary, Vocabulary]:
    d = Path(vocab_dir)
    return Vocabulary.load(d / "graphemes.txt"), Vocabulary.load(d / "phonemes.txt")


def cmd_synth(args) -> int:
    from .synth import SynthSpec, generate_synthetic_dataset

    spec = SynthSpec(
        languages=tuple(args.languages.split(",")),
        alphabet_size=args.alphabet_size,
        min_tokens=args.min_tokens,
        max_tokens=args.max_tokens,
        lexicon_seed=args.lexicon_seed,
    )
    recs = generate_synthetic_dataset(
        spec, args.out, args.utts_per_language, args.seed, args.prefix
    )
    print(f"wrote {len(recs)} utterances to {Path(args.out) / 'manifest.jsonl'}")
    return 0


def cmd_prepare_vocab(args) -> int:
    entries = load_manifest(args.manifest, check_audio=False)
    corpora: dict[str, list[str]] = {}
    for e in entries:
        corpora.setdefault(e.language, []).append(e.transcript)
    graphemes = build_grapheme_vocab(corpora)
    if args.phonemes:
        phones = args.phonemes.split(",")
    else:
        phones = sorted({p for e in entries for p in phoneme_symbols(e.phonemes) if p != "<space>"})
    phonemes = build_phoneme_vocab(phones)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    graphemes.save(out / "graphemes.txt")
    phonemes.save(out / "phonemes.txt")
    print(f"graphemes: {len(graphemes)} ids, phonemes: {len(phonemes)} ids -> {out}")
    return 0


def cmd_extract_features(args) -> int:
    entries = load_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for e in entries:
        feats = frontend.compute_fbank(frontend.read_wav(e.audio_path)).frames
        frontend.write_feature_cache(out / f"{e.utt_id}.fbk", feats)
    print(f"wrote {len(entries)} feature files to {out}")
    return 0


def cmd_lm_train(args) -> int:
    entries = [e for m in args.manifest for e in load_manifest(m, check_audio=False)]
    extra = ()
    if args.vocab:
        g = Vocabulary.load(args.vocab)
        extra = [s for s in g.symbols if s not in ("<blank>", "<sos/eos>")]
    lm = train_ngram(lm_corpus(entries), args.order, extra_vocab=extra)
    lm.save(args.out)
    print(f"trained {args.order}-gram LM on {len(entries)} sentences -> {args.out}")
    return 0


def cmd_train(args) -> int:
    from .train import Trainer

    cfg = load_config(args.config, args.set)
    graphemes, phonemes = _vocabs(args.vocab_dir)
    train_set = SpeechDataset(load_manifest(args.train), graphemes, phonemes, cfg.speed_factors)
    dev_set = SpeechDataset(load_manifest(args.dev), graphemes, phonemes) if args.dev else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(cfg))
    trainer = Trainer(cfg, train_set, dev_set, out)
    state = trainer.fit()
    print(f"trained {state.epoch} epochs ({state.step} steps); best dev loss {state.best_dev:.4f}")
    return 0


def cmd_decode(args) -> int:
    from .checkpoint import load_checkpoint

    if not Path(args.checkpoint).exists():
        raise FileNotFoundError(f"checkpoint {args.checkpoint} not found")
    ckpt = load_checkpoint(args.checkpoint)
    lm = NGramLM.load(args.lm) if args.lm else None
    ds = SpeechDataset(load_manifest(args.manifest), ckpt.graphemes, ckpt.phonemes)
    ds.normalizer = ckpt.normalizer
    beam = BeamConfig(args.beam_size, args.lm_weight if lm is not None else 0.0)
    hyps, _ = decode_dataset(ckpt.model, ds, lm, beam)
    with open(args.out, "w", encoding="utf-8") as fh:
        for utt, h in hyps.items():
            fh.write(h.to_json(utt) + "\n")
    print(f"decoded {len(hyps)} utterances -> {args.out}")
    return 0


def _read_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def cmd_score(args) -> int:
    refs = {}
    for d in _read_jsonl(args.ref):
        refs[d["utt_id"]] = (d["language"].strip("[]"), d.get("transcript", d.get("text", "")))
    hyps = {}
    for d in _read_jsonl(args.hyp):
        hyps[d["utt_id"]] = d.get("text", d.get("transcript", ""))
    report = score_manifest(refs, hyps)
    print(report.table())
    print(f"WER {100 * report.weighted_wer:.2f}")
    if args.json:
        Path(args.json).write_text(report.to_json(), encoding="utf-8")
    return 0


def cmd_sweep(args) -> int:
    from .sweep import sweep_phn_layers

    cfg = load_config(args.config, args.set)
    graphemes, phonemes = _vocabs(args.vocab_dir)
    train_set = SpeechDataset(load_manifest(args.train), graphemes, phonemes, cfg.speed_factors)
    test_set = SpeechDataset(load_manifest(args.test), graphemes, phonemes)
    dev_set = SpeechDataset(load_manifest(args.dev), graphemes, phonemes) if args.dev else None
    lm = NGramLM.load(args.lm) if args.lm else None
    if lm is None:
        cfg = cfg.replace(lm_weight=0.0)
    layers = [int(x) for x in args.layers.split(",")]
    rows = sweep_phn_layers(cfg, train_set, test_set, lm, layers, dev_set, args.out)
    for r in rows:
        print(f"phn_layers={r['phn_layers']} WER={100 * r['wer']:.2f} CER={100 * r['cer']:.2f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualasr", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic multilingual corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--utts-per-language", type=int, default=25)
    p.add_argument("--languages", default="TE,HI")
    p.add_argument("--alphabet-size", type=int, default=8)
    p.add_argument("--min-tokens", type=int, default=3)
    p.add_argument("--max-tokens", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lexicon-seed", type=int, default=1234)
    p.add_argument("--prefix", default="utt")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare-vocab", help="build grapheme and phoneme vocabularies")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--phonemes", help="comma-separated phoneme inventory (default: from manifest)")
    p.set_defaults(func=cmd_prepare_vocab)

    p = sub.add_parser("extract-features", help="write binary log-mel caches")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract_features)

    p = sub.add_parser("lm-train", help="train the character n-gram LM")
    p.add_argument("--manifest", required=True, action="append")
    p.add_argument("--vocab", help="graphemes.txt; its symbols join the LM vocabulary")
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_lm_train)

    p = sub.add_parser("train", help="train the dual-decoder model")
    _add_config_args(p)
    p.add_argument("--train", required=True)
    p.add_argument("--dev")
    p.add_argument("--vocab-dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="CTC beam search with LM shallow fusion")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--lm")
    p.add_argument("--beam-size", type=int, default=20)
    p.add_argument("--lm-weight", type=float, default=1.4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("score", help="WER/CER of hypotheses against references")
    p.add_argument("--ref", required=True,
                   help="manifest or JSONL with utt_id, language, transcript")
    p.add_argument("--hyp", required=True, help="JSONL with utt_id and text")
    p.add_argument("--json", help="also write the report as JSON")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("sweep", help="PHN-DEC depth sweep")
    _add_config_args(p)
    p.add_argument("--train", required=True)
    p.add_argument("--dev")
    p.add_argument("--test", required=True)
    p.add_argument("--vocab-dir", required=True)
    p.add_argument("--lm")
    p.add_argument("--layers", default="1,2,3,4,6")
    p.add_argument("--out", required=True, help="CSV table")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s"
    )
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError) as exc:
        print(f"dualasr {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
