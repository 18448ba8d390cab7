"""PHN-DEC depth sweep: one model per phoneme-decoder depth, scored on a test set."""
from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Sequence

from .config import TrainConfig
from .data import SpeechDataset
from .decode import decode_dataset
from .lm import NGramLM
from .metrics import score_manifest
from .train import Trainer

log = logging.getLogger(__name__)

FIELDS = ("phn_layers", "grp_layers", "wer", "cer", "lid_acc", "epochs", "best_dev")


def sweep_phn_layers(
    base: TrainConfig,
    train_set: SpeechDataset,
    test_set: SpeechDataset,
    lm: NGramLM | None,
    layer_list: Sequence[int] = (1, 2, 3, 4, 6),
    dev_set: SpeechDataset | None = None,
    out_csv: str | Path | None = None,
) -> list[dict]:
    refs = {u.utt_id: (u.language, u.transcript) for u in test_set.utterances}
    rows = []
    for depth in layer_list:
        cfg = base.replace(phn_layers=int(depth))
        trainer = Trainer(cfg, train_set, dev_set)
        state = trainer.fit()
        model = trainer.load_best()
        test_set.normalizer = trainer.normalizer
        hyps, lid = decode_dataset(model, test_set, lm, cfg.beam(), cfg.batch_size)
        report = score_manifest(refs, {k: h.text for k, h in hyps.items()})
        acc = sum(lid[u] == refs[u][0] for u in refs) / len(refs)
        row = {
            "phn_layers": int(depth),
            "grp_layers": cfg.grp_layers,
            "wer": report.weighted_wer,
            "cer": report.weighted_cer,
            "lid_acc": acc,
            "epochs": state.epoch,
            "best_dev": state.best_dev,
        }
        log.info("phn_layers=%d wer=%.4f cer=%.4f", depth, row["wer"], row["cer"])
        rows.append(row)
    if out_csv:
        write_table(rows, out_csv)
    return rows


def write_table(rows: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow(r)
