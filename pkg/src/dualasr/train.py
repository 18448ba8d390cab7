"""Multi-task training loop with plateau LR decay and checkpointing."""
from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .checkpoint import load_checkpoint, restore_optimizer, save_checkpoint
from .config import TrainConfig
from .data import SpeechDataset
from .frontend import Normalizer
from .model import DualDecoderASR
from .numerics import NonFiniteError

log = logging.getLogger(__name__)


@dataclass
class TrainState:
    epoch: int = 0
    step: int = 0
    best_dev: float = math.inf
    history: list[dict] = field(default_factory=list)
    dev_losses: list[float] = field(default_factory=list)


class Trainer:
    def __init__(
        self,
        cfg: TrainConfig,
        train_set: SpeechDataset,
        dev_set: SpeechDataset | None = None,
        out_dir: str | Path | None = None,
        normalizer: Normalizer | None = None,
        on_step: Callable[[dict], None] | None = None,
    ):
        self.cfg = cfg
        self.train_set = train_set
        self.dev_set = dev_set if dev_set is not None else train_set
        self.out_dir = Path(out_dir) if out_dir else None
        self.on_step = on_step
        self.normalizer = normalizer or train_set.fit_normalizer()
        for ds in {id(self.train_set): self.train_set, id(self.dev_set): self.dev_set}.values():
            ds.normalizer = self.normalizer
        mcfg = cfg.model_config(len(train_set.graphemes), len(train_set.phonemes))
        self.model = DualDecoderASR(mcfg, seed=cfg.seed)
        self.optimizer = torch.optim.Adam(
            self.model.parameters(), lr=cfg.lr, betas=(cfg.adam_beta1, cfg.adam_beta2)
        )
        self.scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(
            self.optimizer, mode="min", factor=cfg.plateau_factor, patience=cfg.plateau_patience
        )
        self.rng = np.random.default_rng(cfg.seed + 1)
        self.weights = cfg.weights()
        self.state = TrainState()
        self.best_model = copy.deepcopy(self.model.state_dict())
        self._metrics_fh = None
        if self.out_dir:
            self.out_dir.mkdir(parents=True, exist_ok=True)

    # -- steps ---------------------------------------------------------------

    def train_step(self, batch, batch_id: str = "") -> dict:
        self.model.train()
        breakdown, _ = self.model.losses(batch, self.weights)
        if not bool(torch.isfinite(breakdown.total)):
            raise NonFiniteError(
                f"non-finite loss in batch {batch_id} (utterances {batch.utt_ids[:3]}...)"
            )
        self.optimizer.zero_grad()
        breakdown.total.backward()
        torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.cfg.grad_clip)
        self.optimizer.step()
        self.state.step += 1
        rec = {"step": self.state.step, **breakdown.as_floats(),
               "lr": self.optimizer.param_groups[0]["lr"]}
        self.state.history.append(rec)
        if self._metrics_fh:
            self._metrics_fh.write(json.dumps(rec) + "\n")
        if self.on_step:
            self.on_step(rec)
        return rec

    @torch.no_grad()
    def evaluate(self, ds: SpeechDataset | None = None) -> float:
        ds = ds or self.dev_set
        self.model.eval()
        total, n = 0.0, 0
        for batch in ds.batches(self.cfg.batch_size):
            b, _ = self.model.losses(batch, self.weights)
            total += float(b.total) * len(batch.utt_ids)
            n += len(batch.utt_ids)
        return total / n

    def run_epoch(self) -> dict:
        cfg = self.cfg
        recs = []
        for k, batch in enumerate(
            self.train_set.batches(cfg.batch_size, self.rng, cfg.speed_factors, cfg.policy())
        ):
            recs.append(self.train_step(batch, f"{self.state.epoch}:{k}"))
        dev = self.evaluate()
        self.scheduler.step(dev)
        self.state.epoch += 1
        self.state.dev_losses.append(dev)
        if dev < self.state.best_dev:
            self.state.best_dev = dev
            self.best_model = copy.deepcopy(self.model.state_dict())
            if self.out_dir:
                self.save(self.out_dir / "best.ckpt")
        if self.out_dir:
            self.save(self.out_dir / "last.ckpt")
        train_mean = float(np.mean([r["total"] for r in recs]))
        summary = {"epoch": self.state.epoch, "train_total": train_mean, "dev_total": dev,
                   "lr": self.optimizer.param_groups[0]["lr"]}
        log.info("epoch %(epoch)d train %(train_total).4f dev %(dev_total).4f lr %(lr).2e", summary)
        return summary

    def fit(self) -> TrainState:
        if self.out_dir:
            self._metrics_fh = open(self.out_dir / "metrics.jsonl", "a", encoding="utf-8")
        try:
            while self.state.epoch < self.cfg.epochs:
                summary = self.run_epoch()
                stop = self.cfg.stop_train_loss
                if stop is not None and summary["train_total"] < stop:
                    break
        finally:
            if self._metrics_fh:
                self._metrics_fh.close()
                self._metrics_fh = None
        return self.state

    def load_best(self) -> DualDecoderASR:
        self.model.load_state_dict(self.best_model)
        return self.model

    # -- persistence ---------------------------------------------------------

    def save(self, path: str | Path) -> None:
        save_checkpoint(
            path, self.model, self.train_set.graphemes, self.train_set.phonemes,
            self.normalizer, self.cfg.to_dict(), self.optimizer,
            extra={
                "epoch": self.state.epoch,
                "step": self.state.step,
                "best_dev": self.state.best_dev if math.isfinite(self.state.best_dev) else None,
                "scheduler": self.scheduler.state_dict(),
                "numpy_rng": self.rng.bit_generator.state,
            },
        )

    @classmethod
    def resume(
        cls,
        path: str | Path,
        train_set: SpeechDataset,
        dev_set: SpeechDataset | None = None,
        out_dir: str | Path | None = None,
    ) -> "Trainer":
        ckpt = load_checkpoint(path)
        cfg = TrainConfig(**ckpt.train_config)
        tr = cls(cfg, train_set, dev_set, out_dir, normalizer=ckpt.normalizer)
        tr.model.load_state_dict(ckpt.model.state_dict())
        tr.model.generator.set_state(ckpt.model.generator.get_state())
        restore_optimizer(tr.optimizer, tr.model, ckpt)
        sched = dict(ckpt.state["scheduler"])
        tr.scheduler.load_state_dict(sched)
        tr.rng.bit_generator.state = ckpt.state["numpy_rng"]
        tr.state.epoch = ckpt.state["epoch"]
        tr.state.step = ckpt.state["step"]
        best = ckpt.state.get("best_dev")
        tr.state.best_dev = math.inf if best is None else best
        return tr
