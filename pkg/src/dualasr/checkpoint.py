"""Checkpoint container.

A checkpoint is a NumPy ``.npz`` archive of named arrays:

``model/<param>``        float32 weight or buffer, torch ``state_dict`` name
``optim/<param>/<key>``  float32 Adam moment (``exp_avg``, ``exp_avg_sq``)
``cmvn/mean``, ``cmvn/std``  float32 ``[40]`` feature normaliser
``rng/torch``            uint8 state of the model's dropout generator
``meta``                 uint8 UTF-8 JSON document with keys
                         ``format``, ``model_config``, ``train_config``,
                         ``graphemes``, ``phonemes`` (symbol lists, id order),
                         ``epoch``, ``step``, ``best_dev``, ``adam_steps``,
                         ``param_groups``, ``scheduler``, ``numpy_rng``

Optimizer entries, ``rng/torch`` and training counters are present only in
training checkpoints; an inference checkpoint needs ``model/*``, ``cmvn/*``
and ``meta``.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .frontend import Normalizer
from .model import DualDecoderASR, ModelConfig
from .vocab import Vocabulary

FORMAT = "dualasr-checkpoint/1"


@dataclass
class Checkpoint:
    model: DualDecoderASR
    graphemes: Vocabulary
    phonemes: Vocabulary
    normalizer: Normalizer
    train_config: dict = field(default_factory=dict)
    state: dict = field(default_factory=dict)  # remaining meta entries
    optim: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    torch_rng: np.ndarray | None = None


def save_checkpoint(
    path: str | Path,
    model: DualDecoderASR,
    graphemes: Vocabulary,
    phonemes: Vocabulary,
    normalizer: Normalizer,
    train_config: dict | None = None,
    optimizer: torch.optim.Optimizer | None = None,
    extra: dict | None = None,
) -> None:
    arrays: dict[str, np.ndarray] = {}
    for name, t in model.state_dict().items():
        arrays[f"model/{name}"] = t.detach().cpu().numpy().astype(np.float32)
    arrays["cmvn/mean"] = normalizer.mean.astype(np.float32)
    arrays["cmvn/std"] = normalizer.std.astype(np.float32)
    meta = {
        "format": FORMAT,
        "model_config": model.cfg.to_dict(),
        "train_config": train_config or {},
        "graphemes": list(graphemes.symbols),
        "phonemes": list(phonemes.symbols),
    }
    if optimizer is not None:
        names = {id(p): n for n, p in model.named_parameters()}
        steps = {}
        for group in optimizer.param_groups:
            for p in group["params"]:
                st = optimizer.state.get(p)
                if not st:
                    continue
                n = names[id(p)]
                steps[n] = int(st["step"])
                for key in ("exp_avg", "exp_avg_sq"):
                    arrays[f"optim/{n}/{key}"] = st[key].detach().cpu().numpy().astype(np.float32)
        meta["adam_steps"] = steps
        meta["param_groups"] = [
            {k: v for k, v in g.items() if k != "params"} for g in optimizer.param_groups
        ]
        arrays["rng/torch"] = model.generator.get_state().numpy()
    meta.update(extra or {})
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path, dtype=torch.float32) -> Checkpoint:
    with np.load(str(path)) as z:
        arrays = {k: z[k] for k in z.files}
    meta = json.loads(arrays.pop("meta").tobytes().decode("utf-8"))
    if meta.get("format") != FORMAT:
        raise ValueError(f"{path}: unknown checkpoint format {meta.get('format')!r}")
    model = DualDecoderASR(ModelConfig.from_dict(meta["model_config"]))
    state = {
        k[len("model/"):]: torch.from_numpy(v.copy())
        for k, v in arrays.items() if k.startswith("model/")
    }
    model.load_state_dict(state)
    model.to(dtype)
    optim: dict[str, dict[str, np.ndarray]] = {}
    for k, v in arrays.items():
        if k.startswith("optim/"):
            name, key = k[len("optim/"):].rsplit("/", 1)
            optim.setdefault(name, {})[key] = v
    torch_rng = arrays.get("rng/torch")
    if torch_rng is not None:
        model.generator.set_state(torch.from_numpy(torch_rng.copy()))
    consumed = ("format", "model_config", "graphemes", "phonemes", "train_config")
    rest = {k: v for k, v in meta.items() if k not in consumed}
    return Checkpoint(
        model=model,
        graphemes=Vocabulary("grapheme", tuple(meta["graphemes"])),
        phonemes=Vocabulary("phoneme", tuple(meta["phonemes"])),
        normalizer=Normalizer(arrays["cmvn/mean"], arrays["cmvn/std"]),
        train_config=meta.get("train_config", {}),
        state=rest,
        optim=optim,
        torch_rng=torch_rng,
    )


def restore_optimizer(
    optimizer: torch.optim.Optimizer, model: DualDecoderASR, ckpt: Checkpoint
) -> None:
    names = {id(p): n for n, p in model.named_parameters()}
    for group, saved in zip(optimizer.param_groups, ckpt.state.get("param_groups", [])):
        group.update({k: (tuple(v) if isinstance(v, list) else v) for k, v in saved.items()})
    steps = ckpt.state.get("adam_steps", {})
    for group in optimizer.param_groups:
        for p in group["params"]:
            n = names[id(p)]
            if n not in ckpt.optim:
                continue
            optimizer.state[p] = {
                "step": torch.tensor(float(steps[n])),
                "exp_avg": torch.from_numpy(ckpt.optim[n]["exp_avg"].copy()).to(p.dtype),
                "exp_avg_sq": torch.from_numpy(ckpt.optim[n]["exp_avg_sq"].copy()).to(p.dtype),
            }
