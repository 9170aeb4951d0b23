"""Training loop with masked global supervision and a warmup/cosine Adam schedule."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from .config import TrainConfig, dump_flat, to_flat
from .data import Dataset, window_indices
from .errors import DegenerateRotation, NaNLoss
from .gmm import sample_mask, stack_masks
from .losses import LossBreakdown, WindowBatch, total_loss
from .model import GLoT, save_checkpoint
from .nncore.optim import AdamState, Schedule, adam_step

log = logging.getLogger(__name__)

DTYPES = {"float32": torch.float32, "float64": torch.float64}


class SequenceBank:
    """All sequences of a dataset as tensors, for fast window gathering."""

    def __init__(self, ds: Dataset, dtype=torch.float32):
        self.dtype = dtype
        self.lengths = [s.length for s in ds.sequences]
        conv = lambda a: torch.as_tensor(np.asarray(a), dtype=dtype)
        self.features = [conv(s.features) for s in ds.sequences]
        self.theta = [conv(s.gt_theta) for s in ds.sequences]
        self.beta = [conv(s.gt_beta) for s in ds.sequences]
        self.phi = [conv(s.gt_phi) for s in ds.sequences]
        self.j3d = [conv(s.gt_joints3d) for s in ds.sequences]
        self.j2d = [conv(s.gt_joints2d) for s in ds.sequences]

    def batch(self, items: list[tuple[int, int]], T: int) -> WindowBatch:
        """Windows for (sequence index, center frame) pairs."""
        cols = {k: [] for k in ("features", "theta", "beta", "phi", "joints3d", "joints2d")}
        for s, c in items:
            idx = torch.as_tensor(window_indices(c, T, self.lengths[s])[0])
            cols["features"].append(self.features[s][idx])
            cols["theta"].append(self.theta[s][idx])
            cols["beta"].append(self.beta[s].expand(T, -1))
            cols["phi"].append(self.phi[s][idx])
            cols["joints3d"].append(self.j3d[s][idx])
            cols["joints2d"].append(self.j2d[s][idx])
        return WindowBatch(**{k: torch.stack(v) for k, v in cols.items()})


@dataclass
class TrainResult:
    model: GLoT
    log: list[dict] = field(default_factory=list)
    checkpoint: Optional[Path] = None


def schedule_for(cfg: TrainConfig) -> Schedule:
    return Schedule(cfg.lr, cfg.warmup, cfg.horizon or cfg.steps)


def train(cfg: TrainConfig, dataset: Dataset, out_dir=None,
          on_step: Optional[Callable[[int, GLoT], None]] = None) -> TrainResult:
    """Train from scratch; deterministic for a given config and dataset.

    ``on_step(step, model)`` is called before each update (and once after the
    last one) so callers can evaluate intermediate models.
    """
    cfg.validate()
    if not dataset.sequences:
        raise ValueError("dataset is empty")
    dtype = DTYPES[cfg.dtype]
    torch.manual_seed(cfg.seed)
    model = GLoT(cfg.model, seed=cfg.seed).to(dtype)
    model.train()
    store = model.store()
    state = AdamState()
    sched = schedule_for(cfg)
    bank = SequenceBank(dataset, dtype)
    rng = np.random.default_rng(cfg.seed)
    T = cfg.model.T
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(dump_flat(cfg))
    result = TrainResult(model)
    log_fh = open(out / "train_log.jsonl", "w") if out is not None else None
    try:
        for step in range(cfg.steps):
            if on_step is not None:
                on_step(step, model)
            seqs = rng.integers(0, len(bank.lengths), cfg.batch_size)
            items = [(int(s), int(rng.integers(0, bank.lengths[s]))) for s in seqs]
            masks = [sample_mask(T, cfg.alpha, rng) for _ in items]
            masked, kept = stack_masks(masks)
            batch = bank.batch(items, T)

            store.zero_grad()
            pred = model(batch.features, masked, kept)
            try:
                losses = total_loss(pred, batch, masked, cfg.weights, dataset.body)
            except DegenerateRotation as exc:
                # non-finite network outputs surface here before the loss exists
                _dump_nan(out, step, items, masks, None)
                raise NaNLoss(f"non-finite prediction at step {step}: {exc}") from exc
            if not torch.isfinite(losses.total):
                _dump_nan(out, step, items, masks, losses)
                raise NaNLoss(f"non-finite loss at step {step}: {losses.as_floats()}")
            losses.total.backward()
            lr = adam_step(store, store.grads(), state, sched)

            entry = {"step": step, "lr": lr, **losses.as_floats()}
            result.log.append(entry)
            if log_fh is not None:
                log_fh.write(json.dumps(entry) + "\n")
            if step % 50 == 0:
                log.info("step %d lr %.3g loss %.5f", step, lr, entry["total"])
            if out is not None and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(out / f"checkpoint_{step + 1:06d}.bin", model, dataset.body,
                                {"step": step + 1, "train": to_flat(cfg)})
        if on_step is not None:
            on_step(cfg.steps, model)
    finally:
        if log_fh is not None:
            log_fh.close()
    model.eval()
    if out is not None:
        result.checkpoint = out / "checkpoint.bin"
        save_checkpoint(result.checkpoint, model, dataset.body, {"step": cfg.steps, "train": to_flat(cfg)})
    return result


def _dump_nan(out, step, items, masks, losses: Optional[LossBreakdown]) -> None:
    info = {"step": step, "windows": items, "masked": [list(m.masked_indices) for m in masks],
            "losses": losses.as_floats() if losses is not None else None}
    log.error("NaN loss: %s", info)
    if out is not None:
        (out / "nan_batch.json").write_text(json.dumps(info, indent=1))
