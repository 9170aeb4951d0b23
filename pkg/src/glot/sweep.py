"""Ablation sweeps: retrain along one config axis and tabulate held-out metrics."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .config import TrainConfig, set_key
from .data import Dataset
from .evaluate import evaluate
from .train import train

# axis name -> config keys it sets (all receive the same value)
AXES: dict[str, tuple[str, ...]] = {
    "mask_ratio": ("alpha",),
    "nearby_w": ("model.w",),
    "mask_token": ("model.mask_token",),
    "hscr_vs_residual": ("model.corrector",),
    "gmm_only": ("model.use_lpc",),
    "detach": ("model.detach",),
    "pos_embedding": ("model.global_encoder.pos_embedding", "model.global_decoder.pos_embedding",
                      "model.local_encoder.pos_embedding"),
}
# axes whose boolean value is the negation of the config flag
NEGATED = {"gmm_only"}
METRICS = ("mpjpe", "pa_mpjpe", "mpvpe", "accel")


def apply_axis(cfg: TrainConfig, axis: str, value) -> TrainConfig:
    if axis not in AXES:
        raise KeyError(f"unknown sweep axis {axis!r}; choose from {sorted(AXES)}")
    out = copy.deepcopy(cfg)
    for key in AXES[axis]:
        set_key(out, key, value)
        if axis in NEGATED:
            set_key(out, key, not getattr(out.model, key.split(".")[-1]))
    return out.validate()


@dataclass
class SweepRow:
    value: str
    seed: int
    mpjpe: float
    pa_mpjpe: float
    mpvpe: float
    accel: float
    final_loss: float


@dataclass
class SweepResult:
    axis: str
    values: list[str]
    seeds: list[int]
    rows: list[SweepRow] = field(default_factory=list)

    def summary(self) -> dict[str, dict[str, float]]:
        """Seed-averaged metrics per value."""
        out = {}
        for v in self.values:
            sel = [r for r in self.rows if r.value == v]
            out[v] = {m: float(np.mean([getattr(r, m) for r in sel])) for m in METRICS}
        return out

    def to_dict(self) -> dict:
        return {"axis": self.axis, "values": self.values, "seeds": self.seeds,
                "rows": [asdict(r) for r in self.rows], "summary": self.summary()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def to_text(self) -> str:
        header = [self.axis] + [m.upper().replace("_", "-") for m in METRICS]
        body = [[v] + [f"{s[m]:.2f}" for m in METRICS] for v, s in self.summary().items()]
        widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
        fmt = lambda r: "  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths)))
        lines = [fmt(header), fmt(["-" * w for w in widths])] + [fmt(r) for r in body]
        lines.append(f"(mean over seeds {self.seeds}; errors in mm)")
        return "\n".join(lines) + "\n"


def run_sweep(base: TrainConfig, axis: str, values: Sequence, train_set: Dataset, test_set: Dataset,
              seeds: Sequence[int] = (0,), progress: Optional[Callable[[str], None]] = None) -> SweepResult:
    """Train one model per (value, seed) on ``train_set`` and evaluate it on ``test_set``."""
    result = SweepResult(axis, [str(v) for v in values], list(seeds))
    for v in values:
        for seed in seeds:
            cfg = apply_axis(base, axis, v)
            cfg.seed = int(seed)
            run = train(cfg, train_set)
            rep = evaluate((run.model, train_set.body), test_set)
            row = SweepRow(str(v), int(seed), rep.mpjpe, rep.pa_mpjpe, rep.mpvpe, rep.accel,
                           run.log[-1]["total"] if run.log else float("nan"))
            result.rows.append(row)
            if progress is not None:
                progress(f"{axis}={v} seed={seed} MPJPE {row.mpjpe:.2f} PA-MPJPE {row.pa_mpjpe:.2f}")
    return result
