"""The full global-to-local estimator and its checkpoint container."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
from torch import nn

from .config import ModelConfig, model_from_flat, to_flat
from .container import read_container, write_container
from .data import body_from_arrays, mid_index
from .geometry import BodyModel
from .gmm import GlobalMotionModel, GMMOutput, ParamTriple
from .lpc import LocalParameterCorrection, LPCOutput, select_nearby
from .nncore.params import ParamStore

CHECKPOINT_KIND = "checkpoint"


@dataclass
class Prediction:
    gmm: GMMOutput
    lpc: Optional[LPCOutput]
    mid: int

    @property
    def initial(self) -> ParamTriple:
        """Global estimate for every frame, (B, T, ...)."""
        return self.gmm.params

    @property
    def final(self) -> ParamTriple:
        """Mid-frame estimate: corrected when the local branch is enabled."""
        if self.lpc is None:
            return self.gmm.params.select((slice(None), self.mid))
        return self.lpc.correction.params

    def attention(self) -> dict[str, list]:
        out = {"encoder": self.gmm.memory.attention, "decoder": self.gmm.decoder_attention}
        if self.lpc is not None:
            out["local"] = self.lpc.local_attention
            out["cross"] = self.lpc.cross_attention
        return out


class GLoT(nn.Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg.validate()
        self.mid = mid_index(cfg.T)
        self.gmm = GlobalMotionModel(cfg)
        self.lpc = LocalParameterCorrection(cfg) if cfg.use_lpc else None
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        self.gmm.reset_parameters(gen)
        if self.lpc is not None:
            self.lpc.reset_parameters(gen)

    def store(self) -> ParamStore:
        sections = OrderedDict(gmm=self.gmm)
        if self.lpc is not None:
            sections["lpc"] = self.lpc
        return ParamStore(sections)

    def forward(self, S: torch.Tensor, masked: torch.Tensor, kept: torch.Tensor,
                detach: Optional[bool] = None, order=None) -> Prediction:
        gmm_out = self.gmm(S, masked, kept)
        lpc_out = None
        if self.lpc is not None:
            window = select_nearby(S, self.mid, self.cfg.w)
            init = gmm_out.params.select((slice(None), self.mid))
            lpc_out = self.lpc(window, gmm_out.memory, init,
                               self.cfg.detach if detach is None else detach, order)
        return Prediction(gmm_out, lpc_out, self.mid)


def count_params_closed_form(cfg: ModelConfig) -> "OrderedDict[str, int]":
    out = OrderedDict(gmm=GlobalMotionModel.count(cfg))
    if cfg.use_lpc:
        out["lpc"] = LocalParameterCorrection.count(cfg)
    return out


def save_checkpoint(path, model: GLoT, body: BodyModel, extra: Optional[dict] = None) -> None:
    arrays: "OrderedDict[str, np.ndarray]" = OrderedDict(
        (f"body_model/{k}", v) for k, v in body.arrays().items())
    arrays.update(model.store().to_arrays())
    meta = {"kind": CHECKPOINT_KIND, "model": to_flat(model.cfg), "body_seed": body.seed}
    meta.update(extra or {})
    write_container(path, arrays, meta)


def load_checkpoint(path, dtype=None) -> tuple[GLoT, BodyModel, dict]:
    meta, arrays = read_container(path)
    if meta.get("kind") != CHECKPOINT_KIND:
        raise ValueError(f"{path} is not a checkpoint (kind={meta.get('kind')!r})")
    cfg = model_from_flat(meta["model"])
    model = GLoT(cfg)
    params = {k: v for k, v in arrays.items() if not k.startswith("body_model/")}
    first = next(iter(params.values()))
    model.to(dtype or torch.from_numpy(first[:0].copy()).dtype)
    model.store().load_arrays(params)
    body = body_from_arrays(arrays, int(meta.get("body_seed", 0)))
    return model, body, meta
