"""Adam with a linear-warmup / cosine-annealing learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch

from ..errors import NaNGradient
from .params import ParamStore


@dataclass
class Schedule:
    base_lr: float = 1e-4
    warmup: int = 0
    horizon: int = 1000

    def __call__(self, step: int) -> float:
        if step < self.warmup:
            return self.base_lr * step / self.warmup
        if step >= self.horizon:
            return 0.0
        span = max(self.horizon - self.warmup, 1)
        return self.base_lr * 0.5 * (1.0 + math.cos(math.pi * (step - self.warmup) / span))


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(store: ParamStore, grads: dict[str, torch.Tensor], state: AdamState,
              schedule: Schedule) -> float:
    """One in-place Adam update at ``lr = schedule(state.step)``; returns that lr."""
    for name, g in grads.items():
        if not torch.isfinite(g).all():
            raise NaNGradient(f"non-finite gradient in {name} at step {state.step}")
    lr = schedule(state.step)
    t = state.step + 1
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    with torch.no_grad():
        for name, p in store:
            g = grads[name]
            m = state.m.get(name)
            if m is None:
                m = state.m[name] = torch.zeros_like(p)
                state.v[name] = torch.zeros_like(p)
            v = state.v[name]
            m.mul_(state.beta1).add_(g, alpha=1.0 - state.beta1)
            v.mul_(state.beta2).addcmul_(g, g, value=1.0 - state.beta2)
            if lr:
                p.sub_(lr * (m / bc1) / ((v / bc2).sqrt() + state.eps))
    state.step = t
    return lr
