"""Named parameter registry spanning several modules."""
from __future__ import annotations

from collections import OrderedDict

import numpy as np
import torch
from torch import nn


class ParamStore:
    """Ordered ``section/name -> Parameter`` view over a set of modules.

    Iteration order is section insertion order, then each module's own
    ``named_parameters`` order, so it is stable across runs.
    """

    def __init__(self, sections: "OrderedDict[str, nn.Module] | dict[str, nn.Module]"):
        self._params: OrderedDict[str, nn.Parameter] = OrderedDict()
        for section, module in sections.items():
            for name, p in module.named_parameters():
                key = f"{section}/{name}"
                if key in self._params:
                    raise ValueError(f"duplicate parameter name {key}")
                self._params[key] = p

    def __iter__(self):
        return iter(self._params.items())

    def __len__(self):
        return len(self._params)

    def __getitem__(self, name) -> nn.Parameter:
        return self._params[name]

    def names(self) -> list[str]:
        return list(self._params)

    def count(self) -> int:
        return sum(p.numel() for p in self._params.values())

    def section_counts(self) -> "OrderedDict[str, int]":
        out: OrderedDict[str, int] = OrderedDict()
        for name, p in self._params.items():
            sec = name.split("/", 1)[0]
            out[sec] = out.get(sec, 0) + p.numel()
        return out

    def grads(self) -> dict[str, torch.Tensor]:
        return {n: (p.grad if p.grad is not None else torch.zeros_like(p)) for n, p in self}

    def zero_grad(self) -> None:
        for _, p in self:
            p.grad = None

    def to_arrays(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, p.detach().cpu().numpy().copy()) for n, p in self)

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(arrays)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)[:5]}")
        with torch.no_grad():
            for n, p in self:
                a = torch.as_tensor(np.asarray(arrays[n]))
                if tuple(a.shape) != tuple(p.shape):
                    raise ValueError(f"{n}: shape {tuple(a.shape)} != {tuple(p.shape)}")
                p.copy_(a.to(p.dtype))
