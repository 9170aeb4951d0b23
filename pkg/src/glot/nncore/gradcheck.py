"""Central-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import torch

from .params import ParamStore


@dataclass
class GradCheckReport:
    per_param: dict[str, float] = field(default_factory=dict)
    abs_diff: dict[str, float] = field(default_factory=dict)
    rtol: float = 1e-3
    n_evals: int = 0

    @property
    def max_rel_err(self) -> float:
        return max(self.per_param.values(), default=0.0)

    @property
    def worst(self) -> Optional[str]:
        if not self.per_param:
            return None
        return max(self.per_param, key=self.per_param.get)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.rtol

    def to_text(self) -> str:
        lines = [f"{name:60s} rel {err:.3e}  abs {self.abs_diff.get(name, 0.0):.3e}"
                 for name, err in self.per_param.items()]
        lines.append(f"max_rel_err {self.max_rel_err:.3e} (rtol {self.rtol:g}) over "
                     f"{len(self.per_param)} parameters, {self.n_evals} loss evaluations")
        lines.append("PASS" if self.passed else f"FAIL worst={self.worst}")
        return "\n".join(lines) + "\n"


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    """|a - n| / max(|a|, |n|); differences below ``floor`` count as agreement.

    The floor absorbs finite-difference roundoff on gradients that are exactly
    zero (e.g. key biases, which softmax ignores).
    """
    diff = abs(analytic - numeric)
    if diff <= floor:
        return 0.0
    return diff / max(abs(analytic), abs(numeric))


def grad_check(loss_fn: Callable[[], torch.Tensor], store: ParamStore, eps: float = 1e-6,
               rtol: float = 1e-3, floor: float = 1e-8, max_entries: int = 8,
               n_directions: int = 1, seed: int = 0,
               grads: Optional[dict[str, torch.Tensor]] = None) -> GradCheckReport:
    """Compare analytic gradients of ``loss_fn`` against central differences.

    For every parameter tensor, up to ``max_entries`` entries (all of them for
    small tensors) are perturbed one at a time, and ``n_directions`` random
    unit directions over the whole tensor are checked as directional
    derivatives. ``grads`` overrides the analytic gradients (for negative
    controls); otherwise they come from one backward pass.
    """
    if grads is None:
        store.zero_grad()
        loss_fn().backward()
        grads = {n: g.detach().clone() for n, g in store.grads().items()}
        store.zero_grad()

    rng = np.random.default_rng(seed)
    report = GradCheckReport(rtol=rtol)

    def fd(p: torch.Tensor, direction: torch.Tensor) -> float:
        with torch.no_grad():
            p.add_(direction, alpha=eps)
            up = float(loss_fn())
            p.add_(direction, alpha=-2 * eps)
            down = float(loss_fn())
            p.add_(direction, alpha=eps)
        report.n_evals += 2
        return (up - down) / (2 * eps)

    for name, p in store:
        g = grads[name].reshape(-1)
        n = p.numel()
        worst = worst_abs = 0.0
        idx = np.arange(n) if n <= max_entries else rng.choice(n, size=max_entries, replace=False)
        for i in idx:
            e = torch.zeros(n, dtype=p.dtype)
            e[int(i)] = 1.0
            a, num = float(g[int(i)]), fd(p, e.reshape(p.shape))
            worst = max(worst, relative_error(a, num, floor))
            worst_abs = max(worst_abs, abs(a - num))
        if n > max_entries:
            for _ in range(n_directions):
                d = torch.as_tensor(rng.normal(size=n), dtype=p.dtype)
                d /= d.norm()
                a, num = float(g @ d), fd(p, d.reshape(p.shape))
                worst = max(worst, relative_error(a, num, floor))
                worst_abs = max(worst_abs, abs(a - num))
        report.per_param[name] = worst
        report.abs_diff[name] = worst_abs
    return report
