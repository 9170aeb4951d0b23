"""Self-contained verification problems: gradient check and detach isolation at the tiny config."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .config import TrainConfig, tiny_preset
from .data import generate_dataset
from .geometry import BodyModel
from .gmm import MaskSpec, stack_masks
from .losses import LPC_TERMS, WindowBatch, total_loss, weight_for
from .model import GLoT
from .nncore.gradcheck import GradCheckReport, grad_check
from .train import SequenceBank

# parameters that feed the global estimate only (never the global memory)
GLOBAL_ESTIMATE_PREFIXES = ("gmm/enc_to_dec", "gmm/mask_token", "gmm/dec_pos", "gmm/decoder",
                            "gmm/regressor")


@dataclass
class TinyProblem:
    cfg: TrainConfig
    model: GLoT
    body: BodyModel
    batch: WindowBatch
    masked: torch.Tensor
    kept: torch.Tensor

    def loss(self, detach=None, terms=None) -> torch.Tensor:
        pred = self.model(self.batch.features, self.masked, self.kept, detach=detach)
        lb = total_loss(pred, self.batch, self.masked, self.cfg.weights, self.body)
        if terms is None:
            return lb.total
        comps = lb.components()
        return sum(weight_for(t, self.cfg.weights) * comps[t] for t in terms)


def tiny_problem(seed: int = 0, cfg: TrainConfig | None = None, n_vertices: int = 12,
                 jitter: float = 0.05) -> TinyProblem:
    """64-bit tiny model, two windows and fixed masks.

    ``jitter`` adds seeded noise to every parameter so that small-gain output
    layers and the ancestor chain contribute non-negligible gradients.
    """
    cfg = cfg or tiny_preset()
    cfg.dtype = "float64"
    m = cfg.model
    ds = generate_dataset(seed, 2, L=3 * m.T, feature_dim=m.feature_dim, n_vertices=n_vertices,
                          body_seed=seed, T=m.T)
    model = GLoT(m, seed=seed).double()
    gen = torch.Generator().manual_seed(seed + 1)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(torch.randn(p.shape, generator=gen, dtype=p.dtype), alpha=jitter)
    bank = SequenceBank(ds, torch.float64)
    batch = bank.batch([(0, m.T), (1, 2)], m.T)
    T, mid = m.T, model.mid
    n = round(cfg.alpha * T) or 1
    # first window masks a run containing the mid frame, second keeps the mid frame
    first = sorted({(mid - n // 2 + i) % T for i in range(n)})
    second = sorted({(mid + 1 + i) % T for i in range(n)})
    masked, kept = stack_masks([MaskSpec(tuple(first), cfg.alpha, T), MaskSpec(tuple(second), cfg.alpha, T)])
    return TinyProblem(cfg, model, ds.body, batch, masked, kept)


def run_grad_check(seed: int = 0, eps: float = 1e-6, rtol: float = 1e-3, max_entries: int = 8,
                   n_directions: int = 2) -> GradCheckReport:
    """Full-loss check with detachment off.

    Detachment blocks a path that finite differences still see, so the check
    runs on the undetached loss; ``detach_isolation`` covers the detached case.
    """
    prob = tiny_problem(seed)
    return grad_check(lambda: prob.loss(detach=False), prob.model.store(), eps=eps, rtol=rtol,
                      max_entries=max_entries, n_directions=n_directions, seed=seed)


def detach_isolation(seed: int = 0) -> dict[str, float]:
    """Largest |gradient| of the local-branch loss on global-estimate parameters.

    Returns the value with detachment on (must be exactly 0) and off (should
    be positive, showing the path exists).
    """
    prob = tiny_problem(seed)
    store = prob.model.store()
    out = {}
    for detach in (True, False):
        store.zero_grad()
        prob.loss(detach=detach, terms=LPC_TERMS).backward()
        vals = [float(g.abs().max()) for n, g in store.grads().items()
                if n.startswith(GLOBAL_ESTIMATE_PREFIXES)]
        out["detached" if detach else "attached"] = max(vals)
    store.zero_grad()
    return out


def masked_count_table(T: int = 16, ratios=tuple(np.arange(8) / 8)) -> list[tuple[float, int]]:
    from .gmm import n_masked

    return [(float(a), n_masked(T, float(a))) for a in ratios]
