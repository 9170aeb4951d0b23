"""Training objective: masked global terms, velocity terms and mid-frame correction terms."""
from __future__ import annotations

from dataclasses import dataclass, fields

import torch

from .config import LossWeights
from .geometry import BodyModel, params_to_joints, project_weak_perspective
from .gmm import ParamTriple
from .metrics import velocity_loss
from .model import Prediction

GMM_TERMS = ("gmm_j3d", "gmm_j2d", "gmm_pose", "gmm_shape", "gmm_vel2d", "gmm_vel3d")
LPC_TERMS = ("lpc_j3d", "lpc_j2d", "lpc_pose", "lpc_shape")
WEIGHT_OF = {
    "j3d": "j3d", "j2d": "j2d", "pose": "pose", "shape": "shape", "vel2d": "vel", "vel3d": "vel",
}


@dataclass
class WindowBatch:
    """Ground truth for B windows of T frames (torch tensors)."""
    features: torch.Tensor     # (B, T, F)
    theta: torch.Tensor        # (B, T, 24, 6)
    beta: torch.Tensor         # (B, T, 10)
    phi: torch.Tensor          # (B, T, 3)
    joints3d: torch.Tensor     # (B, T, 24, 3)
    joints2d: torch.Tensor     # (B, T, 24, 2)


@dataclass
class LossBreakdown:
    gmm_j3d: torch.Tensor
    gmm_j2d: torch.Tensor
    gmm_pose: torch.Tensor
    gmm_shape: torch.Tensor
    gmm_vel2d: torch.Tensor
    gmm_vel3d: torch.Tensor
    lpc_j3d: torch.Tensor
    lpc_j2d: torch.Tensor
    lpc_pose: torch.Tensor
    lpc_shape: torch.Tensor
    total: torch.Tensor

    def components(self) -> dict[str, torch.Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "total"}

    def as_floats(self) -> dict[str, float]:
        return {f.name: float(getattr(self, f.name).detach()) for f in fields(self)}


def weight_for(name: str, weights: LossWeights) -> float:
    return getattr(weights, WEIGHT_OF[name.split("_", 1)[1]])


def _mse(pred, gt, sel):
    if not bool(sel.any()):
        return pred.new_zeros(())
    return ((pred[sel] - gt[sel]) ** 2).mean()


def _root_centered(j):
    return j - j[..., :1, :]


def total_loss(pred: Prediction, gt: WindowBatch, masked: torch.Tensor, weights: LossWeights,
               body: BodyModel) -> LossBreakdown:
    """Weighted sum of the global terms (masked frames only) and the mid-frame terms.

    ``masked`` is the (B, T) boolean mask. Per-frame squared errors are means
    over the selected frames and their entries; velocity terms are
    normalised by the number of gated pairs and joints.
    """
    init: ParamTriple = pred.initial
    js = params_to_joints(body, init.theta, init.beta)
    j3d = js.positions
    j2d = project_weak_perspective(j3d, init.phi)

    terms: dict[str, torch.Tensor] = {}
    terms["gmm_j3d"] = _mse(_root_centered(j3d), _root_centered(gt.joints3d), masked)
    terms["gmm_j2d"] = _mse(j2d, gt.joints2d, masked)
    terms["gmm_pose"] = _mse(init.theta, gt.theta, masked)
    terms["gmm_shape"] = _mse(init.beta, gt.beta, masked)

    pairs = masked[:, :-1] & masked[:, 1:]
    n_pairs = int(pairs.sum())
    J = j3d.shape[-2]
    for name, p, g in (("gmm_vel2d", j2d, gt.joints2d), ("gmm_vel3d", j3d, gt.joints3d)):
        if n_pairs:
            terms[name] = velocity_loss(p, g, pairs).sum() / (n_pairs * J)
        else:
            terms[name] = j3d.new_zeros(())

    if pred.lpc is not None:
        m = pred.mid
        fin = pred.final
        fj = params_to_joints(body, fin.theta, fin.beta).positions
        f2 = project_weak_perspective(fj, fin.phi)
        terms["lpc_j3d"] = ((_root_centered(fj) - _root_centered(gt.joints3d[:, m])) ** 2).mean()
        terms["lpc_j2d"] = ((f2 - gt.joints2d[:, m]) ** 2).mean()
        terms["lpc_pose"] = ((fin.theta - gt.theta[:, m]) ** 2).mean()
        terms["lpc_shape"] = ((fin.beta - gt.beta[:, m]) ** 2).mean()
    else:
        for name in LPC_TERMS:
            terms[name] = j3d.new_zeros(())

    total = j3d.new_zeros(())
    for name in GMM_TERMS + LPC_TERMS:
        total = total + weight_for(name, weights) * terms[name]
    return LossBreakdown(**terms, total=total)
