"""Pose metrics (MPJPE, PA-MPJPE, MPVPE, Accel) and the masked velocity loss.

Metrics operate on numpy arrays in meters and report millimeters. They accept
either a single frame ``(N, 3)`` or a batch ``(..., N, 3)``; batched calls
return one value per frame.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from .errors import DegenerateCloud, SequenceTooShort, ShapeMismatch

M_TO_MM = 1000.0


@dataclass
class SimilarityTransform:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        return self.scale * X @ self.rotation.T + self.translation


def _umeyama(X: np.ndarray, Y: np.ndarray):
    """Batched similarity alignment of X onto Y; X, Y are (..., N, 3)."""
    mx = X.mean(axis=-2, keepdims=True)
    my = Y.mean(axis=-2, keepdims=True)
    Xc, Yc = X - mx, Y - my
    var_x = (Xc ** 2).sum(axis=(-2, -1))
    if np.any(var_x <= 1e-16):
        raise DegenerateCloud("source points are coincident")
    K = np.swapaxes(Yc, -1, -2) @ Xc                      # (..., 3, 3)
    U, S, Vt = np.linalg.svd(K)
    d = np.sign(np.linalg.det(U @ Vt))
    d = np.where(d == 0, 1.0, d)
    D = np.ones(S.shape)
    D[..., -1] = d
    R = (U * D[..., None, :]) @ Vt
    scale = (S * D).sum(-1) / var_x
    t = my[..., 0, :] - scale[..., None] * (R @ mx[..., 0, :, None])[..., 0]
    return scale, R, t


def procrustes_align(X: np.ndarray, Y: np.ndarray) -> SimilarityTransform:
    """Least-squares similarity transform taking X onto Y (rotations only, no reflections)."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape != Y.shape or X.ndim != 2 or X.shape[1] != 3:
        raise ShapeMismatch(f"expected matching (N, 3) arrays, got {X.shape} and {Y.shape}")
    if X.shape[0] < 3:
        raise DegenerateCloud("need at least three points")
    s, R, t = _umeyama(X, Y)
    return SimilarityTransform(float(s), R, t)


def _check_pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"{pred.shape} vs {gt.shape}")
    return pred, gt


def _reduce(v):
    return float(v) if np.ndim(v) == 0 else v


def mpjpe(pred, gt):
    pred, gt = _check_pair(pred, gt)
    p = pred - pred[..., :1, :]
    g = gt - gt[..., :1, :]
    return _reduce(np.linalg.norm(p - g, axis=-1).mean(-1) * M_TO_MM)


def pa_mpjpe(pred, gt):
    pred, gt = _check_pair(pred, gt)
    s, R, t = _umeyama(pred, gt)
    aligned = s[..., None, None] * pred @ np.swapaxes(R, -1, -2) + t[..., None, :]
    return _reduce(np.linalg.norm(aligned - gt, axis=-1).mean(-1) * M_TO_MM)


def mpvpe(pred_v, gt_v, pred_root=None, gt_root=None):
    """Mean vertex error; vertices are shifted by the supplied root-joint positions."""
    pred_v, gt_v = _check_pair(pred_v, gt_v)
    if pred_root is not None:
        pred_v = pred_v - np.asarray(pred_root, dtype=np.float64)[..., None, :]
    if gt_root is not None:
        gt_v = gt_v - np.asarray(gt_root, dtype=np.float64)[..., None, :]
    return _reduce(np.linalg.norm(pred_v - gt_v, axis=-1).mean(-1) * M_TO_MM)


def accel_per_frame(pred_seq, gt_seq, fps: Optional[float] = None) -> np.ndarray:
    """Acceleration discrepancy for interior frames 1..T-2, shape (T-2,)."""
    pred_seq, gt_seq = _check_pair(pred_seq, gt_seq)
    if pred_seq.shape[0] < 3:
        raise SequenceTooShort(f"need at least 3 frames, got {pred_seq.shape[0]}")
    acc_p = pred_seq[2:] - 2 * pred_seq[1:-1] + pred_seq[:-2]
    acc_g = gt_seq[2:] - 2 * gt_seq[1:-1] + gt_seq[:-2]
    err = np.linalg.norm(acc_p - acc_g, axis=-1).mean(-1) * M_TO_MM
    if fps is not None:
        err = err * fps ** 2
    return err


def accel_error(pred_seq, gt_seq, fps: Optional[float] = None) -> float:
    return float(accel_per_frame(pred_seq, gt_seq, fps).mean())


def velocity_loss(jt: torch.Tensor, gt: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Masked velocity discrepancy.

    ``jt``/``gt`` are (..., T, J, D) and ``mask`` is (..., T-1); entry t of the
    mask gates the pair (t, t+1). Per-joint Euclidean norms are summed over
    joints and gated pairs, giving one value per leading batch index. Gated-out
    pairs are dropped rather than multiplied by zero so that their ground truth
    never enters the result.
    """
    jt = torch.as_tensor(jt)
    gt = torch.as_tensor(gt, dtype=jt.dtype)
    mask = torch.as_tensor(mask)
    if jt.shape != gt.shape or jt.shape[-1] not in (2, 3):
        raise ShapeMismatch(f"{tuple(jt.shape)} vs {tuple(gt.shape)}")
    if mask.shape != jt.shape[:-3] + (jt.shape[-3] - 1,):
        raise ShapeMismatch(f"mask shape {tuple(mask.shape)} does not fit {tuple(jt.shape)}")
    keep = mask.bool()
    dp = (jt[..., 1:, :, :] - jt[..., :-1, :, :])
    dg = (gt[..., 1:, :, :] - gt[..., :-1, :, :])
    per_pair = jt.new_zeros(keep.shape)
    if keep.any():
        norms = torch.linalg.vector_norm(dp[keep] - dg[keep], dim=-1).sum(-1)
        per_pair = per_pair.masked_scatter(keep, norms)
    return per_pair.sum(-1)


@dataclass
class MetricReport:
    mpjpe: float
    pa_mpjpe: float
    mpvpe: float
    accel: float
    n_frames: int
    per_frame: list = field(default_factory=list)
    accel_unit: str = "mm/frame^2"

    @classmethod
    def from_frames(cls, frames: list[dict], accel_unit: str = "mm/frame^2") -> "MetricReport":
        def mean(key):
            vals = [f[key] for f in frames if f.get(key) is not None]
            return float(np.mean(vals)) if vals else float("nan")
        return cls(mean("mpjpe"), mean("pa_mpjpe"), mean("mpvpe"), mean("accel"),
                   len(frames), frames, accel_unit)

    def to_dict(self) -> dict:
        return {
            "mpjpe": self.mpjpe, "pa_mpjpe": self.pa_mpjpe, "mpvpe": self.mpvpe,
            "accel": self.accel, "accel_unit": self.accel_unit,
            "n_frames": self.n_frames, "per_frame": self.per_frame,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(d["mpjpe"], d["pa_mpjpe"], d["mpvpe"], d["accel"], d["n_frames"],
                   d.get("per_frame", []), d.get("accel_unit", "mm/frame^2"))

    def to_text(self) -> str:
        lines = [
            f"mpjpe     {self.mpjpe:10.4f} mm",
            f"pa_mpjpe  {self.pa_mpjpe:10.4f} mm",
            f"mpvpe     {self.mpvpe:10.4f} mm",
            f"accel     {self.accel:10.4f} {self.accel_unit}",
            f"n_frames  {self.n_frames:10d}",
        ]
        return "\n".join(lines) + "\n"
