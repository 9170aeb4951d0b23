"""Per-frame inference over whole sequences and metric aggregation."""
from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .container import read_container, write_container
from .data import Dataset, MotionSequence, window_indices
from .errors import ConfigMismatch, CorruptFile
from .geometry import BodyModel, params_to_joints, skin_vertices
from .metrics import MetricReport, accel_per_frame, mpjpe, mpvpe, pa_mpjpe
from .model import GLoT, load_checkpoint

TRAJECTORY_CHANNELS = ("pred_theta", "pred_beta", "pred_phi", "pred_joints3d", "pred_vertices")


@torch.no_grad()
def predict_sequence(model: GLoT, body: BodyModel, seq: MotionSequence,
                     batch_size: int = 128) -> dict[str, np.ndarray]:
    """Predict every frame from its own nearest-padded window with no masking."""
    model.eval()
    T = model.cfg.T
    dtype = next(model.parameters()).dtype
    feats = torch.as_tensor(np.asarray(seq.features), dtype=dtype)
    L = seq.length
    thetas, betas, phis = [], [], []
    for start in range(0, L, batch_size):
        centers = range(start, min(start + batch_size, L))
        idx = torch.as_tensor(np.stack([window_indices(c, T, L)[0] for c in centers]))
        S = feats[idx]
        B = S.shape[0]
        masked = torch.zeros(B, T, dtype=torch.bool)
        kept = torch.arange(T).expand(B, T)
        fin = model(S, masked, kept).final
        thetas.append(fin.theta.double())
        betas.append(fin.beta.double())
        phis.append(fin.phi.double())
    theta, beta, phi = torch.cat(thetas), torch.cat(betas), torch.cat(phis)
    js = params_to_joints(body, theta, beta)
    verts = skin_vertices(body, js, beta)
    return {"pred_theta": theta.numpy(), "pred_beta": beta.numpy(), "pred_phi": phi.numpy(),
            "pred_joints3d": js.positions.numpy(), "pred_vertices": verts.numpy()}


def oracle_trajectory(seq: MotionSequence) -> dict[str, np.ndarray]:
    """Ground truth packaged as a prediction."""
    L = seq.length
    return {"pred_theta": seq.gt_theta, "pred_beta": np.broadcast_to(seq.gt_beta, (L, 10)).copy(),
            "pred_phi": seq.gt_phi, "pred_joints3d": seq.gt_joints3d, "pred_vertices": seq.gt_vertices}


def frame_metrics(traj: dict, seq: MotionSequence, seq_index: int = 0,
                  fps: Optional[float] = None) -> list[dict]:
    pj = np.asarray(traj["pred_joints3d"], dtype=np.float64)
    gj = np.asarray(seq.gt_joints3d, dtype=np.float64)
    if pj.shape != gj.shape:
        raise ConfigMismatch(f"trajectory joints {pj.shape} vs ground truth {gj.shape}")
    e_mpjpe = mpjpe(pj, gj)
    e_pa = pa_mpjpe(pj, gj)
    e_v = mpvpe(traj["pred_vertices"], seq.gt_vertices, pj[:, 0], gj[:, 0])
    acc = accel_per_frame(pj, gj, fps) if len(pj) >= 3 else np.zeros(0)
    frames = []
    for t in range(len(pj)):
        frames.append({
            "seq": seq_index, "frame": t, "mpjpe": float(e_mpjpe[t]), "pa_mpjpe": float(e_pa[t]),
            "mpvpe": float(e_v[t]),
            "accel": float(acc[t - 1]) if 1 <= t <= len(pj) - 2 else None,
        })
    return frames


def evaluate_trajectories(trajs: list[dict], sequences: list[MotionSequence],
                          fps: Optional[float] = None) -> MetricReport:
    if len(trajs) != len(sequences):
        raise ConfigMismatch(f"{len(trajs)} trajectories for {len(sequences)} sequences")
    frames = []
    for i, (tr, seq) in enumerate(zip(trajs, sequences)):
        frames.extend(frame_metrics(tr, seq, i, fps))
    return MetricReport.from_frames(frames, "mm/s^2" if fps else "mm/frame^2")


def check_compatible(model: GLoT, body: BodyModel, dataset: Dataset) -> None:
    if model.cfg.feature_dim != dataset.feature_dim:
        raise ConfigMismatch(f"model expects {model.cfg.feature_dim}-d features, dataset has "
                             f"{dataset.feature_dim}")
    if not body.equals(dataset.body):
        raise ConfigMismatch("checkpoint body model differs from the dataset body model")


def predict_dataset(model: GLoT, body: BodyModel, dataset: Dataset) -> list[dict]:
    check_compatible(model, body, dataset)
    return [predict_sequence(model, body, s) for s in dataset.sequences]


def evaluate(checkpoint, dataset: Dataset, fps: Optional[float] = None,
             return_trajectories: bool = False):
    """Evaluate a checkpoint path or a ``(model, body)`` pair on every frame of ``dataset``."""
    if isinstance(checkpoint, (str, Path)):
        model, body, _ = load_checkpoint(checkpoint)
    else:
        model, body = checkpoint
    trajs = predict_dataset(model, body, dataset)
    report = evaluate_trajectories(trajs, dataset.sequences, fps)
    return (report, trajs) if return_trajectories else report


def write_trajectories(out_dir, trajs: list[dict]) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, tr in enumerate(trajs):
        p = out / f"traj_{i:05d}.bin"
        write_container(p, {k: np.asarray(tr[k]) for k in TRAJECTORY_CHANNELS}, {"kind": "trajectory"})
        paths.append(p)
    return paths


def read_trajectory(path) -> dict[str, np.ndarray]:
    meta, arrays = read_container(path)
    missing = [c for c in TRAJECTORY_CHANNELS if c not in arrays]
    if missing:
        raise CorruptFile(f"{path}: missing channels {missing}")
    return arrays


def read_trajectories(out_dir) -> list[dict]:
    out_dir = Path(out_dir)
    if not out_dir.is_dir():
        raise FileNotFoundError(f"no trajectory directory at {out_dir}")
    return [read_trajectory(p) for p in sorted(out_dir.glob("traj_*.bin"))]
