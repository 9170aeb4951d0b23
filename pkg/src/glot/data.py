"""Synthetic motion sequences, nearest-padded windows and dataset files.

Image features are replaced by a fixed seeded affine encoding of the ground
truth state plus Gaussian noise, so a model still has to denoise, smooth and
in-fill over time.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .container import read_container, write_container
from .errors import CorruptFile, VersionMismatch
from .geometry import (NUM_BETAS, NUM_JOINTS, BodyModel, axis_angle_to_matrix, build_body_model,
                       forward_kinematics, matrix_to_rot6d, project_weak_perspective,
                       rot6d_to_matrix, skin_vertices)

DATASET_VERSION = 1
STATE_DIM = NUM_JOINTS * 6 + NUM_BETAS + 3 + NUM_JOINTS * 3   # 229
MAX_AMPLITUDE = 1.2
MIN_FREQ, MAX_FREQ = 0.005, 0.04   # cycles per frame

CHANNELS = ("features", "gt_theta", "gt_beta", "gt_phi", "gt_joints3d", "gt_joints2d", "gt_vertices")


def mid_index(T: int) -> int:
    return T // 2 - 1


@dataclass
class MotionSequence:
    features: np.ndarray     # (L, F)
    gt_theta: np.ndarray     # (L, 24, 6)
    gt_beta: np.ndarray      # (10,)
    gt_phi: np.ndarray       # (L, 3)
    gt_joints3d: np.ndarray  # (L, 24, 3)
    gt_joints2d: np.ndarray  # (L, 24, 2)
    gt_vertices: np.ndarray  # (L, V, 3)
    seed: int = 0

    @property
    def length(self) -> int:
        return self.features.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in CHANNELS}

    def astype(self, dtype) -> "MotionSequence":
        return MotionSequence(**{k: v.astype(dtype) for k, v in self.arrays().items()}, seed=self.seed)

    def equals(self, other: "MotionSequence") -> bool:
        a, b = self.arrays(), other.arrays()
        return all(a[k].dtype == b[k].dtype and np.array_equal(a[k], b[k]) for k in a)


@dataclass
class TrajectoryParams:
    amplitudes: np.ndarray   # (24, 3, K), zero-padded
    freqs: np.ndarray        # (24, 3, K) cycles/frame
    phases: np.ndarray       # (24, 3, K)

    def axis_angle(self, L: int) -> np.ndarray:
        t = np.arange(L, dtype=np.float64)[:, None, None, None]
        return (self.amplitudes * np.sin(2 * np.pi * self.freqs * t + self.phases)).sum(-1)

    def second_difference_bound(self) -> np.ndarray:
        """Per-component bound on |a(t+1) - 2a(t) + a(t-1)|, shape (24, 3)."""
        omega = 2 * np.pi * self.freqs
        return (self.amplitudes * 4 * np.sin(omega / 2) ** 2).sum(-1)


def sample_trajectory(rng: np.random.Generator) -> TrajectoryParams:
    K = 4
    amp = np.zeros((NUM_JOINTS, 3, K))
    freqs = rng.uniform(MIN_FREQ, MAX_FREQ, (NUM_JOINTS, 3, K))
    phases = rng.uniform(0, 2 * np.pi, (NUM_JOINTS, 3, K))
    for j in range(NUM_JOINTS):
        total = rng.uniform(0.2, 1.0) * MAX_AMPLITUDE / np.sqrt(3)
        for c in range(3):
            n = rng.integers(2, 5)
            raw = rng.uniform(0.2, 1.0, n)
            amp[j, c, :n] = raw / raw.sum() * total
    return TrajectoryParams(amp, freqs, phases)


def feature_map(feature_dim: int, feature_seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Fixed affine map from the 229-d ground-truth state to feature space."""
    rng = np.random.default_rng([feature_seed, feature_dim])
    W = rng.normal(0.0, 1.0 / np.sqrt(STATE_DIM), (STATE_DIM, feature_dim))
    b = rng.normal(0.0, 0.1, feature_dim)
    return W, b


def gt_state(theta: np.ndarray, beta: np.ndarray, phi: np.ndarray, joints3d: np.ndarray) -> np.ndarray:
    L = theta.shape[0]
    return np.concatenate([theta.reshape(L, -1), np.broadcast_to(beta, (L, NUM_BETAS)),
                           phi, joints3d.reshape(L, -1)], axis=1)


def reference_state(body: BodyModel) -> np.ndarray:
    """State of the rest pose with zero shape and a neutral camera; features encode offsets from it."""
    theta = np.tile([1.0, 0.0, 0.0, 0.0, 1.0, 0.0], (1, NUM_JOINTS, 1))
    return gt_state(theta, np.zeros(NUM_BETAS), np.array([[1.0, 0.0, 0.0]]), body.template_joints[None])[0]


def gen_sequence(seed: int, L: int, body: BodyModel, noise_level: float = 0.1,
                 feature_dim: int = 256, feature_seed: int = 0) -> MotionSequence:
    """Generate one float64 sequence; bit-identical for identical arguments."""
    rng = np.random.default_rng(seed)
    traj = sample_trajectory(rng)
    R = axis_angle_to_matrix(traj.axis_angle(L))                     # (L, 24, 3, 3)
    beta = np.clip(rng.normal(0.0, 0.5, NUM_BETAS), -2.0, 2.0)
    t = np.arange(L, dtype=np.float64)
    f, p = rng.uniform(MIN_FREQ, MAX_FREQ, 3), rng.uniform(0, 2 * np.pi, 3)
    phi = np.stack([1.0 + 0.1 * np.sin(2 * np.pi * f[0] * t + p[0]),
                    0.1 * np.sin(2 * np.pi * f[1] * t + p[1]),
                    0.1 * np.sin(2 * np.pi * f[2] * t + p[2])], axis=1)

    theta_t = matrix_to_rot6d(torch.from_numpy(R)).reshape(L, NUM_JOINTS, 6)
    # FK from the 6D encoding (not R) so stored joints are reproducible from stored theta.
    beta_t = torch.from_numpy(beta).expand(L, NUM_BETAS)
    js = forward_kinematics(body, rot6d_to_matrix(theta_t), beta_t)
    verts = skin_vertices(body, js, beta_t)
    j2d = project_weak_perspective(js.positions, torch.from_numpy(phi))

    theta = theta_t.numpy()
    joints3d = js.positions.numpy()
    W, b = feature_map(feature_dim, feature_seed)
    clean = (gt_state(theta, beta, phi, joints3d) - reference_state(body)) @ W + b
    noise = rng.normal(0.0, 1.0, clean.shape) * (noise_level * clean.std())
    return MotionSequence(clean + noise, theta, beta, phi, joints3d, j2d.numpy(), verts.numpy(), seed)


@dataclass
class WindowSample:
    features: np.ndarray
    gt_theta: np.ndarray
    gt_beta: np.ndarray      # (T, 10), broadcast per frame
    gt_phi: np.ndarray
    gt_joints3d: np.ndarray
    gt_joints2d: np.ndarray
    gt_vertices: np.ndarray
    center: int
    pad_left: int
    pad_right: int
    indices: np.ndarray


def window_indices(center: int, T: int, L: int) -> tuple[np.ndarray, int, int]:
    m = mid_index(T)
    raw = np.arange(center - m, center - m + T)
    return np.clip(raw, 0, L - 1), int((raw < 0).sum()), int((raw > L - 1).sum())


def window(seq: MotionSequence, center: int, T: int) -> WindowSample:
    """T-frame window whose mid slot is ``center``; edges repeat the nearest boundary frame."""
    if not 0 <= center < seq.length:
        raise IndexError(f"center {center} outside [0, {seq.length})")
    idx, left, right = window_indices(center, T, seq.length)
    return WindowSample(
        seq.features[idx], seq.gt_theta[idx], np.broadcast_to(seq.gt_beta, (T, NUM_BETAS)).copy(),
        seq.gt_phi[idx], seq.gt_joints3d[idx], seq.gt_joints2d[idx], seq.gt_vertices[idx],
        center, left, right, idx)


# ---------------------------------------------------------------------------
# dataset files

@dataclass
class Dataset:
    body: BodyModel
    sequences: list[MotionSequence]
    meta: dict = field(default_factory=dict)

    @property
    def feature_dim(self) -> int:
        return self.sequences[0].features.shape[1]


def generate_dataset(seed: int, count: int, L: int = 120, body: BodyModel | None = None,
                     noise_level: float = 0.1, feature_dim: int = 256, feature_seed: int = 0,
                     n_vertices: int = 108, body_seed: int = 0, T: int = 16,
                     dtype=np.float64) -> Dataset:
    body = body if body is not None else build_body_model(body_seed, n_vertices)
    seeds = [int(s) for s in np.random.SeedSequence(seed).generate_state(count, dtype=np.uint32)]
    seqs = [gen_sequence(s, L, body, noise_level, feature_dim, feature_seed).astype(dtype)
            for s in seeds]
    meta = {"version": DATASET_VERSION, "seed": seed, "L": L, "T": T, "V": body.n_vertices,
            "feature_dim": feature_dim, "feature_seed": feature_seed, "noise_level": noise_level,
            "body_seed": body.seed}
    return Dataset(body, seqs, meta)


def write_sequence(path, seq: MotionSequence) -> None:
    write_container(path, seq.arrays(), {"kind": "sequence", "seed": seq.seed})


def read_sequence(path) -> MotionSequence:
    meta, arrays = read_container(path)
    missing = [c for c in CHANNELS if c not in arrays]
    if missing:
        raise CorruptFile(f"{path}: missing channels {missing}")
    seq = MotionSequence(**{c: arrays[c] for c in CHANNELS}, seed=int(meta.get("seed", 0)))
    L = seq.features.shape[0]
    expect = {"gt_theta": (L, NUM_JOINTS, 6), "gt_beta": (NUM_BETAS,), "gt_phi": (L, 3),
              "gt_joints3d": (L, NUM_JOINTS, 3), "gt_joints2d": (L, NUM_JOINTS, 2)}
    for name, shape in expect.items():
        if arrays[name].shape != shape:
            raise CorruptFile(f"{path}: {name} has shape {arrays[name].shape}, expected {shape}")
    if seq.gt_vertices.shape[0] != L:
        raise CorruptFile(f"{path}: gt_vertices length mismatch")
    return seq


def write_body_model(path, body: BodyModel) -> None:
    write_container(path, {f"body_model/{k}": v for k, v in body.arrays().items()},
                    {"kind": "body_model", "seed": body.seed})


def body_from_arrays(arrays: dict[str, np.ndarray], seed: int = 0) -> BodyModel:
    prefix = "body_model/"
    return BodyModel.from_arrays({k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)},
                                 seed)


def write_dataset(path, ds: Dataset) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    names = []
    for i, seq in enumerate(ds.sequences):
        name = f"seq_{i:05d}.bin"
        write_sequence(path / name, seq)
        names.append({"file": name, "seed": seq.seed, "length": seq.length})
    write_body_model(path / "body_model.bin", ds.body)
    manifest = dict(ds.meta)
    manifest.update(version=DATASET_VERSION, sequences=names, body_model="body_model.bin",
                    feature_dim=ds.feature_dim, V=ds.body.n_vertices)
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def read_dataset(path) -> Dataset:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except json.JSONDecodeError as exc:
        raise CorruptFile(f"{path}/manifest.json: {exc}") from exc
    if manifest.get("version") != DATASET_VERSION:
        raise VersionMismatch(f"dataset version {manifest.get('version')!r}, expected {DATASET_VERSION}")
    bmeta, barrays = read_container(path / manifest.get("body_model", "body_model.bin"))
    body = body_from_arrays(barrays, int(bmeta.get("seed", 0)))
    seqs = [read_sequence(path / entry["file"]) for entry in manifest["sequences"]]
    for s in seqs:
        if s.features.shape[1] != manifest["feature_dim"] or s.gt_vertices.shape[1] != manifest["V"]:
            raise CorruptFile(f"{path}: sequence shapes disagree with the manifest")
    meta = {k: v for k, v in manifest.items() if k not in ("sequences", "body_model")}
    return Dataset(body, seqs, meta)
