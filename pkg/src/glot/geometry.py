"""Rotations, the 24-joint kinematic tree, a procedural body model, FK and skinning.

All tensor functions are written against torch so that gradients flow through
them during training. Body-model constants are stored as float64 numpy arrays
and converted on demand.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .errors import DegenerateRotation, IndexOutOfRange, TopologyError

NUM_JOINTS = 24
NUM_BETAS = 10
DEGENERACY_EPS = 1e-8

# Canonical SMPL kinematic tree; -1 marks the root.
SMPL_PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21)

JOINT_NAMES = (
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee",
    "spine2", "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot",
    "neck", "left_collar", "right_collar", "head", "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow", "left_wrist", "right_wrist", "left_hand", "right_hand",
)

# Approximate rest-pose joint locations of an adult body, meters, pelvis at origin.
_REST_JOINTS = np.array([
    [0.000, 0.000, 0.000], [0.060, -0.090, 0.000], [-0.060, -0.090, 0.000],
    [0.000, 0.110, -0.020], [0.040, -0.470, 0.010], [-0.040, -0.470, 0.010],
    [0.000, 0.250, 0.000], [0.050, -0.870, -0.030], [-0.050, -0.870, -0.030],
    [0.000, 0.310, 0.020], [0.060, -0.930, 0.090], [-0.060, -0.930, 0.090],
    [0.000, 0.530, -0.010], [0.080, 0.430, 0.000], [-0.080, 0.430, 0.000],
    [0.000, 0.620, 0.050], [0.180, 0.460, -0.010], [-0.180, 0.460, -0.010],
    [0.430, 0.430, -0.030], [-0.430, 0.430, -0.030], [0.680, 0.440, -0.010],
    [-0.680, 0.440, -0.010], [0.770, 0.430, -0.020], [-0.770, 0.430, -0.020],
])

LIMB_MIN, LIMB_MAX = 0.05, 0.6


@dataclass(frozen=True)
class KinematicTree:
    parent: tuple[int, ...] = SMPL_PARENTS

    def __post_init__(self):
        roots = [j for j, p in enumerate(self.parent) if p < 0]
        if len(roots) != 1 or roots[0] != 0:
            raise TopologyError(f"expected a single root at index 0, got roots {roots}")
        for j, p in enumerate(self.parent[1:], start=1):
            if not 0 <= p < j:
                raise TopologyError(f"joint {j} has parent {p}; parents must precede children")

    @property
    def n_joints(self) -> int:
        return len(self.parent)

    def ancestors(self, j: int) -> list[int]:
        return ancestors(self, j)

    def children(self, j: int) -> list[int]:
        return [c for c, p in enumerate(self.parent) if p == j]


SMPL_TREE = KinematicTree()


def ancestors(tree: KinematicTree, j: int) -> list[int]:
    """Root-first chain of ancestors of joint ``j``, excluding ``j``."""
    if not 0 <= j < tree.n_joints:
        raise IndexOutOfRange(f"joint index {j} outside [0, {tree.n_joints})")
    chain = []
    p = tree.parent[j]
    while p >= 0:
        chain.append(p)
        p = tree.parent[p]
    return chain[::-1]


# ---------------------------------------------------------------------------
# rotations

def rot6d_to_matrix(r: torch.Tensor, check: bool = True) -> torch.Tensor:
    """Gram-Schmidt map from (..., 6) to (..., 3, 3).

    The 6 numbers are the first two columns of the matrix, stacked column after
    column. Raises DegenerateRotation when the first column vanishes or the two
    columns are parallel (``check=False`` skips the test).
    """
    r = torch.as_tensor(r)
    a1, a2 = r[..., 0:3], r[..., 3:6]
    n1 = torch.linalg.vector_norm(a1, dim=-1, keepdim=True)
    if check and (not torch.isfinite(r).all() or bool((n1 <= DEGENERACY_EPS).any())):
        raise DegenerateRotation("first 6D column is zero or non-finite")
    b1 = a1 / n1
    u2 = a2 - (b1 * a2).sum(-1, keepdim=True) * b1
    n2 = torch.linalg.vector_norm(u2, dim=-1, keepdim=True)
    if check and bool((n2 <= DEGENERACY_EPS).any()):
        raise DegenerateRotation("6D columns are parallel")
    b2 = u2 / n2
    b3 = torch.linalg.cross(b1, b2, dim=-1)
    return torch.stack([b1, b2, b3], dim=-1)


def matrix_to_rot6d(R: torch.Tensor) -> torch.Tensor:
    R = torch.as_tensor(R)
    return torch.cat([R[..., :, 0], R[..., :, 1]], dim=-1)


def axis_angle_to_matrix(aa: np.ndarray) -> np.ndarray:
    """Rodrigues formula on (..., 3) numpy arrays."""
    aa = np.asarray(aa, dtype=np.float64)
    angle = np.linalg.norm(aa, axis=-1, keepdims=True)
    safe = np.where(angle < 1e-12, 1.0, angle)
    k = aa / safe
    kx, ky, kz = k[..., 0], k[..., 1], k[..., 2]
    zero = np.zeros_like(kx)
    K = np.stack([
        np.stack([zero, -kz, ky], -1),
        np.stack([kz, zero, -kx], -1),
        np.stack([-ky, kx, zero], -1),
    ], -2)
    s = np.sin(angle)[..., None]
    c = np.cos(angle)[..., None]
    eye = np.broadcast_to(np.eye(3), K.shape)
    R = eye + s * K + (1.0 - c) * (K @ K)
    return np.where((angle < 1e-12)[..., None], eye, R)


# ---------------------------------------------------------------------------
# body model

@dataclass
class BodyModel:
    template_joints: np.ndarray       # (24, 3)
    shape_basis_joints: np.ndarray    # (10, 24, 3)
    template_vertices: np.ndarray     # (V, 3)
    shape_basis_vertices: np.ndarray  # (10, V, 3)
    skin_weights: np.ndarray          # (V, 24)
    tree: KinematicTree = field(default_factory=KinematicTree)
    seed: int = 0

    @property
    def n_vertices(self) -> int:
        return self.template_vertices.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "parent": np.asarray(self.tree.parent, dtype=np.int64),
            "template_joints": self.template_joints,
            "shape_basis_joints": self.shape_basis_joints,
            "template_vertices": self.template_vertices,
            "shape_basis_vertices": self.shape_basis_vertices,
            "skin_weights": self.skin_weights,
        }

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], seed: int = 0) -> "BodyModel":
        return cls(
            template_joints=np.asarray(arrays["template_joints"], dtype=np.float64),
            shape_basis_joints=np.asarray(arrays["shape_basis_joints"], dtype=np.float64),
            template_vertices=np.asarray(arrays["template_vertices"], dtype=np.float64),
            shape_basis_vertices=np.asarray(arrays["shape_basis_vertices"], dtype=np.float64),
            skin_weights=np.asarray(arrays["skin_weights"], dtype=np.float64),
            tree=KinematicTree(tuple(int(p) for p in arrays["parent"])),
            seed=seed,
        )

    def equals(self, other: "BodyModel") -> bool:
        a, b = self.arrays(), other.arrays()
        return all(a[k].shape == b[k].shape and np.array_equal(a[k], b[k]) for k in a)

    def tensors(self, dtype=torch.float64) -> dict[str, torch.Tensor]:
        cache = self.__dict__.setdefault("_tensor_cache", {})
        if dtype not in cache:
            cache[dtype] = {k: torch.as_tensor(v, dtype=dtype) for k, v in self.arrays().items()
                            if k != "parent"}
        return cache[dtype]


def _bone_segments(joints: np.ndarray, tree: KinematicTree) -> tuple[np.ndarray, np.ndarray]:
    """Segment per joint: from the joint to the mean of its children (a point for leaves)."""
    starts = joints.copy()
    ends = joints.copy()
    for j in range(tree.n_joints):
        kids = tree.children(j)
        if kids:
            ends[j] = joints[kids].mean(axis=0)
    return starts, ends


def _point_segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # p (V,3); a,b (J,3) -> (V,J)
    ab = b - a
    denom = np.maximum((ab * ab).sum(-1), 1e-12)
    t = ((p[:, None, :] - a[None]) * ab[None]).sum(-1) / denom
    t = np.clip(t, 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    return np.linalg.norm(p[:, None, :] - closest, axis=-1)


def build_body_model(seed: int = 0, n_vertices: int = 108, skin_temperature: float = 0.02) -> BodyModel:
    """Deterministic procedural body with the SMPL parameter interface."""
    rng = np.random.default_rng(seed)
    tree = SMPL_TREE
    parent = tree.parent

    offsets = np.zeros_like(_REST_JOINTS)
    for j in range(1, NUM_JOINTS):
        off = _REST_JOINTS[j] - _REST_JOINTS[parent[j]]
        off = off * rng.uniform(0.9, 1.1) + rng.normal(0.0, 0.005, 3)
        length = np.linalg.norm(off)
        off *= np.clip(length, LIMB_MIN, LIMB_MAX) / length
        offsets[j] = off
    joints = np.zeros((NUM_JOINTS, 3))
    for j in range(1, NUM_JOINTS):
        joints[j] = joints[parent[j]] + offsets[j]

    # Shape directions: per-bone length changes propagated down the chain.
    shape_j = np.zeros((NUM_BETAS, NUM_JOINTS, 3))
    for k in range(NUM_BETAS):
        scale = 0.06 if k == 0 else 0.03 / np.sqrt(k)
        coef = np.full(NUM_JOINTS, scale) if k == 0 else rng.normal(0.0, scale, NUM_JOINTS)
        for j in range(1, NUM_JOINTS):
            shape_j[k, j] = shape_j[k, parent[j]] + coef[j] * offsets[j]

    # Vertices scattered around the 23 bones.
    bones = [(parent[c], c) for c in range(1, NUM_JOINTS)]
    verts = np.zeros((n_vertices, 3))
    shape_v = np.zeros((NUM_BETAS, n_vertices, 3))
    for i in range(n_vertices):
        p, c = bones[i % len(bones)]
        u = rng.uniform(0.0, 1.0)
        axis = joints[c] - joints[p]
        radial = rng.normal(size=3)
        radial -= radial.dot(axis) / axis.dot(axis) * axis
        radial *= rng.uniform(0.03, 0.08) / max(np.linalg.norm(radial), 1e-12)
        verts[i] = joints[p] + u * axis + radial
        shape_v[:, i] = (1 - u) * shape_j[:, p] + u * shape_j[:, c] + rng.normal(0.0, 0.002, (NUM_BETAS, 3))

    starts, ends = _bone_segments(joints, tree)
    dist = _point_segment_distance(verts, starts, ends)
    logits = -dist / skin_temperature
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=1, keepdims=True)

    return BodyModel(joints, shape_j, verts, shape_v, w, tree, seed)


# ---------------------------------------------------------------------------
# kinematics

@dataclass
class JointSet:
    positions: torch.Tensor     # (..., 24, 3)
    rotations: torch.Tensor     # (..., 24, 3, 3) global rotations
    displacements: torch.Tensor  # (..., 24, 3) posed minus rest location
    rest_joints: torch.Tensor   # (..., 24, 3) shaped rest joints

    @property
    def translations(self) -> torch.Tensor:
        return self.positions


def shaped_rest(body: BodyModel, beta: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Rest joints and rest vertices for shape coefficients ``beta`` (..., 10)."""
    t = body.tensors(beta.dtype)
    joints = t["template_joints"] + torch.einsum("...k,kjc->...jc", beta, t["shape_basis_joints"])
    verts = t["template_vertices"] + torch.einsum("...k,kvc->...vc", beta, t["shape_basis_vertices"])
    return joints, verts


def forward_kinematics(body: BodyModel, pose: torch.Tensor, beta: torch.Tensor) -> JointSet:
    """Pose joints along the tree.

    ``pose`` holds local rotation matrices (..., 24, 3, 3). Each joint's global
    rotation is its parent's global rotation times its local rotation; the root
    rotates about its own rest location. Translations are tracked as offsets
    from the rest location so that the identity pose reproduces the template
    bit for bit.
    """
    rest, _ = shaped_rest(body, beta)
    parent = body.tree.parent
    eye = torch.eye(3, dtype=pose.dtype)
    rots: list[torch.Tensor] = []
    disp: list[torch.Tensor] = []
    for j in range(body.tree.n_joints):
        p = parent[j]
        if p < 0:
            rots.append(pose[..., 0, :, :])
            disp.append(torch.zeros_like(rest[..., 0, :]))
            continue
        bone = rest[..., j, :] - rest[..., p, :]
        rots.append(rots[p] @ pose[..., j, :, :])
        disp.append(disp[p] + ((rots[p] - eye) @ bone.unsqueeze(-1)).squeeze(-1))
    G = torch.stack(rots, dim=-3)
    d = torch.stack(disp, dim=-2)
    return JointSet(rest + d, G, d, rest)


def skin_vertices(body: BodyModel, joints: JointSet, beta: torch.Tensor) -> torch.Tensor:
    """Linear blend skinning of the shaped template, (..., V, 3)."""
    _, rest_v = shaped_rest(body, beta)
    w = body.tensors(beta.dtype)["skin_weights"]
    eye = torch.eye(3, dtype=beta.dtype)
    # per joint: T_j(v) = v + (G_j - I)(v - J_j) + d_j
    rel = rest_v.unsqueeze(-3) - joints.rest_joints.unsqueeze(-2)          # (..., 24, V, 3)
    moved = torch.einsum("...jab,...jvb->...jva", joints.rotations - eye, rel)
    moved = moved + joints.displacements.unsqueeze(-2)
    return rest_v + torch.einsum("vj,...jva->...va", w, moved)


def project_weak_perspective(points: torch.Tensor, cam: torch.Tensor) -> torch.Tensor:
    """``s * (x, y) + (tx, ty)`` with ``cam = (s, tx, ty)`` broadcast over points."""
    s = cam[..., 0:1].unsqueeze(-2)
    t = cam[..., 1:3].unsqueeze(-2)
    return s * points[..., :2] + t


def params_to_joints(body: BodyModel, theta6d: torch.Tensor, beta: torch.Tensor,
                     check: bool = True) -> JointSet:
    """FK from 6D pose (..., 24, 6) and shape (..., 10)."""
    return forward_kinematics(body, rot6d_to_matrix(theta6d, check=check), beta)
