"""Local parameter correction: nearby frames, local encoder, cross-attention, HSCR."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import torch
from torch import nn

from .config import ModelConfig
from .errors import EmptyMemory, TopologyError
from .geometry import NUM_BETAS, NUM_JOINTS, SMPL_TREE, KinematicTree, ancestors
from .gmm import N_POSE, GlobalMemory, ParamTriple
from .nncore.layers import MLP, PositionalEmbedding, TransformerStack, init_linear, linear_count


def nearby_indices(m: int, w: int, T: int) -> torch.Tensor:
    return torch.clamp(torch.arange(m - w, m + w + 1), 0, T - 1)


def select_nearby(S: torch.Tensor, m: int, w: int) -> torch.Tensor:
    """Tokens m-w..m+w along the frame axis (-2), nearest-padded at the edges."""
    return S.index_select(-2, nearby_indices(m, w, S.shape[-2]))


@dataclass
class CorrectionOutput:
    theta_r: torch.Tensor
    beta_r: torch.Tensor
    phi_r: torch.Tensor
    theta_s: torch.Tensor
    beta_s: torch.Tensor
    phi_s: torch.Tensor

    @property
    def params(self) -> ParamTriple:
        return ParamTriple(self.theta_r, self.beta_r, self.phi_r)


def hscr_input_width(d: int, n_ancestors: int) -> int:
    return d + 6 * n_ancestors + 6


class HSCR(nn.Module):
    """Per-joint corrections conditioned on the corrections already made for the joint's ancestors."""

    def __init__(self, d: int, hidden: int, tree: KinematicTree = SMPL_TREE):
        super().__init__()
        self.tree = tree
        self.chains = [ancestors(tree, j) for j in range(tree.n_joints)]
        self.joint_mlps = nn.ModuleList(
            MLP(hscr_input_width(d, len(chain)), hidden, 6, out_gain=0.01) for chain in self.chains)
        self.beta_mlp = MLP(d + NUM_BETAS, hidden, NUM_BETAS, out_gain=0.01)
        self.phi_mlp = MLP(d + 3, hidden, 3, out_gain=0.01)

    def input_widths(self) -> list[int]:
        return [mlp.layers[0].in_features for mlp in self.joint_mlps]

    def forward(self, f_gl: torch.Tensor, init: ParamTriple,
                order: Optional[Sequence[int]] = None) -> CorrectionOutput:
        order = list(range(self.tree.n_joints)) if order is None else list(order)
        if sorted(order) != list(range(self.tree.n_joints)):
            raise TopologyError("order must be a permutation of all joints")
        done: dict[int, torch.Tensor] = {}
        for j in order:
            chain = self.chains[j]
            if any(a not in done for a in chain):
                raise TopologyError(f"joint {j} visited before its ancestors {chain}")
            parts = [f_gl] + [done[a] for a in chain] + [init.theta[..., j, :]]
            done[j] = self.joint_mlps[j](torch.cat(parts, dim=-1))
        theta_s = torch.stack([done[j] for j in range(self.tree.n_joints)], dim=-2)
        beta_s = self.beta_mlp(torch.cat([f_gl, init.beta], dim=-1))
        phi_s = self.phi_mlp(torch.cat([f_gl, init.phi], dim=-1))
        return CorrectionOutput(init.theta + theta_s, init.beta + beta_s, init.phi + phi_s,
                                theta_s, beta_s, phi_s)

    def reset_parameters(self, gen):
        for mlp in self.joint_mlps:
            mlp.reset_parameters(gen)
        self.beta_mlp.reset_parameters(gen)
        self.phi_mlp.reset_parameters(gen)

    @staticmethod
    def count(d: int, hidden: int, tree: KinematicTree = SMPL_TREE) -> int:
        joints = sum(MLP.count(hscr_input_width(d, len(ancestors(tree, j))), hidden, 6)
                     for j in range(tree.n_joints))
        return joints + MLP.count(d + NUM_BETAS, hidden, NUM_BETAS) + MLP.count(d + 3, hidden, 3)


class ResidualCorrector(nn.Module):
    """Ablation baseline: one MLP corrects all joints at once, no kinematic conditioning."""

    def __init__(self, d: int, hidden: int, beta_hidden: int):
        super().__init__()
        self.theta_mlp = MLP(d + N_POSE, hidden, N_POSE, out_gain=0.01)
        self.beta_mlp = MLP(d + NUM_BETAS, beta_hidden, NUM_BETAS, out_gain=0.01)
        self.phi_mlp = MLP(d + 3, beta_hidden, 3, out_gain=0.01)

    def forward(self, f_gl, init: ParamTriple, order=None) -> CorrectionOutput:
        flat = init.theta.flatten(-2)
        theta_s = self.theta_mlp(torch.cat([f_gl, flat], dim=-1)).reshape(init.theta.shape)
        beta_s = self.beta_mlp(torch.cat([f_gl, init.beta], dim=-1))
        phi_s = self.phi_mlp(torch.cat([f_gl, init.phi], dim=-1))
        return CorrectionOutput(init.theta + theta_s, init.beta + beta_s, init.phi + phi_s,
                                theta_s, beta_s, phi_s)

    def reset_parameters(self, gen):
        for mlp in (self.theta_mlp, self.beta_mlp, self.phi_mlp):
            mlp.reset_parameters(gen)

    @staticmethod
    def count(d: int, hidden: int, beta_hidden: int) -> int:
        return (MLP.count(d + N_POSE, hidden, N_POSE) + MLP.count(d + NUM_BETAS, beta_hidden, NUM_BETAS)
                + MLP.count(d + 3, beta_hidden, 3))


@dataclass
class LPCOutput:
    correction: CorrectionOutput
    f_gl: torch.Tensor
    local_tokens: torch.Tensor
    q_mid: torch.Tensor
    local_attention: list
    cross_attention: list


class LocalParameterCorrection(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        loc, cross = cfg.local_encoder, cfg.cross_decoder
        self.w = cfg.w
        self.in_proj = nn.Linear(cfg.feature_dim, loc.d_model)
        self.pos = PositionalEmbedding(2 * cfg.w + 1, loc.d_model, loc.pos_embedding)
        self.encoder = TransformerStack(loc)
        self.mem_proj = nn.Linear(cfg.global_encoder.d_model, cross.d_model)
        self.cross = TransformerStack(cross, cross=True, final_norm=True)
        if cfg.corrector == "hscr":
            self.corrector = HSCR(cross.d_model, cfg.hscr_hidden)
        else:
            self.corrector = ResidualCorrector(cross.d_model, cfg.residual_hidden, cfg.hscr_hidden)

    def encode_local(self, window: torch.Tensor):
        """(B, 2w+1, F) nearby tokens -> (B, 2w+1, d) local tokens."""
        x = self.in_proj(window) + self.pos(torch.arange(window.shape[-2]))
        return self.encoder(x)

    def cross_decode(self, q_mid: torch.Tensor, memory: GlobalMemory):
        """Mid token (B, d) attends over the projected global memory; returns f_gl (B, d)."""
        if memory.tokens.shape[-2] == 0:
            raise EmptyMemory("cross-attention needs a nonempty global memory")
        kv = self.mem_proj(memory.tokens)
        x, attn = self.cross(q_mid.unsqueeze(-2), kv)
        return x.squeeze(-2), attn

    def forward(self, window: torch.Tensor, memory: GlobalMemory, init: ParamTriple,
                detach: bool = True, order=None) -> LPCOutput:
        tokens, local_attn = self.encode_local(window)
        q_mid = tokens[..., self.w, :]
        f_gl, cross_attn = self.cross_decode(q_mid, memory)
        if detach:
            init = init.detach()
        corr = self.corrector(f_gl, init, order)
        return LPCOutput(corr, f_gl, tokens, q_mid, local_attn, cross_attn)

    def reset_parameters(self, gen):
        init_linear(self.in_proj, gen)
        self.pos.reset_parameters(gen)
        self.encoder.reset_parameters(gen)
        init_linear(self.mem_proj, gen)
        self.cross.reset_parameters(gen)
        self.corrector.reset_parameters(gen)

    @staticmethod
    def count(cfg: ModelConfig) -> int:
        loc, cross = cfg.local_encoder, cfg.cross_decoder
        corr = (HSCR.count(cross.d_model, cfg.hscr_hidden) if cfg.corrector == "hscr"
                else ResidualCorrector.count(cross.d_model, cfg.residual_hidden, cfg.hscr_hidden))
        return (linear_count(cfg.feature_dim, loc.d_model)
                + PositionalEmbedding.count(2 * cfg.w + 1, loc.d_model, loc.pos_embedding)
                + TransformerStack.count(loc)
                + linear_count(cfg.global_encoder.d_model, cross.d_model)
                + TransformerStack.count(cross, final_norm=True)
                + corr)
