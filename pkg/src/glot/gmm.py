"""Global motion modeling: masking, global encoder/decoder, iterative regressor."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
from torch import nn

from .config import ModelConfig
from .errors import EmptyInput, IndexMismatch
from .geometry import NUM_BETAS, NUM_JOINTS
from .nncore.layers import MLP, PositionalEmbedding, TransformerStack, init_linear, linear_count

N_POSE = NUM_JOINTS * 6
N_PARAMS = N_POSE + NUM_BETAS + 3    # 157


def mean_template(dtype=torch.float64) -> torch.Tensor:
    """Flattened (theta, beta, phi): identity rotations, zero shape, unit-scale camera."""
    theta = torch.tensor([1.0, 0.0, 0.0, 0.0, 1.0, 0.0], dtype=dtype).repeat(NUM_JOINTS)
    return torch.cat([theta, torch.zeros(NUM_BETAS, dtype=dtype), torch.tensor([1.0, 0.0, 0.0], dtype=dtype)])


@dataclass
class ParamTriple:
    theta: torch.Tensor   # (..., 24, 6)
    beta: torch.Tensor    # (..., 10)
    phi: torch.Tensor     # (..., 3)

    @classmethod
    def from_flat(cls, flat: torch.Tensor) -> "ParamTriple":
        theta = flat[..., :N_POSE].reshape(*flat.shape[:-1], NUM_JOINTS, 6)
        return cls(theta, flat[..., N_POSE:N_POSE + NUM_BETAS], flat[..., N_POSE + NUM_BETAS:])

    def flat(self) -> torch.Tensor:
        return torch.cat([self.theta.flatten(-2), self.beta, self.phi], dim=-1)

    def select(self, index) -> "ParamTriple":
        return ParamTriple(self.theta[index], self.beta[index], self.phi[index])

    def detach(self) -> "ParamTriple":
        return ParamTriple(self.theta.detach(), self.beta.detach(), self.phi.detach())


@dataclass(frozen=True)
class MaskSpec:
    masked_indices: tuple[int, ...]
    ratio: float
    T: int

    @property
    def kept_indices(self) -> tuple[int, ...]:
        masked = set(self.masked_indices)
        return tuple(i for i in range(self.T) if i not in masked)

    def bool_mask(self) -> np.ndarray:
        m = np.zeros(self.T, dtype=bool)
        m[list(self.masked_indices)] = True
        return m

    def mask_vector(self) -> np.ndarray:
        """Velocity-pair gate of length T-1: pair (t, t+1) counts when both frames are masked."""
        m = self.bool_mask()
        return (m[:-1] & m[1:]).astype(np.int64)


def n_masked(T: int, alpha: float) -> int:
    return int(np.floor(alpha * T + 0.5))


def sample_mask(T: int, alpha: float, rng: np.random.Generator) -> MaskSpec:
    if not 0 <= alpha < 1:
        raise ValueError(f"mask ratio must lie in [0, 1), got {alpha}")
    k = n_masked(T, alpha)
    idx = np.sort(rng.choice(T, size=k, replace=False)) if k else np.array([], dtype=np.int64)
    return MaskSpec(tuple(int(i) for i in idx), alpha, T)


def stack_masks(masks: list[MaskSpec]) -> tuple[torch.Tensor, torch.Tensor]:
    """Boolean (B, T) masked-frame tensor and (B, n_keep) kept-index tensor."""
    kept = {len(m.kept_indices) for m in masks}
    if len(kept) != 1:
        raise IndexMismatch("all masks in a batch must keep the same number of frames")
    masked = torch.as_tensor(np.stack([m.bool_mask() for m in masks]))
    keep = torch.as_tensor(np.array([m.kept_indices for m in masks], dtype=np.int64)).reshape(len(masks), -1)
    return masked, keep


@dataclass
class GlobalMemory:
    tokens: torch.Tensor      # (B, n_keep, d_enc)
    indices: torch.Tensor     # (B, n_keep) original frame indices
    attention: list           # per layer (B, heads, n_keep, n_keep)


@dataclass
class GMMOutput:
    params: ParamTriple       # per frame, (B, T, ...)
    memory: GlobalMemory
    long_term: torch.Tensor   # (B, T, d_dec)
    decoder_attention: list


class SmplToken(nn.Module):
    """Mean-template mask token: a constant 157-d vector lifted to the decoder width."""

    def __init__(self, d: int):
        super().__init__()
        self.register_buffer("template", mean_template(torch.float32), persistent=False)
        self.embed = MLP(N_PARAMS, d, d)

    def forward(self) -> torch.Tensor:
        return self.embed(self.template)

    def reset_parameters(self, gen):
        self.embed.reset_parameters(gen)

    @staticmethod
    def count(d: int) -> int:
        return MLP.count(N_PARAMS, d, d)


class LearnableToken(nn.Module):
    def __init__(self, d: int):
        super().__init__()
        self.token = nn.Parameter(torch.zeros(d))

    def forward(self) -> torch.Tensor:
        return self.token

    def reset_parameters(self, gen):
        with torch.no_grad():
            nn.init.normal_(self.token, std=0.02, generator=gen)

    @staticmethod
    def count(d: int) -> int:
        return d


class IterativeRegressor(nn.Module):
    """Theta <- Theta + MLP([h, Theta]) repeated ``n_iter`` times from the mean template."""

    def __init__(self, d: int, hidden: int, n_iter: int = 3):
        super().__init__()
        if n_iter < 1:
            raise ValueError("n_iter must be >= 1")
        self.n_iter = n_iter
        self.register_buffer("init", mean_template(torch.float32), persistent=False)
        self.mlp = MLP(d + N_PARAMS, hidden, N_PARAMS, n_hidden=2, out_gain=0.01)

    def forward(self, h: torch.Tensor, n_iter: Optional[int] = None) -> ParamTriple:
        theta = self.init.expand(*h.shape[:-1], N_PARAMS)
        for _ in range(n_iter or self.n_iter):
            theta = theta + self.mlp(torch.cat([h, theta], dim=-1))
        return ParamTriple.from_flat(theta)

    def reset_parameters(self, gen):
        self.mlp.reset_parameters(gen)

    @staticmethod
    def count(d: int, hidden: int) -> int:
        return MLP.count(d + N_PARAMS, hidden, N_PARAMS, n_hidden=2)


class GlobalMotionModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        enc, dec = cfg.global_encoder, cfg.global_decoder
        self.T = cfg.T
        self.in_proj = nn.Linear(cfg.feature_dim, enc.d_model)
        self.enc_pos = PositionalEmbedding(cfg.T, enc.d_model, enc.pos_embedding)
        self.encoder = TransformerStack(enc, final_norm=True)
        self.enc_to_dec = nn.Linear(enc.d_model, dec.d_model)
        self.mask_token = SmplToken(dec.d_model) if cfg.mask_token == "smpl" else LearnableToken(dec.d_model)
        self.dec_pos = PositionalEmbedding(cfg.T, dec.d_model, dec.pos_embedding)
        self.decoder = TransformerStack(dec, final_norm=True)
        self.regressor = IterativeRegressor(dec.d_model, cfg.regressor_hidden, cfg.n_iter)

    def encode(self, S_kept: torch.Tensor, positions: torch.Tensor) -> GlobalMemory:
        """Encode only the unmasked tokens ``S_kept`` (B, n_keep, F) at their frame ``positions``."""
        if S_kept.shape[-2] == 0:
            raise EmptyInput("global encoder needs at least one unmasked token")
        x = self.in_proj(S_kept) + self.enc_pos(positions)
        x, attn = self.encoder(x)
        return GlobalMemory(x, positions, attn)

    def decode(self, memory: GlobalMemory, masked: torch.Tensor):
        """Reassemble the full sequence (mask tokens in masked slots) and decode it."""
        B, T = masked.shape
        covered = torch.zeros(B, T, dtype=torch.long).scatter_add(
            1, memory.indices, torch.ones_like(memory.indices))
        if not torch.equal(covered.bool() ^ masked, torch.ones_like(masked)) or covered.max() > 1:
            raise IndexMismatch("memory indices and masked indices must partition the window")
        mem = self.enc_to_dec(memory.tokens)
        full = mem.new_zeros(B, T, mem.shape[-1]).scatter(
            1, memory.indices.unsqueeze(-1).expand(-1, -1, mem.shape[-1]), mem)
        if bool(masked.any()):
            full = torch.where(masked.unsqueeze(-1), self.mask_token().to(mem.dtype), full)
        full = full + self.dec_pos(torch.arange(T))
        return self.decoder(full)

    def forward(self, S: torch.Tensor, masked: torch.Tensor, kept: torch.Tensor) -> GMMOutput:
        S_kept = torch.gather(S, 1, kept.unsqueeze(-1).expand(-1, -1, S.shape[-1]))
        memory = self.encode(S_kept, kept)
        h, dec_attn = self.decode(memory, masked)
        return GMMOutput(self.regressor(h), memory, h, dec_attn)

    def reset_parameters(self, gen):
        init_linear(self.in_proj, gen)
        self.enc_pos.reset_parameters(gen)
        self.encoder.reset_parameters(gen)
        init_linear(self.enc_to_dec, gen)
        self.mask_token.reset_parameters(gen)
        self.dec_pos.reset_parameters(gen)
        self.decoder.reset_parameters(gen)
        self.regressor.reset_parameters(gen)

    @staticmethod
    def count(cfg: ModelConfig) -> int:
        enc, dec = cfg.global_encoder, cfg.global_decoder
        token = SmplToken.count(dec.d_model) if cfg.mask_token == "smpl" else LearnableToken.count(dec.d_model)
        return (linear_count(cfg.feature_dim, enc.d_model)
                + PositionalEmbedding.count(cfg.T, enc.d_model, enc.pos_embedding)
                + TransformerStack.count(enc, final_norm=True)
                + linear_count(enc.d_model, dec.d_model)
                + token
                + PositionalEmbedding.count(cfg.T, dec.d_model, dec.pos_embedding)
                + TransformerStack.count(dec, final_norm=True)
                + IterativeRegressor.count(dec.d_model, cfg.regressor_hidden))
