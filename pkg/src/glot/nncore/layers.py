"""Transformer building blocks with inspectable attention weights."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from ..errors import ShapeMismatch


@dataclass
class TransformerConfig:
    n_layers: int = 2
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 0          # 0 means 4 * d_model
    dropout: float = 0.0
    pos_embedding: str = "learnable"   # or "sinusoidal"

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.pos_embedding not in ("learnable", "sinusoidal"):
            raise ValueError(f"unknown positional embedding {self.pos_embedding!r}")

    @property
    def ff_dim(self) -> int:
        return self.d_ff or 4 * self.d_model


def init_linear(layer: nn.Linear, gen: torch.Generator, gain: float = 1.0) -> None:
    with torch.no_grad():
        nn.init.xavier_uniform_(layer.weight, gain=gain, generator=gen)
        if layer.bias is not None:
            layer.bias.zero_()


def linear_count(n_in: int, n_out: int) -> int:
    return n_in * n_out + n_out


class MLP(nn.Module):
    """Dense layers with GELU between them; ``out_gain`` shrinks the last layer at init."""

    def __init__(self, n_in: int, hidden: int, n_out: int, n_hidden: int = 1, out_gain: float = 1.0):
        super().__init__()
        dims = [n_in] + [hidden] * n_hidden + [n_out]
        self.layers = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))
        self.out_gain = out_gain

    def forward(self, x):
        for layer in self.layers[:-1]:
            x = F.gelu(layer(x))
        return self.layers[-1](x)

    def reset_parameters(self, gen):
        for i, layer in enumerate(self.layers):
            init_linear(layer, gen, self.out_gain if i == len(self.layers) - 1 else 1.0)

    @staticmethod
    def count(n_in, hidden, n_out, n_hidden=1) -> int:
        dims = [n_in] + [hidden] * n_hidden + [n_out]
        return sum(linear_count(a, b) for a, b in zip(dims[:-1], dims[1:]))


class MultiHeadAttention(nn.Module):
    """softmax(Q K^T / sqrt(C)) V per head, heads concatenated and projected."""

    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        if d_model % n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        self.d_model, self.n_heads = d_model, n_heads
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_model, d_model)
        self.v = nn.Linear(d_model, d_model)
        self.o = nn.Linear(d_model, d_model)

    def forward(self, xq: torch.Tensor, xkv: torch.Tensor):
        """``xq`` (..., n_q, d), ``xkv`` (..., n_k, d) -> output (..., n_q, d), weights (..., h, n_q, n_k)."""
        d, h = self.d_model, self.n_heads
        if xq.shape[-1] != d or xkv.shape[-1] != d or xq.shape[:-2] != xkv.shape[:-2]:
            raise ShapeMismatch(f"attention inputs {tuple(xq.shape)} / {tuple(xkv.shape)} for d={d}")
        c = d // h

        def split(t):
            return t.reshape(*t.shape[:-1], h, c).transpose(-2, -3)

        q, k, v = split(self.q(xq)), split(self.k(xkv)), split(self.v(xkv))
        logits = q @ k.transpose(-1, -2) / math.sqrt(c)
        weights = torch.softmax(logits, dim=-1)
        out = (weights @ v).transpose(-2, -3)
        out = out.reshape(*out.shape[:-2], d)
        return self.o(out), weights

    def reset_parameters(self, gen):
        for layer in (self.q, self.k, self.v, self.o):
            init_linear(layer, gen)

    @staticmethod
    def count(d: int) -> int:
        return 4 * linear_count(d, d)


class TransformerBlock(nn.Module):
    """Pre-norm residual block: x + MHA(LN(x)), then x + FFN(LN(x)).

    In cross mode keys and values come from ``memory`` instead of ``x``.
    """

    def __init__(self, cfg: TransformerConfig, cross: bool = False):
        super().__init__()
        d = cfg.d_model
        self.cross = cross
        self.ln1 = nn.LayerNorm(d)
        self.attn = MultiHeadAttention(d, cfg.n_heads)
        self.ln2 = nn.LayerNorm(d)
        self.fc1 = nn.Linear(d, cfg.ff_dim)
        self.fc2 = nn.Linear(cfg.ff_dim, d)
        self.dropout = cfg.dropout

    def forward(self, x, memory=None):
        if self.cross and memory is None:
            raise ShapeMismatch("cross-attention block needs a memory")
        h = self.ln1(x)
        kv = memory if self.cross else h
        a, weights = self.attn(h, kv)
        x = x + F.dropout(a, self.dropout, self.training)
        f = self.fc2(F.gelu(self.fc1(self.ln2(x))))
        x = x + F.dropout(f, self.dropout, self.training)
        return x, weights

    def reset_parameters(self, gen):
        for ln in (self.ln1, self.ln2):
            nn.init.ones_(ln.weight)
            nn.init.zeros_(ln.bias)
        self.attn.reset_parameters(gen)
        init_linear(self.fc1, gen)
        init_linear(self.fc2, gen)

    @staticmethod
    def count(cfg: TransformerConfig) -> int:
        d, ff = cfg.d_model, cfg.ff_dim
        return 4 * d + MultiHeadAttention.count(d) + linear_count(d, ff) + linear_count(ff, d)


class TransformerStack(nn.Module):
    """A sequence of blocks, optionally followed by a LayerNorm.

    Pre-norm blocks never normalise the residual stream itself, so stacks whose
    output feeds a regression head use ``final_norm``.
    """

    def __init__(self, cfg: TransformerConfig, cross: bool = False, final_norm: bool = False):
        super().__init__()
        self.blocks = nn.ModuleList(TransformerBlock(cfg, cross) for _ in range(cfg.n_layers))
        self.ln_out = nn.LayerNorm(cfg.d_model) if final_norm else None

    def forward(self, x, memory=None):
        weights = []
        for block in self.blocks:
            x, w = block(x, memory)
            weights.append(w)
        if self.ln_out is not None:
            x = self.ln_out(x)
        return x, weights

    def reset_parameters(self, gen):
        for block in self.blocks:
            block.reset_parameters(gen)
        if self.ln_out is not None:
            nn.init.ones_(self.ln_out.weight)
            nn.init.zeros_(self.ln_out.bias)

    @staticmethod
    def count(cfg: TransformerConfig, final_norm: bool = False) -> int:
        return cfg.n_layers * TransformerBlock.count(cfg) + (2 * cfg.d_model if final_norm else 0)


def sinusoidal_table(n: int, d: int) -> torch.Tensor:
    pos = torch.arange(n, dtype=torch.float64)[:, None]
    i = torch.arange(0, d, 2, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, i / d)
    table = torch.zeros(n, d, dtype=torch.float64)
    table[:, 0::2] = torch.sin(angle)
    table[:, 1::2] = torch.cos(angle[:, : d // 2])
    return table


class PositionalEmbedding(nn.Module):
    """Per-position vectors, either learned or the fixed sinusoid table."""

    def __init__(self, n: int, d: int, kind: str = "learnable"):
        super().__init__()
        self.kind = kind
        if kind == "learnable":
            self.table = nn.Parameter(torch.zeros(n, d))
        else:
            self.register_buffer("table", sinusoidal_table(n, d).float(), persistent=False)

    def forward(self, positions: torch.Tensor) -> torch.Tensor:
        return self.table[positions]

    def reset_parameters(self, gen):
        if self.kind == "learnable":
            with torch.no_grad():
                nn.init.normal_(self.table, std=0.02, generator=gen)

    @staticmethod
    def count(n: int, d: int, kind: str) -> int:
        return n * d if kind == "learnable" else 0
