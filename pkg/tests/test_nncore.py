import math

import numpy as np
import pytest
import torch
from torch import nn

from glot.errors import NaNGradient, ShapeMismatch
from glot.nncore.gradcheck import grad_check, relative_error
from glot.nncore.layers import (MLP, MultiHeadAttention, PositionalEmbedding, TransformerBlock,
                                TransformerConfig, TransformerStack, sinusoidal_table)
from glot.nncore.optim import AdamState, Schedule, adam_step
from glot.nncore.params import ParamStore


def seeded(module, seed=0):
    module.reset_parameters(torch.Generator().manual_seed(seed))
    return module.double()


def naive_mha(mha, xq, xkv):
    """Per-head loops over explicit query/key pairs."""
    d, h = mha.d_model, mha.n_heads
    c = d // h
    Q, K, V = mha.q(xq), mha.k(xkv), mha.v(xkv)
    out = torch.zeros(xq.shape[0], d, dtype=xq.dtype)
    weights = torch.zeros(h, xq.shape[0], xkv.shape[0], dtype=xq.dtype)
    for head in range(h):
        sl = slice(head * c, (head + 1) * c)
        for i in range(xq.shape[0]):
            logits = torch.stack([Q[i, sl] @ K[j, sl] / math.sqrt(c) for j in range(xkv.shape[0])])
            w = torch.exp(logits - logits.max())
            w = w / w.sum()
            weights[head, i] = w
            out[i, sl] = (w[:, None] * V[:, sl]).sum(0)
    return mha.o(out), weights


@pytest.mark.parametrize("h", [1, 2, 4])
def test_attention_matches_naive_loop(h):
    mha = seeded(MultiHeadAttention(8, h))
    g = torch.Generator().manual_seed(1)
    xq = torch.randn(3, 8, generator=g, dtype=torch.float64)
    xkv = torch.randn(5, 8, generator=g, dtype=torch.float64)
    out, w = mha(xq, xkv)
    ref_out, ref_w = naive_mha(mha, xq, xkv)
    assert torch.allclose(out, ref_out, atol=1e-12)
    assert torch.allclose(w, ref_w, atol=1e-12)
    assert torch.allclose(w.sum(-1), torch.ones(h, 3, dtype=torch.float64), atol=1e-12)


def test_attention_shape_mismatch():
    mha = MultiHeadAttention(8, 2)
    with pytest.raises(ShapeMismatch):
        mha(torch.zeros(2, 8), torch.zeros(2, 6))
    with pytest.raises(ValueError):
        MultiHeadAttention(6, 4)


def test_zero_weight_block_is_identity():
    block = seeded(TransformerBlock(TransformerConfig(1, 8, 2)))
    with torch.no_grad():
        for p in block.parameters():
            p.zero_()
    x = torch.randn(4, 8, dtype=torch.float64)
    assert torch.equal(block(x)[0], x)


def test_cross_block_needs_memory():
    block = TransformerBlock(TransformerConfig(1, 8, 2), cross=True)
    with pytest.raises(ShapeMismatch):
        block(torch.zeros(1, 8))


def test_stack_final_norm_and_counts():
    cfg = TransformerConfig(2, 8, 2)
    for final in (False, True):
        stack = TransformerStack(cfg, final_norm=final)
        assert sum(p.numel() for p in stack.parameters()) == TransformerStack.count(cfg, final)
    stack = seeded(TransformerStack(cfg, final_norm=True))
    y, weights = stack(torch.randn(2, 5, 8, dtype=torch.float64))
    assert len(weights) == 2
    assert torch.allclose(y.mean(-1), torch.zeros(2, 5, dtype=torch.float64), atol=1e-12)


def test_mlp_count_and_gain():
    m = MLP(5, 7, 3, n_hidden=2, out_gain=0.0)
    assert sum(p.numel() for p in m.parameters()) == MLP.count(5, 7, 3, 2)
    seeded(m)
    assert torch.equal(m(torch.randn(4, 5, dtype=torch.float64)), torch.zeros(4, 3, dtype=torch.float64))


def test_sinusoidal_table_values():
    tab = sinusoidal_table(4, 6)
    assert tab[0, 0] == 0 and tab[0, 1] == 1
    assert tab[3, 2] == pytest.approx(math.sin(3 / 10000 ** (2 / 6)))
    pe = PositionalEmbedding(4, 6, "sinusoidal")
    assert sum(p.numel() for p in pe.parameters()) == 0


# ---------------------------------------------------------------------------
# schedule and Adam

def test_schedule_closed_form():
    s = Schedule(1e-3, warmup=10, horizon=110)
    for step in range(0, 130):
        if step < 10:
            expect = 1e-3 * step / 10
        elif step >= 110:
            expect = 0.0
        else:
            expect = 1e-3 * 0.5 * (1 + math.cos(math.pi * (step - 10) / 100))
        assert abs(s(step) - expect) <= 1e-12
    assert s(10) == pytest.approx(1e-3)


class Bowl(nn.Module):
    def __init__(self):
        super().__init__()
        self.x = nn.Parameter(torch.tensor([3.0, -2.0, 0.5], dtype=torch.float64))


def test_adam_minimises_quadratic():
    mod = Bowl()
    store = ParamStore({"bowl": mod})
    target = torch.tensor([1.0, 1.0, -1.0], dtype=torch.float64)
    state, sched = AdamState(), Schedule(0.05, 0, 2000)
    for _ in range(2000):
        store.zero_grad()
        ((mod.x - target) ** 2).sum().backward()
        adam_step(store, store.grads(), state, sched)
    assert torch.allclose(mod.x, target, atol=1e-4)


def test_adam_first_step_matches_formula():
    mod = Bowl()
    store = ParamStore({"b": mod})
    g = torch.tensor([0.5, -4.0, 1e-3], dtype=torch.float64)
    before = mod.x.detach().clone()
    lr = adam_step(store, {"b/x": g}, AdamState(), Schedule(0.1, 0, 10))
    # bias-corrected first step moves each coordinate by lr * sign(g) up to eps
    expect = before - 0.1 * g / (g.abs() + 1e-8)
    assert lr == 0.1
    assert torch.allclose(mod.x.detach(), expect, atol=1e-12)


def test_zero_grads_leave_params_unchanged():
    mod = Bowl()
    store = ParamStore({"b": mod})
    before = mod.x.detach().clone()
    state = AdamState()
    for _ in range(5):
        adam_step(store, {"b/x": torch.zeros(3, dtype=torch.float64)}, state, Schedule(0.1, 0, 10))
    assert torch.equal(mod.x.detach(), before)


def test_nan_gradient_raises():
    mod = Bowl()
    store = ParamStore({"b": mod})
    with pytest.raises(NaNGradient):
        adam_step(store, {"b/x": torch.tensor([0.0, float("nan"), 0.0])}, AdamState(), Schedule())


# ---------------------------------------------------------------------------
# parameter store

def test_param_store_order_and_roundtrip():
    a, b = MLP(2, 3, 1), MLP(1, 2, 2)
    store = ParamStore({"a": a, "b": b})
    assert store.names()[0] == "a/layers.0.weight"
    assert store.count() == MLP.count(2, 3, 1) + MLP.count(1, 2, 2)
    assert dict(store.section_counts()) == {"a": MLP.count(2, 3, 1), "b": MLP.count(1, 2, 2)}
    arrays = store.to_arrays()
    fresh = ParamStore({"a": MLP(2, 3, 1), "b": MLP(1, 2, 2)})
    fresh.load_arrays(arrays)
    for name, p in fresh:
        assert np.array_equal(p.detach().numpy(), arrays[name])


def test_param_store_rejects_missing():
    store = ParamStore({"a": MLP(2, 3, 1)})
    arrays = store.to_arrays()
    arrays.popitem()
    with pytest.raises(Exception):
        store.load_arrays(arrays)


# ---------------------------------------------------------------------------
# gradient check

def test_relative_error_convention():
    assert relative_error(1.0, 1.0) == 0.0
    assert relative_error(0.0, 1e-10) == 0.0
    assert relative_error(2.0, 1.0) == pytest.approx(0.5)


def test_grad_check_passes_on_mlp():
    mlp = seeded(MLP(4, 6, 2))
    store = ParamStore({"m": mlp})
    x = torch.randn(5, 4, dtype=torch.float64, generator=torch.Generator().manual_seed(2))
    report = grad_check(lambda: (mlp(x) ** 2).sum(), store, max_entries=4, n_directions=2)
    assert report.passed and report.max_rel_err < 1e-6


def test_grad_check_linear_loss_exact():
    mod = Bowl()
    store = ParamStore({"b": mod})
    c = torch.tensor([1.0, -2.0, 3.0], dtype=torch.float64)
    report = grad_check(lambda: (c * mod.x).sum(), store)
    assert report.max_rel_err < 1e-9


def test_grad_check_negative_control():
    mod = Bowl()
    store = ParamStore({"b": mod})
    c = torch.tensor([1.0, -2.0, 3.0], dtype=torch.float64)
    wrong = {"b/x": c * 1.01}
    report = grad_check(lambda: (c * mod.x).sum(), store, grads=wrong)
    assert not report.passed and report.worst == "b/x"
    assert "FAIL" in report.to_text()
