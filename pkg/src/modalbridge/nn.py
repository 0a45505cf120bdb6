"""Shared layers built on the tensor engine: linear maps, pre-norm
transformer blocks, and sinusoidal positions."""

from __future__ import annotations

import numpy as np

from . import numerics as nm
from .numerics import Tensor

def fan_in_uniform(rng: np.random.Generator, n_in: int, n_out: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(n_in)
    return rng.uniform(-bound, bound, size=(n_in, n_out)).astype(np.float32)


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None].astype(np.float64)
    i = np.arange(dim // 2)[None, :].astype(np.float64)
    angles = pos / np.power(10000.0, 2 * i / dim)
    enc = np.zeros((length, dim), dtype=np.float32)
    enc[:, 0::2] = np.sin(angles)
    enc[:, 1::2] = np.cos(angles)
    return enc


class Linear:
    def __init__(self, rng, n_in, n_out, zero_init=False):
        if zero_init:
            w = np.zeros((n_in, n_out), dtype=np.float32)
        else:
            w = fan_in_uniform(rng, n_in, n_out)
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(n_out, dtype=np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return nm.add_row(nm.matmul(x, self.w), self.b)

    def parameters(self):
        return [self.w, self.b]


class TransformerBlock:
    """Pre-norm block: x + attn(ln(x)), then x + mlp(ln(x))."""

    def __init__(self, rng, dim, n_heads, causal=False, mlp_mult=4):
        if dim % n_heads != 0:
            raise nm.ShapeError(f"dim {dim} not divisible by heads {n_heads}")
        self.dim = dim
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.causal = causal
        self.wq = Linear(rng, dim, dim)
        self.wk = Linear(rng, dim, dim)
        self.wv = Linear(rng, dim, dim)
        self.wo = Linear(rng, dim, dim)
        self.ln1_g = Tensor(np.ones(dim, dtype=np.float32), requires_grad=True)
        self.ln1_b = Tensor(np.zeros(dim, dtype=np.float32), requires_grad=True)
        self.ln2_g = Tensor(np.ones(dim, dtype=np.float32), requires_grad=True)
        self.ln2_b = Tensor(np.zeros(dim, dtype=np.float32), requires_grad=True)
        self.fc1 = Linear(rng, dim, mlp_mult * dim)
        self.fc2 = Linear(rng, mlp_mult * dim, dim)

    def _attend(self, x: Tensor) -> Tensor:
        q = self.wq(x)
        k = self.wk(x)
        v = self.wv(x)
        attended = nm.multihead_attention(q, k, v, self.n_heads, causal=self.causal)
        return self.wo(attended)

    def __call__(self, x: Tensor) -> Tensor:
        h = nm.layer_norm(x, self.ln1_g, self.ln1_b)
        x = nm.add(x, self._attend(h))
        h = nm.layer_norm(x, self.ln2_g, self.ln2_b)
        return nm.add(x, self.fc2(nm.gelu(self.fc1(h))))

    def parameters(self):
        ps = []
        for lin in (self.wq, self.wk, self.wv, self.wo, self.fc1, self.fc2):
            ps.extend(lin.parameters())
        ps.extend([self.ln1_g, self.ln1_b, self.ln2_g, self.ln2_b])
        return ps


def named_parameters(prefix: str, module) -> dict:
    """Stable name -> Tensor map for checkpointing."""
    out = {}
    for i, p in enumerate(module.parameters()):
        out[f"{prefix}.{i}"] = p
    return out
