"""Dense tensor engine with reverse-mode autodiff on an explicit tape.

Everything downstream (encoders, LM, projector) is built from the
primitives here. Arrays are plain numpy, row-major; float32 is the
training precision, float64 is used by the gradient-check tests.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class EmptySupervisionError(ValueError):
    """Raised when a loss is asked to average over zero supervised positions."""


class OptimizerStateError(ValueError):
    """Raised when optimizer state no longer matches its parameters."""


class Tensor:
    """Dense n-d array participating in tape-based autodiff.

    ``grad`` is allocated lazily on first accumulation and always matches
    ``data`` in shape and dtype.
    """

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _accum(t: Tensor, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


_ACTIVE_TAPE = None


class Tape:
    """Ordered record of primitive ops; backward replays it in reverse."""

    def __init__(self):
        self._records = []

    def __enter__(self):
        global _ACTIVE_TAPE
        self._prev = _ACTIVE_TAPE
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._prev
        return False

    def record(self, backward_fn):
        self._records.append(backward_fn)

    def backward(self, loss: Tensor):
        if loss.data.shape != ():
            raise ShapeError(f"backward expects a scalar loss, got shape {loss.data.shape}")
        loss.grad = np.ones((), dtype=loss.data.dtype)
        for fn in reversed(self._records):
            fn()

    def __len__(self):
        return len(self._records)


def _out(data, inputs):
    """Build the op output; it requires grad iff any input does and a tape is live."""
    rq = _ACTIVE_TAPE is not None and any(t.requires_grad for t in inputs)
    return Tensor(data, requires_grad=rq, dtype=data.dtype)


def _record(out, inputs, backward_fn):
    if out.requires_grad:
        _ACTIVE_TAPE.record(backward_fn)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    out = _out(a.data @ b.data, (a, b))

    def backward():
        g = out.grad
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _record(out, (a, b), backward)


def transpose(x: Tensor) -> Tensor:
    out = _out(x.data.T.copy(), (x,))

    def backward():
        _accum(x, out.grad.T)

    return _record(out, (x,), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
    out = _out(a.data + b.data, (a, b))

    def backward():
        _accum(a, out.grad)
        _accum(b, out.grad)

    return _record(out, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub: shape mismatch {a.shape} vs {b.shape}")
    out = _out(a.data - b.data, (a, b))

    def backward():
        _accum(a, out.grad)
        _accum(b, -out.grad)

    return _record(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    out = _out(a.data * b.data, (a, b))

    def backward():
        _accum(a, out.grad * b.data)
        _accum(b, out.grad * a.data)

    return _record(out, (a, b), backward)


def scale(x: Tensor, c: float) -> Tensor:
    out = _out(x.data * c, (x,))

    def backward():
        _accum(x, out.grad * c)

    return _record(out, (x,), backward)


def add_row(x: Tensor, bias: Tensor) -> Tensor:
    """Broadcast a length-n bias over the rows of an m x n matrix."""
    if x.data.ndim != 2 or bias.data.ndim != 1 or x.shape[1] != bias.shape[0]:
        raise ShapeError(f"add_row: {x.shape} + {bias.shape}")
    out = _out(x.data + bias.data[None, :], (x, bias))

    def backward():
        _accum(x, out.grad)
        _accum(bias, out.grad.sum(axis=0))

    return _record(out, (x, bias), backward)


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(x: Tensor) -> Tensor:
    d = x.data
    inner = _GELU_C * (d + 0.044715 * d**3)
    t = np.tanh(inner)
    out = _out(0.5 * d * (1.0 + t), (x,))

    def backward():
        dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * d * d)
        _accum(x, out.grad * (0.5 * (1.0 + t) + 0.5 * d * dt))

    return _record(out, (x,), backward)


def softmax_rows(x: Tensor) -> Tensor:
    if not np.isfinite(x.data).all():
        raise ValueError("softmax_rows: non-finite input")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)
    out = _out(s, (x,))

    def backward():
        g = out.grad
        _accum(x, s * (g - (g * s).sum(axis=-1, keepdims=True)))

    return _record(out, (x,), backward)


def multihead_attention(q: Tensor, k: Tensor, v: Tensor, n_heads: int,
                        causal: bool = False) -> Tensor:
    """Fused softmax(Q K^T / sqrt(dh)) V over column-split heads.

    One tape record for the whole attention pattern; equivalent to slicing
    the heads out, attending per head, and concatenating, but without the
    per-head op graph.
    """
    if q.data.ndim != 2 or q.shape != k.shape or q.shape != v.shape:
        raise ShapeError(f"multihead_attention: q/k/v shapes {q.shape}/{k.shape}/{v.shape}")
    T, d = q.shape
    if n_heads < 1 or d % n_heads:
        raise ShapeError(f"multihead_attention: dim {d} not divisible by {n_heads} heads")
    dh = d // n_heads
    scale_v = np.asarray(1.0 / np.sqrt(dh), dtype=q.dtype)

    def split(t):  # (T, d) -> (H, T, dh)
        return t.data.reshape(T, n_heads, dh).transpose(1, 0, 2)

    Q, K, V = split(q), split(k), split(v)
    scores = (Q @ K.transpose(0, 2, 1)) * scale_v
    if causal:
        scores = scores + np.triu(np.full((T, T), -1e9, dtype=q.dtype), k=1)
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    attn = e / e.sum(axis=-1, keepdims=True)
    merged = (attn @ V).transpose(1, 0, 2).reshape(T, d)
    out = _out(merged, (q, k, v))

    def backward():
        g = out.grad.reshape(T, n_heads, dh).transpose(1, 0, 2)
        d_attn = g @ V.transpose(0, 2, 1)
        d_scores = attn * (d_attn - (d_attn * attn).sum(axis=-1, keepdims=True))
        d_scores = d_scores * scale_v

        def merge(t):  # (H, T, dh) -> (T, d)
            return t.transpose(1, 0, 2).reshape(T, d)

        _accum(q, merge(d_scores @ K))
        _accum(k, merge(d_scores.transpose(0, 2, 1) @ Q))
        _accum(v, merge(attn.transpose(0, 2, 1) @ g))

    return _record(out, (q, k, v), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    if x.data.ndim != 2 or x.shape[1] < 2:
        raise ShapeError(f"layer_norm: need m x n with n >= 2, got {x.shape}")
    if gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise ShapeError(f"layer_norm: gain/bias {gain.shape}/{bias.shape} vs n={x.shape[1]}")
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = _out(gain.data[None, :] * xhat + bias.data[None, :], (x, gain, bias))

    def backward():
        g = out.grad
        _accum(bias, g.sum(axis=0))
        _accum(gain, (g * xhat).sum(axis=0))
        dxhat = g * gain.data[None, :]
        m1 = dxhat.mean(axis=1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
        _accum(x, inv * (dxhat - m1 - xhat * m2))

    return _record(out, (x, gain, bias), backward)


def embedding(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ShapeError(f"embedding: ids must be 1-d, got {ids.shape}")
    out = _out(table.data[ids].copy(), (table,))

    def backward():
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, ids, out.grad)

    if table.requires_grad and _ACTIVE_TAPE is not None:
        _ACTIVE_TAPE.record(backward)
    return out


def concat_rows(parts) -> Tensor:
    parts = list(parts)
    out = _out(np.concatenate([p.data for p in parts], axis=0), parts)

    def backward():
        off = 0
        for p in parts:
            n = p.shape[0]
            _accum(p, out.grad[off:off + n])
            off += n

    return _record(out, parts, backward)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    out = _out(x.data[start:stop].copy(), (x,))

    def backward():
        g = np.zeros_like(x.data)
        g[start:stop] = out.grad
        _accum(x, g)

    return _record(out, (x,), backward)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    out = _out(x.data[:, start:stop].copy(), (x,))

    def backward():
        g = np.zeros_like(x.data)
        g[:, start:stop] = out.grad
        _accum(x, g)

    return _record(out, (x,), backward)


def concat_cols(parts) -> Tensor:
    parts = list(parts)
    out = _out(np.concatenate([p.data for p in parts], axis=1), parts)

    def backward():
        off = 0
        for p in parts:
            n = p.shape[1]
            _accum(p, out.grad[:, off:off + n])
            off += n

    return _record(out, parts, backward)


def pool_rows_mean(x: Tensor, r: int) -> Tensor:
    """Mean-pool groups of r consecutive rows; the last group may be short."""
    if r < 1:
        raise ShapeError(f"pool_rows_mean: r must be >= 1, got {r}")
    n = x.shape[0]
    bounds = [(i, min(i + r, n)) for i in range(0, n, r)]
    data = np.stack([x.data[a:b].mean(axis=0) for a, b in bounds])
    out = _out(data, (x,))

    def backward():
        g = np.zeros_like(x.data)
        for k, (a, b) in enumerate(bounds):
            g[a:b] = out.grad[k] / (b - a)
        _accum(x, g)

    return _record(out, (x,), backward)


def normalize_rows(x: Tensor, eps: float = 1e-8) -> Tensor:
    norm = np.sqrt((x.data**2).sum(axis=1, keepdims=True)) + eps
    y = x.data / norm
    out = _out(y, (x,))

    def backward():
        g = out.grad
        _accum(x, g / norm - y * (g * y).sum(axis=1, keepdims=True) / norm)

    return _record(out, (x,), backward)


def sum_all(x: Tensor) -> Tensor:
    out = _out(np.asarray(x.data.sum(), dtype=x.data.dtype), (x,))

    def backward():
        _accum(x, np.full_like(x.data, out.grad))

    return _record(out, (x,), backward)


def mean_all(x: Tensor) -> Tensor:
    out = _out(np.asarray(x.data.mean(), dtype=x.data.dtype), (x,))

    def backward():
        _accum(x, np.full_like(x.data, out.grad / x.data.size))

    return _record(out, (x,), backward)


def mse(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mse: shape mismatch {a.shape} vs {b.shape}")
    diff = a.data - b.data
    out = _out(np.asarray((diff**2).mean(), dtype=a.data.dtype), (a, b))

    def backward():
        g = out.grad * 2.0 * diff / diff.size
        _accum(a, g)
        _accum(b, -g)

    return _record(out, (a, b), backward)


def masked_cross_entropy(logits: Tensor, targets, mask) -> Tensor:
    """Mean token-level CE over positions where mask == 1.

    Masked-out positions contribute exactly zero loss and zero gradient.
    """
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    T, V = logits.shape
    if targets.shape != (T,) or mask.shape != (T,):
        raise ShapeError(
            f"masked_cross_entropy: logits {logits.shape}, targets {targets.shape}, mask {mask.shape}")
    if targets.min() < 0 or targets.max() >= V:
        raise ValueError(f"masked_cross_entropy: target id out of range [0,{V})")
    n_sup = int(mask.sum())
    if n_sup == 0:
        raise EmptySupervisionError("masked_cross_entropy: all positions masked out")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    loss = -logp[np.arange(T), targets][mask].sum() / n_sup
    out = _out(np.asarray(loss, dtype=logits.data.dtype), (logits,))

    def backward():
        probs = np.exp(logp)
        g = probs.copy()
        g[np.arange(T), targets] -= 1.0
        g[~mask] = 0.0
        _accum(logits, out.grad * g / n_sup)

    return _record(out, (logits,), backward)


class Adam:
    """Adam with bias correction; state shape-checked on every step."""

    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        b1t = 1.0 - self.b1**self.t
        b2t = 1.0 - self.b2**self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            if p.grad.shape != self.m[i].shape:
                raise OptimizerStateError(
                    f"param {i}: state shape {self.m[i].shape} vs grad {p.grad.shape}")
            g = p.grad
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            mhat = self.m[i] / b1t
            vhat = self.v[i] / b2t
            p.data -= lr * mhat / (np.sqrt(vhat) + self.eps)
