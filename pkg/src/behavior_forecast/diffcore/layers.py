"""Differentiable building blocks: dense, recurrent cells, causal convolution, attention, loss."""
from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor, as_tensor


class Module:
    """Container that discovers parameters and sub-modules from its attributes."""

    training: bool = False

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, val in vars(self).items():
            yield from _walk(val, f"{prefix}{name}")

    def parameters(self) -> dict[str, Parameter]:
        return dict(self.named_parameters())

    def modules(self) -> Iterator["Module"]:
        yield self
        for val in vars(self).values():
            for m in _submodules(val):
                yield from m.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters().values()))


def _walk(val, name):
    if isinstance(val, Parameter):
        yield name, val
    elif isinstance(val, Module):
        yield from val.named_parameters(name + ".")
    elif isinstance(val, (list, tuple)):
        for i, v in enumerate(val):
            yield from _walk(v, f"{name}.{i}")
    elif isinstance(val, dict):
        for k, v in val.items():
            yield from _walk(v, f"{name}.{k}")


def _submodules(val):
    if isinstance(val, Module):
        yield val
    elif isinstance(val, (list, tuple)):
        for v in val:
            yield from _submodules(v)
    elif isinstance(val, dict):
        for v in val.values():
            yield from _submodules(v)


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> Parameter:
    bound = 1.0 / math.sqrt(fan_in)
    return Parameter(rng.uniform(-bound, bound, size=shape))


# -- functional ops ----------------------------------------------------------

def dense(x, W, b=None) -> Tensor:
    x, W = as_tensor(x), as_tensor(W)
    if x.shape[-1] != W.shape[0]:
        raise ValueError(f"dense: input width {x.shape[-1]} != weight rows {W.shape[0]}")
    y = T.matmul(x, W)
    return y if b is None else T.add(y, b)


def leaky_relu(x, slope: float = 0.01) -> Tensor:
    return T.leaky_relu(x, slope)


def gru_cell(x, h, Wx, Wh, Wc, b) -> Tensor:
    """One GRU step.

    ``Wx`` is (in, 3H) for the update, reset and candidate gates; ``Wh`` is
    (H, 2H) for the update/reset recurrent terms and ``Wc`` (H, H) acts on the
    reset-gated state.
    """
    x, h = as_tensor(x), as_tensor(h)
    H = h.shape[-1]
    if Wx.shape[1] != 3 * H or Wh.shape != (H, 2 * H) or Wc.shape != (H, H):
        raise ValueError("gru_cell: weight shapes do not match hidden width")
    return gru_recur(T.add(T.matmul(x, Wx), b), h, Wh, Wc)


def gru_recur(gx: Tensor, h: Tensor, Wh, Wc) -> Tensor:
    """GRU step from precomputed input-gate pre-activations ``gx`` (..., 3H)."""
    H = h.shape[-1]
    gh = T.matmul(h, Wh)
    z = T.sigmoid(gx[..., :H] + gh[..., :H])
    r = T.sigmoid(gx[..., H:2 * H] + gh[..., H:])
    cand = T.tanh(gx[..., 2 * H:] + T.matmul(r * h, Wc))
    return h + z * (cand - h)


def lstm_cell(x, h, c, Wx, Wh, b) -> tuple[Tensor, Tensor]:
    """One LSTM step; gate order in the 4H columns is input, forget, candidate, output."""
    x, h, c = as_tensor(x), as_tensor(h), as_tensor(c)
    H = h.shape[-1]
    if Wx.shape[1] != 4 * H or Wh.shape != (H, 4 * H) or c.shape != h.shape:
        raise ValueError("lstm_cell: weight shapes do not match hidden width")
    return lstm_recur(T.add(T.matmul(x, Wx), b), h, c, Wh)


def lstm_recur(gx: Tensor, h: Tensor, c: Tensor, Wh) -> tuple[Tensor, Tensor]:
    """LSTM step from precomputed input pre-activations ``gx`` (..., 4H)."""
    H = h.shape[-1]
    g = gx + T.matmul(h, Wh)
    i = T.sigmoid(g[..., :H])
    f = T.sigmoid(g[..., H:2 * H])
    cand = T.tanh(g[..., 2 * H:3 * H])
    o = T.sigmoid(g[..., 3 * H:])
    c_new = f * c + i * cand
    return o * T.tanh(c_new), c_new


def causal_conv1d(x, W, b=None, dilation: int = 1) -> Tensor:
    """Valid (unpadded) dilated causal convolution over the second-to-last axis.

    ``x`` is (..., T, C_in) and ``W`` is (K, C_in, C_out).  Output frame ``t``
    combines inputs ``t, t+D, ..., t+D(K-1)``; the output has
    ``T - D(K-1)`` frames and frame ``t`` only sees inputs up to ``t + D(K-1)``.
    """
    x, W = as_tensor(x), as_tensor(W)
    K = W.shape[0]
    span = dilation * (K - 1)
    n = x.shape[-2]
    if n <= span:
        raise ValueError(f"causal_conv1d: input length {n} must exceed dilation*(kernel-1) = {span}")
    out_len = n - span
    y = None
    for k in range(K):
        xs = x[..., k * dilation: k * dilation + out_len, :]
        term = T.matmul(xs, W[k])
        y = term if y is None else y + term
    return y if b is None else y + b


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, heads: int) -> tuple[Tensor, Tensor]:
    """softmax(QK^T / sqrt(d_head)) V per head; returns (concatenated output, weights).

    Inputs are (..., T, d).  Weights are (..., heads, Tq, Tk).
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    d = q.shape[-1]
    if d % heads:
        raise ValueError(f"model width {d} is not divisible by {heads} heads")
    dh = d // heads

    def split(t):
        lead = t.shape[:-2]
        t = t.reshape(*lead, t.shape[-2], heads, dh)
        nd = t.ndim
        return T.transpose(t, list(range(nd - 3)) + [nd - 2, nd - 3, nd - 1])

    qh, kh, vh = split(q), split(k), split(v)
    scores = T.matmul(qh, T.swapaxes(kh, -1, -2)) * (1.0 / math.sqrt(dh))
    w = T.softmax(scores, axis=-1)
    o = T.matmul(w, vh)
    nd = o.ndim
    o = T.transpose(o, list(range(nd - 3)) + [nd - 2, nd - 3, nd - 1])
    return o.reshape(*o.shape[:-2], d), w


def masked_mse(pred, target, mask) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"masked_mse: shape mismatch {pred.shape} vs {target.shape}")
    m = np.broadcast_to(np.asarray(mask, dtype=np.float64), pred.shape)
    n = m.sum()
    if n == 0:
        raise ValueError("masked_mse: mask selects no entries")
    d = (pred - target) * m
    return T.tsum(d * d) * (1.0 / n)


def dropout(x: Tensor, p: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    """Inverted dropout; identity outside training."""
    if not training or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * keep


# -- modules -----------------------------------------------------------------

class Dense(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.W = uniform_init(rng, n_in, (n_in, n_out))
        self.b = Parameter(np.zeros(n_out))

    def __call__(self, x) -> Tensor:
        return dense(x, self.W, self.b)

    def zero_(self) -> None:
        self.W.data[...] = 0.0
        self.b.data[...] = 0.0


class GRUCell(Module):
    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        self.hidden = hidden
        fan = n_in + hidden
        self.Wx = uniform_init(rng, fan, (n_in, 3 * hidden))
        self.Wh = uniform_init(rng, fan, (hidden, 2 * hidden))
        self.Wc = uniform_init(rng, fan, (hidden, hidden))
        self.b = Parameter(np.zeros(3 * hidden))

    def __call__(self, x, h) -> Tensor:
        return gru_cell(x, h, self.Wx, self.Wh, self.Wc, self.b)

    def input_proj(self, x) -> Tensor:
        return T.add(T.matmul(as_tensor(x), self.Wx), self.b)

    def recur(self, gx, state) -> Tensor:
        return gru_recur(gx, state, self.Wh, self.Wc)


class LSTMCell(Module):
    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        self.hidden = hidden
        fan = n_in + hidden
        self.Wx = uniform_init(rng, fan, (n_in, 4 * hidden))
        self.Wh = uniform_init(rng, fan, (hidden, 4 * hidden))
        self.b = Parameter(np.zeros(4 * hidden))

    def __call__(self, x, h, c) -> tuple[Tensor, Tensor]:
        return lstm_cell(x, h, c, self.Wx, self.Wh, self.b)

    def input_proj(self, x) -> Tensor:
        return T.add(T.matmul(as_tensor(x), self.Wx), self.b)

    def recur(self, gx, state) -> tuple[Tensor, Tensor]:
        return lstm_recur(gx, state[0], state[1], self.Wh)


class CausalConv1d(Module):
    def __init__(self, c_in: int, c_out: int, kernel_size: int, dilation: int, rng: np.random.Generator):
        self.kernel_size = kernel_size
        self.dilation = dilation
        self.W = uniform_init(rng, c_in * kernel_size, (kernel_size, c_in, c_out))
        self.b = Parameter(np.zeros(c_out))

    def __call__(self, x) -> Tensor:
        return causal_conv1d(x, self.W, self.b, self.dilation)


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gamma = Parameter(np.ones(d))
        self.beta = Parameter(np.zeros(d))

    def __call__(self, x) -> Tensor:
        return T.layer_norm(as_tensor(x), self.gamma, self.beta)


class MultiHeadAttention(Module):
    """Self/cross attention with input and output projections (no attention dropout)."""

    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        if d % heads:
            raise ValueError(f"model width {d} is not divisible by {heads} heads")
        self.heads = heads
        self.q = Dense(d, d, rng)
        self.k = Dense(d, d, rng)
        self.v = Dense(d, d, rng)
        self.o = Dense(d, d, rng)

    def __call__(self, x, context=None) -> tuple[Tensor, Tensor]:
        context = x if context is None else context
        out, w = scaled_dot_attention(self.q(x), self.k(context), self.v(context), self.heads)
        return self.o(out), w
