"""AMSGrad (Adam with a running maximum of the second moment) with coupled L2 weight decay."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import Parameter


@dataclass
class ParameterStore:
    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    v_max: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        for k, p in self.params.items():
            self.m.setdefault(k, np.zeros_like(p))
            self.v.setdefault(k, np.zeros_like(p))
            self.v_max.setdefault(k, np.zeros_like(p))


def amsgrad_step(store: ParameterStore, grads: Mapping[str, np.ndarray], lr: float = 1e-4,
                 weight_decay: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8) -> ParameterStore:
    """Update ``store.params`` in place and return the store.

    g <- g + wd * theta;  m, v exponential moments;  v_max = max(v_max, v);
    theta <- theta - lr * (m / (1 - b1^t)) / (sqrt(v_max / (1 - b2^t)) + eps)
    """
    if set(grads) != set(store.params):
        missing = set(store.params) ^ set(grads)
        raise KeyError(f"gradients do not match parameters: {sorted(missing)}")
    store.step += 1
    t = store.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for k, p in store.params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"{k}: gradient shape {g.shape} != parameter shape {p.shape}")
        if weight_decay:
            g = g + weight_decay * p
        m = store.m[k]
        v = store.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        np.maximum(store.v_max[k], v, out=store.v_max[k])
        denom = np.sqrt(store.v_max[k] / bc2) + eps
        p -= lr * (m / bc1) / denom
    return store


class AMSGrad:
    """Optimizer bound to a model's parameter tensors."""

    def __init__(self, params: Mapping[str, Parameter], lr: float = 1e-4, weight_decay: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.tensors = dict(params)
        self.store = ParameterStore({k: t.data for k, t in self.tensors.items()})
        self.hyper = dict(lr=lr, weight_decay=weight_decay, beta1=beta1, beta2=beta2, eps=eps)

    def step(self) -> None:
        grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in self.tensors.items()}
        amsgrad_step(self.store, grads, **self.hyper)

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None
