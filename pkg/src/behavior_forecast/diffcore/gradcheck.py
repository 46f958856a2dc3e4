"""Central-difference verification of reverse-mode gradients."""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor


def grad_check(computation: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-4,
               max_coords: Optional[int] = None, seed: int = 0, floor: float = 1e-7) -> float:
    """Max relative error between backprop and central differences.

    ``computation`` must rebuild a scalar from ``inputs`` on every call.  The
    relative error per coordinate is ``|a - n| / max(|a|, |n|, floor)``.  With
    ``max_coords`` only a seeded random subset of each input is probed.
    """
    for t in inputs:
        t.grad = None
    out = computation()
    if out.data.size != 1:
        raise ValueError("grad_check needs a scalar-valued computation")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = rng.choice(flat.size, size=max_coords, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = computation().item()
            flat[i] = orig - eps
            fm = computation().item()
            flat[i] = orig
            num = (fp - fm) / (2 * eps)
            an = a.reshape(-1)[i]
            err = abs(an - num) / max(abs(an), abs(num), floor)
            worst = max(worst, err)
    for t in inputs:
        t.grad = None
    return worst
