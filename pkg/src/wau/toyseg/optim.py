"""Adam with bias correction and a warmup-then-cosine learning-rate law."""
from __future__ import annotations

import math

import numpy as np

from ..tensor import ContractError, Tensor


def lr_at(step: int, total_steps: int, warmup_steps: int, lr_init: float) -> float:
    """Learning rate at a 0-based step index.

    Linear ramp 0 -> lr_init over warmup_steps, then cosine decay to exactly
    0 at total_steps. lr_at(warmup_steps) == lr_init and lr_at(total_steps)
    == 0 hold exactly.
    """
    if total_steps < 1:
        raise ContractError(f"total_steps must be >= 1, got {total_steps}")
    if not 0 <= warmup_steps < total_steps:
        raise ContractError(
            f"warmup_steps must lie in [0, total_steps), got {warmup_steps}")
    if not 0 <= step <= total_steps:
        raise ContractError(f"step {step} outside [0, {total_steps}]")
    if step < warmup_steps:
        return lr_init * step / warmup_steps
    span = total_steps - warmup_steps
    return lr_init * 0.5 * (1.0 + math.cos(math.pi * (step - warmup_steps) / span))


class Adam:
    """Standard Adam (bias-corrected first/second moments).

    Parameters update in registration order with numpy elementwise ops, so
    steps are bitwise reproducible. Parameters whose gradient is unset are
    skipped without advancing their moments.
    """

    def __init__(self, params: list[tuple[str, Tensor]], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if not params:
            raise ContractError("Adam needs at least one parameter")
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(t.data) for name, t in self.params}
        self.v = {name: np.zeros_like(t.data) for name, t in self.params}

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            mhat = m / bc1
            vhat = v / bc2
            p.data -= (lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)
