"""AdamW and the warmup + cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class LrSchedule:
    base_lr: float = 1.5e-4
    warmup_steps: int = 500
    total_steps: int = 3000

    def __post_init__(self):
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ValueError(f"need 0 <= warmup_steps < total_steps, got {self.warmup_steps}, {self.total_steps}")


def lr_at(schedule: LrSchedule, step: int) -> float:
    """Linear ramp from 0 over the warmup, then half-cosine decay to 0 at total_steps."""
    if step < schedule.warmup_steps:
        return schedule.base_lr * step / schedule.warmup_steps
    progress = (step - schedule.warmup_steps) / (schedule.total_steps - schedule.warmup_steps)
    progress = min(max(progress, 0.0), 1.0)
    return schedule.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class ParamStore:
    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        for k, p in self.params.items():
            self.m.setdefault(k, np.zeros_like(p))
            self.v.setdefault(k, np.zeros_like(p))

    def tensors(self) -> dict[str, np.ndarray]:
        """Flat name -> array map for checkpointing, moments included."""
        out = dict(self.params)
        out.update({f"adam.m/{k}": a for k, a in self.m.items()})
        out.update({f"adam.v/{k}": a for k, a in self.v.items()})
        return out

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray], step: int = 0) -> "ParamStore":
        params = {k: a for k, a in tensors.items() if not k.startswith("adam.")}
        m = {k[len("adam.m/"):]: a for k, a in tensors.items() if k.startswith("adam.m/")}
        v = {k[len("adam.v/"):]: a for k, a in tensors.items() if k.startswith("adam.v/")}
        return cls(params, m, v, step)


def adamw_step(store: ParamStore, grads: dict[str, np.ndarray], lr: float, beta1: float = 0.9,
               beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 1e-6) -> ParamStore:
    """One AdamW update in place (decoupled weight decay, bias-corrected moments)."""
    missing = set(store.params) - set(grads)
    if missing:
        raise KeyError(f"missing gradients for {sorted(missing)}")
    t = store.step + 1
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in store.params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter '{name}' {p.shape}")
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * weight_decay * p
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    store.step = t
    return store
