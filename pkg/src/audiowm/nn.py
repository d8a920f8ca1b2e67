"""Parameter initializers and functional layers over param dicts."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .rng import Rng


def linear_params(rng: Rng, prefix: str, n_in: int, n_out: int, std: float | None = None) -> dict:
    std = 1.0 / math.sqrt(n_in) if std is None else std
    return {
        f"{prefix}.w": (rng.normal((n_in, n_out)) * std).astype(np.float32),
        f"{prefix}.b": np.zeros(n_out, dtype=np.float32),
    }


def linear(P, prefix: str, x):
    return T.add(T.matmul(x, P[f"{prefix}.w"]), P[f"{prefix}.b"])


def mlp(P, prefix: str, x, n_layers: int, out_act=None):
    """Stack of linear layers with GELU between them."""
    for i in range(n_layers):
        x = linear(P, f"{prefix}.{i}", x)
        if i < n_layers - 1:
            x = T.gelu(x)
    if out_act is not None:
        x = out_act(x)
    return x


def sinusoidal(positions: np.ndarray, dim: int, max_period: float = 10_000.0) -> np.ndarray:
    """Standard sin/cos features, shape positions.shape + (dim,)."""
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    args = np.asarray(positions, dtype=np.float64)[..., None] * freqs
    return np.concatenate([np.sin(args), np.cos(args)], axis=-1).astype(np.float32)


def count_params(params: dict) -> int:
    return int(sum(p.size for p in params.values()))
