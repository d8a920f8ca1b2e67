"""Conditional flow matching over latent sequences.

The vector-field network sees ``n_context`` clean context tokens followed by
``n_future`` noisy tokens on a shared time axis.  Cross-frame information
moves only through self-attention; each frame's adaptive layer-norm
modulation is computed from the flow time, a context/observation summary and
the frame's own index.  Only the future rows are supervised and integrated.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .nn import linear, linear_params, sinusoidal
from .optim import LrSchedule, ParamStore, adamw_step, lr_at
from .rng import Rng
from .tensor import NonFiniteError, Tensor


@dataclass
class FlowNetConfig:
    d: int = 32
    n_context: int = 8
    n_future: int = 16
    extra_dim: int = 0  # width of an external condition vector (policy observations)
    hidden: int = 128
    heads: int = 4
    blocks: int = 2
    time_dim: int = 64
    mlp_ratio: int = 2

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ValueError("hidden must be divisible by heads")
        if self.n_future < 1:
            raise ValueError("n_future must be >= 1")

    @property
    def n_tokens(self) -> int:
        return self.n_context + self.n_future


@dataclass
class FmLossConfig:
    lambda_fm: float = 1.0
    lambda_v: float = 1.0
    context_dropout_p: float = 0.5

    def __post_init__(self):
        if self.lambda_fm < 0 or self.lambda_v < 0:
            raise ValueError("loss weights must be non-negative")
        if not 0.0 <= self.context_dropout_p <= 1.0:
            raise ValueError("context_dropout_p must lie in [0, 1]")


@dataclass
class SamplerConfig:
    n_steps: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")


@dataclass
class Condition:
    """Flow time plus either clean context latents or ``None`` for the null token."""

    t: float
    context: np.ndarray | None = None
    extra: np.ndarray | None = None


@dataclass
class VectorFieldNet:
    cfg: FlowNetConfig
    params: dict
    losses: list = field(default_factory=list)

    def field(self, context, x_future, t, keep=None, extra=None) -> np.ndarray:
        """Batched inference: predicted field on the future rows, shape (B, L, d)."""
        x_future = np.asarray(x_future, np.float32)
        b = x_future.shape[0]
        t = np.broadcast_to(np.asarray(t, np.float32), (b,))
        out = forward(self.params, self.cfg, context, keep, x_future, t, extra)
        return out.data[:, self.cfg.n_context:]


# --- path and losses ----------------------------------------------------------


def interpolant(x0, w, t):
    """Linear probability path (1 - t) * x0 + t * w."""
    x0, w = np.asarray(x0), np.asarray(w)
    if x0.shape != w.shape:
        raise ValueError(f"shape mismatch {x0.shape} vs {w.shape}")
    return (1.0 - t) * x0 + t * w


def target_field(x0, w):
    """Time derivative of the linear path; constant in t."""
    x0, w = np.asarray(x0), np.asarray(w)
    if x0.shape != w.shape:
        raise ValueError(f"shape mismatch {x0.shape} vs {w.shape}")
    return w - x0


def _future_rows(v_pred, n_future):
    v_pred = T.as_tensor(v_pred)
    n = v_pred.shape[-2]
    index = (Ellipsis, slice(n - n_future, n), slice(None))
    return T.take(v_pred, index)


def fm_loss(v_pred, u_target):
    """MSE between the last L rows of ``v_pred`` and ``u_target`` (L rows).

    Leading rows of ``v_pred`` (context tokens) are ignored.
    """
    u = T.as_tensor(u_target)
    v = _future_rows(v_pred, u.shape[-2])
    if v.shape != u.shape:
        raise ValueError(f"shape mismatch {v.shape} vs {u.shape}")
    return T.mean_square(T.sub(v, u))


def _time_diff(x):
    n = x.shape[-2]
    later = T.take(x, (Ellipsis, slice(1, n), slice(None)))
    earlier = T.take(x, (Ellipsis, slice(0, n - 1), slice(None)))
    return T.sub(later, earlier)


def velocity_loss(v_pred, u_target):
    """MSE between frame-to-frame differences of prediction and target (future rows)."""
    u = T.as_tensor(u_target)
    if u.shape[-2] < 2:
        raise ValueError("velocity loss needs at least 2 supervised frames")
    v = _future_rows(v_pred, u.shape[-2])
    return T.mean_square(T.sub(_time_diff(v), _time_diff(u)))


# --- network ----------------------------------------------------------------


def init_params(cfg: FlowNetConfig, rng: Rng) -> dict:
    h = cfg.hidden
    P = {}
    P.update(linear_params(rng, "in", cfg.d, h))
    P.update(linear_params(rng, "time.0", cfg.time_dim, h))
    P.update(linear_params(rng, "time.1", h, h))
    cond_in = cfg.n_context * cfg.d + cfg.extra_dim
    if cond_in:
        P.update(linear_params(rng, "cond", cond_in, h))
    if cfg.n_context:
        P["null_token"] = rng.normal((cfg.d,)).astype(np.float32)
    for i in range(cfg.blocks):
        p = f"block{i}"
        P.update(linear_params(rng, f"{p}.mod", h, 6 * h, std=0.0))
        P[f"{p}.frame_mod"] = np.zeros((cfg.n_tokens, 6 * h), np.float32)
        for name in ("q", "k", "v", "o"):
            P.update(linear_params(rng, f"{p}.{name}", h, h))
        P.update(linear_params(rng, f"{p}.mlp0", h, cfg.mlp_ratio * h))
        P.update(linear_params(rng, f"{p}.mlp1", cfg.mlp_ratio * h, h))
    P.update(linear_params(rng, "final.mod", h, 2 * h, std=0.0))
    P["final.frame_mod"] = np.zeros((cfg.n_tokens, 2 * h), np.float32)
    P.update(linear_params(rng, "out", h, cfg.d, std=0.02))
    return P


def _modulate(x, shift, scale):
    return T.add(T.mul(T.layer_norm(x), T.add(scale, 1.0)), shift)


def _chunks(x, n):
    width = x.shape[-1] // n
    return [T.take(x, (Ellipsis, slice(i * width, (i + 1) * width))) for i in range(n)]


def _attention(P, p, x, heads):
    b, n, h = x.shape
    hd = h // heads

    def split(t):
        return T.transpose(T.reshape(t, (b, n, heads, hd)), (0, 2, 1, 3))

    q = split(linear(P, f"{p}.q", x))
    k = T.transpose(T.reshape(linear(P, f"{p}.k", x), (b, n, heads, hd)), (0, 2, 3, 1))
    v = split(linear(P, f"{p}.v", x))
    att = T.softmax(T.scale(T.matmul(q, k), 1.0 / math.sqrt(hd)))
    y = T.reshape(T.transpose(T.matmul(att, v), (0, 2, 1, 3)), (b, n, h))
    return linear(P, f"{p}.o", y)


def time_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    return sinusoidal(np.asarray(t, np.float64) * 1000.0, dim)


def forward(P, cfg: FlowNetConfig, context, keep, x_future, t, extra=None):
    """Full-sequence field, shape (B, n_context + n_future, d).

    ``context`` is (B, n_context, d) or None; ``keep`` is a (B,) boolean mask,
    False rows use the learned null token instead of the context.
    """
    b = x_future.shape[0]
    h = cfg.hidden
    cond_parts = []
    if cfg.n_context:
        if context is None:
            keep = np.zeros(b, bool)
            context = np.zeros((b, cfg.n_context, cfg.d), np.float32)
        elif keep is None:
            keep = np.ones(b, bool)
        k = np.asarray(keep, np.float32).reshape(b, 1, 1)
        null = T.reshape(P["null_token"], (1, 1, cfg.d))
        ctx = T.add(Tensor(np.asarray(context, np.float32) * k), T.mul(null, Tensor(1.0 - k)))
        tokens = T.concat([ctx, Tensor(x_future)], axis=1)
        cond_parts.append(T.reshape(ctx, (b, cfg.n_context * cfg.d)))
    else:
        tokens = Tensor(x_future)
    if cfg.extra_dim:
        cond_parts.append(Tensor(np.asarray(extra, np.float32).reshape(b, cfg.extra_dim)))

    pos = sinusoidal(np.arange(cfg.n_tokens), h)
    x = T.add(linear(P, "in", tokens), pos)
    c = linear(P, "time.1", T.gelu(linear(P, "time.0", Tensor(time_embedding(t, cfg.time_dim)))))
    if cond_parts:
        cond_vec = cond_parts[0] if len(cond_parts) == 1 else T.concat(cond_parts, axis=1)
        c = T.add(c, linear(P, "cond", cond_vec))
    c = T.reshape(T.gelu(c), (b, 1, h))

    for i in range(cfg.blocks):
        p = f"block{i}"
        # per-frame modulation: shared (t, condition) term plus a learned per-frame offset
        shared = _chunks(linear(P, f"{p}.mod", c), 6)
        per_frame = _chunks(P[f"{p}.frame_mod"], 6)
        sh1, sc1, g1, sh2, sc2, g2 = (T.add(a, f) for a, f in zip(shared, per_frame))
        x = T.add(x, T.mul(g1, _attention(P, p, _modulate(x, sh1, sc1), cfg.heads)))
        m = _modulate(x, sh2, sc2)
        m = linear(P, f"{p}.mlp1", T.gelu(linear(P, f"{p}.mlp0", m)))
        x = T.add(x, T.mul(g2, m))
    sh, sc = (T.add(a, f) for a, f in zip(_chunks(linear(P, "final.mod", c), 2), _chunks(P["final.frame_mod"], 2)))
    return linear(P, "out", _modulate(x, sh, sc))


def init_net(cfg: FlowNetConfig, seed) -> VectorFieldNet:
    return VectorFieldNet(cfg, init_params(cfg, Rng((seed, "init") if isinstance(seed, int) else seed)))


def predict_field(net: VectorFieldNet, x_t_full: np.ndarray, cond: Condition) -> np.ndarray:
    """Field over all (n_context + n_future) rows for one sample.

    Context rows are read from ``x_t_full`` unless ``cond.context`` is None, in
    which case the null token replaces them.
    """
    cfg = net.cfg
    x_t_full = np.asarray(x_t_full, np.float32)
    if x_t_full.shape != (cfg.n_tokens, cfg.d):
        raise ValueError(f"expected ({cfg.n_tokens}, {cfg.d}), got {x_t_full.shape}")
    context = x_t_full[None, :cfg.n_context] if cfg.n_context else None
    keep = np.array([cond.context is not None])
    extra = None if cond.extra is None else np.asarray(cond.extra, np.float32)[None]
    out = forward(net.params, cfg, context, keep, x_t_full[None, cfg.n_context:],
                  np.array([cond.t], np.float32), extra)
    return out.data[0]


# --- training -----------------------------------------------------------------


def _loss_graph(P, cfg, loss_cfg, context, keep, x_t, t, u, extra):
    v = forward(P, cfg, context, keep, x_t, t, extra)
    total = T.scale(fm_loss(v, u), loss_cfg.lambda_fm)
    if loss_cfg.lambda_v > 0:
        total = T.add(total, T.scale(velocity_loss(v, u), loss_cfg.lambda_v))
    return total


def draw_training_sample(future: np.ndarray, rng: Rng, dropout_p: float):
    """Draw t ~ U[0,1], x0 ~ N(0, I) and the keep mask for a batch of future latents."""
    b = future.shape[0]
    t = rng.uniform(b).astype(np.float32)
    x0 = rng.normal(future.shape).astype(np.float32)
    keep = ~rng.bernoulli(dropout_p, b)
    x_t = interpolant(x0, future, t.reshape(b, 1, 1)).astype(np.float32)
    u = target_field(x0, future).astype(np.float32)
    return t, x0, keep, x_t, u


def training_step(net: VectorFieldNet, context, future, loss_cfg: FmLossConfig, rng: Rng, extra=None,
                  params=None):
    """Loss and gradients for one batch.  Returns (loss, grads, keep_mask)."""
    future = np.asarray(future, np.float32)
    if future.shape[0] == 0:
        raise ValueError("empty batch")
    p = loss_cfg.context_dropout_p if net.cfg.n_context else 0.0
    t, _, keep, x_t, u = draw_training_sample(future, rng, p)
    loss, grads = T.forward_backward(
        lambda P: _loss_graph(P, net.cfg, loss_cfg, context, keep, x_t, t, u, extra),
        net.params if params is None else params)
    if not np.isfinite(loss):
        raise NonFiniteError("flow-matching loss")
    return loss, grads, keep


def train_flow(net: VectorFieldNet, context, future, loss_cfg: FmLossConfig, schedule: LrSchedule, seed,
               batch_size: int = 32, weight_decay: float = 1e-6, extra=None, log_every: int = 50,
               log=None) -> VectorFieldNet:
    """Minibatch AdamW training on (context, future[, extra]) pairs; updates ``net`` in place."""
    future = np.asarray(future, np.float32)
    n = len(future)
    if n == 0:
        raise ValueError("no training pairs")
    rng = Rng((seed, "train") if isinstance(seed, int) else seed)
    store = ParamStore(net.params)
    order, cursor = rng.permutation(n), 0
    for step in range(schedule.total_steps):
        if n >= batch_size:
            if cursor + batch_size > n:
                order, cursor = rng.permutation(n), 0
            idx = order[cursor:cursor + batch_size]
            cursor += batch_size
        else:
            idx = rng.integers(n, batch_size)
        ctx = None if context is None else np.asarray(context, np.float32)[idx]
        ext = None if extra is None else np.asarray(extra, np.float32)[idx]
        loss, grads, _ = training_step(net, ctx, future[idx], loss_cfg, rng, extra=ext, params=store.params)
        adamw_step(store, grads, lr_at(schedule, step), weight_decay=weight_decay)
        if step % log_every == 0 or step == schedule.total_steps - 1:
            net.losses.append((step, loss))
            if log:
                log(step, loss)
    net.params = store.params
    return net


# --- sampling -----------------------------------------------------------------


def euler_integrate(field_fn, x0: np.ndarray, n_steps: int) -> np.ndarray:
    """Explicit Euler from t=0 to t=1, field evaluated at the left end of each step."""
    x = np.array(x0, dtype=np.float64 if x0.dtype == np.float64 else np.float32)
    dt = 1.0 / n_steps
    for k in range(n_steps):
        v = field_fn(x, k * dt)
        x = x + dt * v
        if not np.all(np.isfinite(x)):
            raise NonFiniteError(f"sampler state at step {k}")
    return x


def sample_batch(net, context, x0: np.ndarray, n_steps: int, extra=None) -> np.ndarray:
    """Integrate a batch of source draws x0 (B, L, d) into future latents."""
    keep = None if context is None else np.ones(len(x0), bool)
    return euler_integrate(lambda x, t: net.field(context, x, t, keep=keep, extra=extra), x0, n_steps)


def sample(net, w_prev, cfg: SamplerConfig, extra=None) -> np.ndarray:
    """Generate L x d future latents given L' x d context latents (or None)."""
    rng = Rng((cfg.seed, "sample"))
    x0 = rng.normal((1, net.cfg.n_future, net.cfg.d)).astype(np.float32)
    context = None if w_prev is None else np.asarray(w_prev, np.float32)[None]
    if extra is not None:
        extra = np.asarray(extra, np.float32).reshape(1, -1)
    return sample_batch(net, context, x0, cfg.n_steps, extra=extra)[0]


@dataclass
class Rollout:
    latents: np.ndarray
    decoded: np.ndarray | None
    window_seeds: list
    window_seconds: list = field(default_factory=list)


def rollout(net: VectorFieldNet, ae, seed_context: np.ndarray, n_windows: int, cfg: SamplerConfig) -> Rollout:
    """Autoregressive generation: each window conditions on the last L' latents so far."""
    if n_windows < 1:
        raise ValueError("n_windows must be >= 1")
    n_ctx = net.cfg.n_context
    history = np.asarray(seed_context, np.float32)
    generated, seeds, seconds = [], [], []
    for i in range(n_windows):
        t0 = time.perf_counter()
        window_seed = cfg.seed if i == 0 else (cfg.seed * 1_000_003 + i) % (2**63)
        seeds.append(window_seed)
        w_prev = history[-n_ctx:] if n_ctx else None
        future = sample(net, w_prev, SamplerConfig(cfg.n_steps, window_seed))
        generated.append(future)
        history = np.concatenate([history, future], axis=0)
        seconds.append(time.perf_counter() - t0)
    latents = np.concatenate(generated, axis=0)
    decoded = None
    if ae is not None:
        from .autoencoder import decode

        decoded = decode(ae, latents)
    return Rollout(latents, decoded, seeds, seconds)


def to_tensors(net: VectorFieldNet) -> dict:
    return dict(net.params)
