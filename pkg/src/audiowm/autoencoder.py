"""Block-local autoencoder: each run of ``block`` frames maps to one latent frame.

Stand-in for a pretrained audio/music autoencoder.  Locality is structural:
the encoder and decoder act on one block at a time, so latent frame k only
sees input rows [k*block, (k+1)*block) and only writes those rows back.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .nn import linear_params, mlp
from .optim import LrSchedule, ParamStore, adamw_step, lr_at
from .rng import Rng
from .tensor import NonFiniteError, Tensor


@dataclass
class AutoencoderConfig:
    block: int = 16
    d: int = 32
    hidden: tuple[int, ...] = (256,)
    n_features: int = 128
    domain: str = "spectrogram"  # or "piano-roll"
    # loss weight of active cells relative to silent ones; rolls are ~99% silent
    positive_weight: float = 1.0

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        if self.domain not in ("spectrogram", "piano-roll"):
            raise ValueError(f"unknown autoencoder domain '{self.domain}'")
        if self.d < 1 or self.block < 1:
            raise ValueError("block and d must be >= 1")
        if self.positive_weight <= 0:
            raise ValueError("positive_weight must be positive")


@dataclass
class LatentSequence:
    frames: np.ndarray

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def d(self) -> int:
        return self.frames.shape[1]


@dataclass
class Autoencoder:
    cfg: AutoencoderConfig
    params: dict
    # latent standardization, fixed after training
    latent_mean: np.ndarray = None
    latent_std: np.ndarray = None
    losses: list = field(default_factory=list)

    def __post_init__(self):
        if self.latent_mean is None:
            self.latent_mean = np.zeros(self.cfg.d, np.float32)
        if self.latent_std is None:
            self.latent_std = np.ones(self.cfg.d, np.float32)

    @property
    def widths(self) -> list[int]:
        return [self.cfg.block * self.cfg.n_features, *self.cfg.hidden, self.cfg.d]


def init_autoencoder(cfg: AutoencoderConfig, rng: Rng) -> Autoencoder:
    widths = [cfg.block * cfg.n_features, *cfg.hidden, cfg.d]
    params = {}
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        params.update(linear_params(rng, f"enc.{i}", a, b))
    rev = widths[::-1]
    for i, (a, b) in enumerate(zip(rev[:-1], rev[1:])):
        params.update(linear_params(rng, f"dec.{i}", a, b))
    return Autoencoder(cfg, params)


def _blocks(window: np.ndarray, block: int) -> np.ndarray:
    t, m = window.shape[-2:]
    if t % block:
        raise ValueError(f"window length {t} is not divisible by block {block}")
    return window.reshape(*window.shape[:-2], t // block, block * m)


def _encode_graph(P, ae: Autoencoder, blocks):
    return mlp(P, "enc", blocks, len(ae.cfg.hidden) + 1)


def _decode_graph(P, ae: Autoencoder, latents):
    head = T.tanh if ae.cfg.domain == "spectrogram" else T.sigmoid
    return mlp(P, "dec", latents, len(ae.cfg.hidden) + 1, out_act=head)


def encode_raw(ae: Autoencoder, window: np.ndarray) -> np.ndarray:
    z = _encode_graph(ae.params, ae, Tensor(_blocks(np.asarray(window, np.float32), ae.cfg.block)))
    return z.data


def encode(ae: Autoencoder, window: np.ndarray) -> LatentSequence:
    """T x M grid (or batch thereof) -> standardized latents, L = T / block frames."""
    z = encode_raw(ae, window)
    return LatentSequence(((z - ae.latent_mean) / ae.latent_std).astype(np.float32))


def decode(ae: Autoencoder, latents) -> np.ndarray:
    """Latents (L x d, or batch) -> (L*block) x M grid clamped to [-1, 1]."""
    z = latents.frames if isinstance(latents, LatentSequence) else np.asarray(latents, np.float32)
    raw = z * ae.latent_std + ae.latent_mean
    out = _decode_graph(ae.params, ae, Tensor(raw)).data
    *lead, n, _ = out.shape
    grid = out.reshape(*lead, n * ae.cfg.block, ae.cfg.n_features)
    return np.clip(grid, -1.0, 1.0)


def reconstruction_loss(P, ae: Autoencoder, blocks):
    recon = _decode_graph(P, ae, _encode_graph(P, ae, Tensor(blocks)))
    diff = T.sub(recon, blocks)
    if ae.cfg.positive_weight == 1.0:
        return T.mean_square(diff)
    # weighted MSE: sqrt(w) scaling keeps it a plain mean of squares
    w = np.where(np.asarray(blocks) > 0.5, np.sqrt(ae.cfg.positive_weight), 1.0).astype(np.float32)
    return T.mean_square(T.mul(diff, Tensor(w)))


def train_autoencoder(corpus: np.ndarray, cfg: AutoencoderConfig, schedule: LrSchedule, seed: int,
                      batch_size: int = 32, weight_decay: float = 1e-6, log_every: int = 50,
                      log=None) -> Autoencoder:
    """Minimize mean-squared reconstruction error over all blocks of ``corpus``.

    ``corpus`` is an (N, T, M) stack of equal-shaped windows; any T divisible
    by ``cfg.block`` works since blocks are modeled independently.
    """
    corpus = np.asarray(corpus, dtype=np.float32)
    if corpus.ndim != 3 or len(corpus) == 0:
        raise ValueError("corpus must be a non-empty (N, T, M) stack")
    blocks = _blocks(corpus, cfg.block).reshape(-1, cfg.block * corpus.shape[2])
    rng = Rng((seed, 1))
    ae = init_autoencoder(cfg, Rng((seed, 0)))
    store = ParamStore(ae.params)
    order = rng.permutation(len(blocks))
    cursor = 0
    for step in range(schedule.total_steps):
        if cursor + batch_size > len(order):
            order, cursor = rng.permutation(len(blocks)), 0
        idx = order[cursor:cursor + batch_size]
        cursor += batch_size
        loss, grads = T.forward_backward(lambda P, b: reconstruction_loss(P, ae, b), store.params, blocks[idx])
        if not np.isfinite(loss):
            raise NonFiniteError(f"autoencoder loss at step {step}")
        adamw_step(store, grads, lr_at(schedule, step), weight_decay=weight_decay)
        if step % log_every == 0 or step == schedule.total_steps - 1:
            ae.losses.append((step, loss))
            if log:
                log(step, loss)
    fit_latent_stats(ae, blocks)
    return ae


def fit_latent_stats(ae: Autoencoder, blocks: np.ndarray) -> None:
    z = _encode_graph(ae.params, ae, Tensor(blocks)).data
    ae.latent_mean = z.mean(axis=0).astype(np.float32)
    ae.latent_std = np.maximum(z.std(axis=0), 1e-6).astype(np.float32)


def to_tensors(ae: Autoencoder) -> dict[str, np.ndarray]:
    out = dict(ae.params)
    out["latent.mean"] = ae.latent_mean
    out["latent.std"] = ae.latent_std
    return out


def from_tensors(tensors: dict, cfg: AutoencoderConfig) -> Autoencoder:
    params = {k: v for k, v in tensors.items() if k.startswith(("enc.", "dec."))}
    return Autoencoder(cfg, params, tensors["latent.mean"], tensors["latent.std"])
