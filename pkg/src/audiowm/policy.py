"""Policies: a flow-matching action-chunk policy (water task) and the piano lookahead controller."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .flow import FlowNetConfig, FmLossConfig, SamplerConfig, VectorFieldNet, init_net, sample, train_flow
from .midi import N_KEYS, GoalStack, PianoRoll
from .optim import LrSchedule

REACH = 12


@dataclass
class PolicyConfig:
    horizon: int = 16
    action_dim: int = 1
    action_bound: float = 1.0
    replan_every: int = 8
    tile_frames: int = 8
    tile_mels: int = 16
    current_frames: int = 128
    predicted_frames: int = 256
    n_mels: int = 128
    state_dim: int = 2
    hidden: int = 128
    heads: int = 4
    blocks: int = 2

    def __post_init__(self):
        if self.current_frames % self.tile_frames or self.predicted_frames % self.tile_frames:
            raise ValueError("window lengths must be multiples of tile_frames")
        if self.n_mels % self.tile_mels:
            raise ValueError("n_mels must be a multiple of tile_mels")
        if not 1 <= self.replan_every <= self.horizon:
            raise ValueError("replan_every must lie in [1, horizon]")

    @property
    def current_width(self) -> int:
        return (self.current_frames // self.tile_frames) * (self.n_mels // self.tile_mels)

    @property
    def predicted_width(self) -> int:
        return (self.predicted_frames // self.tile_frames) * (self.n_mels // self.tile_mels)

    @property
    def obs_width(self) -> int:
        return self.current_width + self.predicted_width + self.state_dim


@dataclass
class ObservationFeature:
    current_audio: np.ndarray
    predicted_audio: np.ndarray
    state_features: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate([self.current_audio, self.predicted_audio, self.state_features]).astype(np.float32)


@dataclass
class ActionChunk:
    actions: np.ndarray  # (horizon, A)


def pool_tiles(window: np.ndarray, tile_frames: int, tile_mels: int) -> np.ndarray:
    t, m = window.shape
    return window.reshape(t // tile_frames, tile_frames, m // tile_mels, tile_mels).mean(axis=(1, 3)).ravel()


def water_state_features(pressed: bool, time_since_press_s: float) -> np.ndarray:
    return np.array([1.0 if pressed else -1.0, time_since_press_s / 5.0], np.float32)


def build_observation(current_window, predicted_window, sim_state, baseline_mode: bool,
                      cfg: PolicyConfig = PolicyConfig()) -> ObservationFeature:
    """Mean-pool both windows over a fixed tile grid and append the state features."""
    current = np.asarray(current_window, np.float32)
    if current.shape != (cfg.current_frames, cfg.n_mels):
        raise ValueError(f"current window shape {current.shape} != {(cfg.current_frames, cfg.n_mels)}")
    if baseline_mode or predicted_window is None:
        predicted = np.zeros(cfg.predicted_width, np.float32)
    else:
        pw = np.asarray(predicted_window, np.float32)
        if pw.shape != (cfg.predicted_frames, cfg.n_mels):
            raise ValueError(f"predicted window shape {pw.shape} != {(cfg.predicted_frames, cfg.n_mels)}")
        predicted = pool_tiles(pw, cfg.tile_frames, cfg.tile_mels).astype(np.float32)
    state = np.asarray(sim_state, np.float32).ravel()
    if state.shape != (cfg.state_dim,):
        raise ValueError(f"state features must have width {cfg.state_dim}")
    obs = ObservationFeature(pool_tiles(current, cfg.tile_frames, cfg.tile_mels).astype(np.float32), predicted, state)
    if not np.all(np.isfinite(obs.vector())):
        raise ValueError("non-finite observation")
    return obs


# --- demonstrations -----------------------------------------------------------


@dataclass
class DemoSet:
    observations: np.ndarray  # (N, W)
    chunks: np.ndarray  # (N, horizon, A)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.observations)


def dump_demos(demos: DemoSet) -> tuple[bytes, str]:
    """Binary records (observation then chunk, f32 LE) and the JSON sidecar describing widths."""
    n, w = demos.observations.shape
    _, h, a = demos.chunks.shape
    rec = np.concatenate([demos.observations.astype("<f4"), demos.chunks.reshape(n, h * a).astype("<f4")], axis=1)
    sidecar = json.dumps({"n": n, "obs_width": w, "horizon": h, "action_dim": a, **demos.meta}, sort_keys=True)
    return struct.pack("<I", n) + rec.tobytes(), sidecar


def load_demos(data: bytes, sidecar: str) -> DemoSet:
    meta = json.loads(sidecar)
    (n,) = struct.unpack_from("<I", data, 0)
    w, h, a = meta["obs_width"], meta["horizon"], meta["action_dim"]
    if n != meta["n"] or len(data) != 4 + n * (w + h * a) * 4:
        raise ValueError("demo file does not match its sidecar")
    rec = np.frombuffer(data, "<f4", offset=4).reshape(n, w + h * a)
    extra = {k: v for k, v in meta.items() if k not in ("n", "obs_width", "horizon", "action_dim")}
    return DemoSet(rec[:, :w].astype(np.float32), rec[:, w:].reshape(n, h, a).astype(np.float32), extra)


# --- chunk policy ---------------------------------------------------------------


@dataclass
class ChunkPolicy:
    net: VectorFieldNet
    cfg: PolicyConfig
    baseline_mode: bool = False

    def metadata(self) -> dict:
        return {"kind": "chunk-policy", "policy": asdict(self.cfg), "baseline_mode": self.baseline_mode}


def policy_net_config(cfg: PolicyConfig) -> FlowNetConfig:
    return FlowNetConfig(d=cfg.action_dim, n_context=0, n_future=cfg.horizon, extra_dim=cfg.obs_width,
                         hidden=cfg.hidden, heads=cfg.heads, blocks=cfg.blocks)


def _masked(obs: np.ndarray, cfg: PolicyConfig, baseline_mode: bool) -> np.ndarray:
    obs = np.array(obs, np.float32)
    if baseline_mode:
        obs[..., cfg.current_width:cfg.current_width + cfg.predicted_width] = 0.0
    return obs


def train_chunk_policy(demos: DemoSet, cfg: PolicyConfig, schedule: LrSchedule, seed: int,
                       baseline_mode: bool = False, batch_size: int = 32, log=None) -> ChunkPolicy:
    """Flow matching over 16 x A action chunks conditioned on the observation (no velocity term)."""
    if len(demos) == 0:
        raise ValueError("no demonstrations")
    if demos.observations.shape[1] != cfg.obs_width:
        raise ValueError(f"demo observation width {demos.observations.shape[1]} != {cfg.obs_width}")
    net = init_net(policy_net_config(cfg), (seed, "policy-init"))
    obs = _masked(demos.observations, cfg, baseline_mode)
    train_flow(net, None, demos.chunks, FmLossConfig(1.0, 0.0, 0.0), schedule, (seed, "policy-train"),
               batch_size=batch_size, extra=obs, log=log)
    return ChunkPolicy(net, cfg, baseline_mode)


def act(policy: ChunkPolicy, obs, sampler: SamplerConfig = SamplerConfig()) -> ActionChunk:
    vec = obs.vector() if isinstance(obs, ObservationFeature) else np.asarray(obs, np.float32)
    if vec.shape != (policy.cfg.obs_width,):
        raise ValueError(f"observation width {vec.shape} does not match checkpoint ({policy.cfg.obs_width},)")
    vec = _masked(vec, policy.cfg, policy.baseline_mode)
    chunk = sample(policy.net, None, sampler, extra=vec)
    b = policy.cfg.action_bound
    return ActionChunk(np.clip(chunk, -b, b).astype(np.float32))


def act_batch(policy: ChunkPolicy, obs: np.ndarray, x0: np.ndarray, n_steps: int) -> np.ndarray:
    """Batched variant for evaluation: ``x0`` supplies the per-row source draws."""
    from .flow import sample_batch

    vec = _masked(obs, policy.cfg, policy.baseline_mode)
    b = policy.cfg.action_bound
    return np.clip(sample_batch(policy.net, None, x0, n_steps, extra=vec), -b, b)


def policy_from_tensors(tensors: dict, meta: dict) -> ChunkPolicy:
    if meta.get("kind") != "chunk-policy":
        raise ValueError("checkpoint is not a chunk policy")
    cfg = PolicyConfig(**meta["policy"])
    return ChunkPolicy(VectorFieldNet(policy_net_config(cfg), dict(tensors)), cfg, bool(meta["baseline_mode"]))


# --- piano ------------------------------------------------------------------------


@dataclass
class KeyCommand:
    target_position: float
    press_mask: np.ndarray


def _keys(row) -> np.ndarray:
    return np.flatnonzero(np.asarray(row) > 0)


def move_toward(position: float, target: float, max_step: float) -> float:
    delta = target - position
    if abs(delta) <= max_step:
        return float(target)
    return float(position + np.sign(delta) * max_step)


def piano_controller(goals, hand_position: float, max_speed: float, reach: float = REACH) -> KeyCommand:
    """Receding-horizon key targeting.

    Row 0 of ``goals`` is the current goal.  The hand heads for the centroid
    of the earliest later row that asks for something new, but never so far
    that a key of the current row drops out of reach.  With a single row the
    rule is purely reactive.
    """
    rows = goals.rows if isinstance(goals, GoalStack) else np.asarray(goals)
    if rows.ndim != 2 or rows.shape[0] < 1:
        raise ValueError("goal stack needs at least one row")
    current = _keys(rows[0])
    upcoming = None
    for row in rows[1:]:
        keys = _keys(row)
        if keys.size and not np.array_equal(keys, current):
            upcoming = keys
            break
    if current.size:
        lo, hi = current.max() - reach, current.min() + reach
        desired = current.mean() if upcoming is None else upcoming.mean()
        target = float(np.clip(desired, lo, hi)) if lo <= hi else float(current.mean())
    elif upcoming is not None:
        target = float(upcoming.mean())
    else:
        target = float(hand_position)
    new_position = move_toward(hand_position, target, max_speed)
    mask = np.zeros(N_KEYS, bool)
    if current.size:
        mask[current[np.abs(current - new_position) <= reach]] = True
    return KeyCommand(target, mask)


def f1_score(executed, reference) -> float:
    a = np.asarray(executed.grid if isinstance(executed, PianoRoll) else executed) > 0
    b = np.asarray(reference.grid if isinstance(reference, PianoRoll) else reference) > 0
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if not a.any() and not b.any():
        return 1.0
    if not a.any() or not b.any():
        return 0.0
    tp = int(np.sum(a & b))
    if tp == 0:
        return 0.0
    precision = tp / int(a.sum())
    recall = tp / int(b.sum())
    return 2 * precision * recall / (precision + recall)
