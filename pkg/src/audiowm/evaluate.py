"""Closed-loop evaluation for the water task and paired-arm F1 evaluation for the piano task."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .autoencoder import Autoencoder, decode, encode
from .datasets import episode_seed, tail_signal
from .flow import VectorFieldNet, sample_batch
from .frontend import FrontendConfig, NormalizationStats, normalize, spectrogram
from .midi import N_KEYS, PianoRoll
from .piano import play
from .policy import ChunkPolicy, act_batch, build_observation, f1_score, water_state_features
from .rng import Rng
from .water import HOLD, PRESS, RELEASE, WaterSimConfig, WaterSimState, episode_fill_rate, is_success, water_step

TONAL_THRESHOLD = 0.3


def tonal_frames(frames: np.ndarray, threshold: float = TONAL_THRESHOLD) -> np.ndarray:
    """Frames whose spectral peak stands clear of the median (a tone is sounding)."""
    return frames.max(axis=1) - np.median(frames, axis=1) > threshold


def dominant_bins(frames: np.ndarray) -> np.ndarray:
    return frames.argmax(axis=1)


def predicted_release_frame(frames: np.ndarray) -> int | None:
    """First frame after which the predicted window goes silent, or None if the tone persists."""
    tonal = tonal_frames(frames)
    if not tonal[0]:
        return None
    off = np.flatnonzero(~tonal)
    return int(off[0]) if off.size else None


@dataclass
class WaterModels:
    stats: NormalizationStats
    ae: Autoencoder | None
    wm: VectorFieldNet | None
    policy: ChunkPolicy


@dataclass
class WaterTrial:
    seed: int
    success: bool
    fill_level: float
    overflowed: bool
    press_step: int
    release_step: int | None
    fill_rate: float
    first_predicted_release_step: int | None = None
    plan_seconds: list = field(default_factory=list)
    predictions: list = field(default_factory=list)


def predict_future(models: WaterModels, current: np.ndarray, seed, n_steps: int) -> np.ndarray:
    ctx = encode(models.ae, current).frames[None]
    cfg = models.wm.cfg
    x0 = Rng(seed).normal((1, cfg.n_future, cfg.d)).astype(np.float32)
    return decode(models.ae, sample_batch(models.wm, ctx, x0, n_steps)[0])


def run_water_trial(models: WaterModels, sim: WaterSimConfig, fe: FrontendConfig, trial_seed: int,
                    n_steps: int = 10, keep_predictions: bool = False, max_pressed_s: float = 10.0) -> WaterTrial:
    """Scripted idle and press, then the policy holds or releases, re-planning every few steps."""
    pcfg = models.policy.cfg
    rng = Rng((trial_seed, "water-episode"))
    audio_rng = Rng((trial_seed, "water-audio"))
    dt = sim.control_dt
    rate = episode_fill_rate(sim, rng)
    pre_steps = int(round(rng.uniform(low=sim.pre_roll_s[0], high=sim.pre_roll_s[1]) / dt))
    state = WaterSimState(fill_rate=rate)
    chunks = []

    def step(action):
        nonlocal state
        state, audio = water_step(state, action, dt, sim, audio_rng)
        chunks.append(audio.samples)

    for _ in range(pre_steps):
        step(HOLD)
    step(PRESS)
    press_step, k = pre_steps, pre_steps + 1
    trial = WaterTrial(trial_seed, False, 0.0, False, press_step, None, rate)
    use_wm = models.wm is not None and not models.policy.baseline_mode
    plan = 0
    while state.pressed and not state.overflowed and (k - press_step) * dt < max_pressed_s:
        t0 = time.perf_counter()
        samples = np.concatenate(chunks)
        tail = tail_signal(samples, sim.sample_rate, pcfg.current_frames, fe)
        current = normalize(spectrogram(tail, fe), models.stats).frames
        predicted = None
        if use_wm:
            predicted = predict_future(models, current, (trial_seed, "wm", plan), n_steps)
            if keep_predictions:
                trial.predictions.append((k, predicted))
            stop = predicted_release_frame(predicted)
            if stop is not None and trial.first_predicted_release_step is None:
                trial.first_predicted_release_step = k + int(round(stop * fe.frame_shift_s / dt))
        obs = build_observation(current, predicted, water_state_features(True, (k - press_step) * dt),
                                models.policy.baseline_mode, pcfg)
        x0 = Rng((trial_seed, "policy", plan)).normal((1, pcfg.horizon, pcfg.action_dim)).astype(np.float32)
        chunk = act_batch(models.policy, obs.vector()[None], x0, n_steps)[0]
        trial.plan_seconds.append(time.perf_counter() - t0)
        plan += 1
        for a in chunk[:pcfg.replan_every, 0]:
            if a > 0:
                step(HOLD)
            else:
                step(RELEASE)
                trial.release_step = k
            k += 1
            if not state.pressed or state.overflowed:
                break
    trial.success = is_success(state, sim)
    trial.fill_level = float(state.fill_level)
    trial.overflowed = bool(state.overflowed)
    return trial


def water_evaluate(models: WaterModels, sim: WaterSimConfig, fe: FrontendConfig, n_trials: int = 30,
                   seed: int = 1000, n_steps: int = 10, keep_predictions: bool = False) -> list[WaterTrial]:
    if models.policy is None:
        raise ValueError("missing policy checkpoint")
    if models.wm is not None and models.ae is None:
        raise ValueError("world model given without its autoencoder")
    return [run_water_trial(models, sim, fe, episode_seed(seed, i), n_steps, keep_predictions)
            for i in range(n_trials)]


def pitch_trend(frames: np.ndarray, min_tonal: int = 8) -> float:
    """Spearman correlation of the dominant mel bin with time over tonal frames (nan if too few)."""
    from scipy.stats import spearmanr

    tonal = tonal_frames(frames)
    if tonal.sum() < min_tonal:
        return float("nan")
    bins = dominant_bins(frames)[tonal]
    if np.all(bins == bins[0]):
        return 0.0
    return float(spearmanr(np.flatnonzero(tonal), bins)[0])


# --- piano ------------------------------------------------------------------------


@dataclass
class RollModels:
    ae: Autoencoder
    wm: VectorFieldNet
    threshold: float = 0.5


def generated_lookahead(models: RollModels, roll: PianoRoll, seed, n_steps: int = 10) -> np.ndarray:
    """Predicted future rows for every block start of ``roll``.

    Returns (n_blocks, window, 88): block b holds the model's continuation of
    the true (zero-padded) past ending at step b * block.
    """
    block = models.ae.cfg.block
    n_ctx = models.wm.cfg.n_context * block
    horizon = models.wm.cfg.n_future * block
    g = np.concatenate([np.zeros((n_ctx, N_KEYS), np.float32), roll.grid.astype(np.float32)])
    starts = list(range(0, roll.n_steps, block))
    ctx = np.stack([encode(models.ae, g[s:s + n_ctx]).frames for s in starts])
    cfg = models.wm.cfg
    x0 = Rng(seed).normal((len(starts), cfg.n_future, cfg.d)).astype(np.float32)
    out = decode(models.ae, sample_batch(models.wm, ctx, x0, n_steps))
    return (out > models.threshold).astype(np.uint8).reshape(len(starts), horizon, N_KEYS)


def goal_rows_fn(roll: PianoRoll, horizon: int, generated: np.ndarray | None = None, block: int = 8):
    """Goal stack at step t: the true current row followed by H-1 predicted (or true) rows."""
    grid = roll.grid

    def rows(t):
        out = np.zeros((horizon, N_KEYS), np.uint8)
        out[0] = grid[t]
        if horizon > 1:
            if generated is None:
                nxt = grid[t + 1:t + horizon]
                out[1:1 + len(nxt)] = nxt
            else:
                b, off = divmod(t, block)
                nxt = generated[b][off + 1:off + horizon]
                out[1:1 + len(nxt)] = nxt
        return out

    return rows


@dataclass
class PianoResult:
    seed: int
    song: str
    horizon: int
    f1: float
    source: str


def start_position(roll: PianoRoll, seed: int, jitter: float = 6.0) -> float:
    keys = np.flatnonzero(roll.grid.max(axis=0))
    first = np.flatnonzero(roll.grid[np.argmax(roll.grid.any(axis=1))])
    centre = float(first.mean()) if first.size else (float(keys.mean()) if keys.size else 43.5)
    return float(np.clip(centre + Rng((seed, "hand")).uniform(low=-jitter, high=jitter), 0, N_KEYS - 1))


def piano_evaluate(songs: dict, models: RollModels | None, seeds, horizons=(1, 16), max_speed: float = 3.0,
                   reach: float = 12, n_steps: int = 10) -> list[PianoResult]:
    """Paired arms: every (seed, song) is played once per horizon from the same start position.

    With ``models`` the lookahead rows come from the roll world model;
    without, they are the true future (oracle lookahead).
    """
    results = []
    for seed in seeds:
        for name, roll in songs.items():
            start = start_position(roll, seed)
            generated = None
            if models is not None and max(horizons) > 1:
                generated = generated_lookahead(models, roll, (seed, name, "lookahead"), n_steps)
            for h in horizons:
                block = models.ae.cfg.block if models is not None else 8
                fn = goal_rows_fn(roll, h, generated, block)
                env = play(roll, fn, max_speed, reach, start)
                f1 = f1_score(env.executed_roll(roll.step_s), roll)
                results.append(PianoResult(seed, name, h, f1, "generated" if generated is not None else "oracle"))
    return results
