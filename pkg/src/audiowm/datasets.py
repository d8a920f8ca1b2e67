"""Corpus builders shared by the training stages: spectrogram windows, latent pairs and policy demos."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autoencoder import Autoencoder, encode
from .frontend import (FrontendConfig, MelSpectrogram, NormalizationStats, PcmSignal, frame_geometry, normalize,
                       num_frames, spectrogram)
from .midi import PianoRoll
from .policy import DemoSet, PolicyConfig, build_observation, water_state_features
from .water import WaterEpisode, WaterSimConfig, water_episode_oracle


def episode_seed(seed: int, index: int) -> int:
    return seed * 100_003 + index


def water_corpus(sim: WaterSimConfig, n: int, seed: int) -> list[WaterEpisode]:
    if n < 1:
        raise ValueError("empty dataset request")
    return [water_episode_oracle(sim, episode_seed(seed, i)) for i in range(n)]


def episode_spectrograms(episodes, fe: FrontendConfig) -> list[MelSpectrogram]:
    return [spectrogram(ep.signal, fe) for ep in episodes]


def control_frame(step: int, sim: WaterSimConfig, fe: FrontendConfig) -> int:
    """Number of complete spectrogram frames once ``step`` control steps of audio exist."""
    win, hop, _ = frame_geometry(sim.sample_rate, fe.frame_len_s, fe.frame_shift_s)
    return num_frames(int(round(step * sim.control_dt * sim.sample_rate)), win, hop)


def tail_signal(samples: np.ndarray, sample_rate: int, n_frames: int, fe: FrontendConfig) -> PcmSignal:
    """Shortest suffix of ``samples`` that yields the last ``n_frames`` frames on the global frame grid."""
    win, hop, _ = frame_geometry(sample_rate, fe.frame_len_s, fe.frame_shift_s)
    total = num_frames(len(samples), win, hop)
    if total < n_frames:
        raise ValueError(f"audio buffer holds {total} frames, need {n_frames}")
    start = (total - n_frames) * hop
    return PcmSignal(samples[start:start + (n_frames - 1) * hop + win], sample_rate)


def encode_sequence(ae: Autoencoder, frames: np.ndarray) -> np.ndarray:
    """Encode a whole spectrogram (or roll) block by block; the tail remainder is dropped."""
    n = frames.shape[0] // ae.cfg.block
    return encode(ae, frames[:n * ae.cfg.block]).frames


def phase_sequences(ae: Autoencoder, frames: np.ndarray, n_phases: int) -> list[np.ndarray]:
    """Latent sequences of one spectrogram encoded from ``n_phases`` evenly spaced block offsets."""
    step = ae.cfg.block // n_phases if n_phases > 1 else ae.cfg.block
    return [encode_sequence(ae, frames[p * step:]) for p in range(max(n_phases, 1))]


def latent_pairs(sequences, n_context: int, n_future: int) -> tuple[np.ndarray, np.ndarray]:
    """All (context, future) latent windows at stride one latent frame."""
    ctx, fut = [], []
    for z in sequences:
        for o in range(0, len(z) - n_context - n_future + 1):
            ctx.append(z[o:o + n_context])
            fut.append(z[o + n_context:o + n_context + n_future])
    if not ctx:
        raise ValueError("no latent window pairs: sequences too short")
    return np.stack(ctx).astype(np.float32), np.stack(fut).astype(np.float32)


def chunk_labels(step: int, release_step: int, horizon: int) -> np.ndarray:
    """+1 while the button should stay down, -1 from the release step onwards."""
    return np.where(step + np.arange(horizon) < release_step, 1.0, -1.0).astype(np.float32).reshape(horizon, 1)


def policy_demos(episodes, norm_frames, sim: WaterSimConfig, fe: FrontendConfig, pcfg: PolicyConfig,
                 baseline_mode: bool = False) -> DemoSet:
    """One demo per control step between the press and the release, using ground-truth future audio."""
    obs, chunks = [], []
    for ep, frames in zip(episodes, norm_frames):
        for k in range(ep.press_step + 1, ep.release_step + 1):
            j = control_frame(k, sim, fe)
            if j < pcfg.current_frames or j + pcfg.predicted_frames > len(frames):
                continue
            state = water_state_features(True, (k - ep.press_step) * sim.control_dt)
            o = build_observation(frames[j - pcfg.current_frames:j], frames[j:j + pcfg.predicted_frames], state,
                                  baseline_mode, pcfg)
            obs.append(o.vector())
            chunks.append(chunk_labels(k, ep.release_step, pcfg.horizon))
    if not obs:
        raise ValueError("no demonstrations")
    return DemoSet(np.stack(obs), np.stack(chunks), {"baseline_mode": baseline_mode})


@dataclass
class MidFillContext:
    episode: int
    step: int
    fill: float
    frame: int


def mid_fill_contexts(episodes, sim: WaterSimConfig, fe: FrontendConfig, fill_range=(0.25, 0.55),
                      per_episode: int = 3, ctx_frames: int = 128) -> list[MidFillContext]:
    """Evenly spaced control steps whose fill level at the context end lies in ``fill_range``."""
    out = []
    for i, ep in enumerate(episodes):
        steps = [k for k in range(ep.press_step + 1, ep.release_step)
                 if fill_range[0] <= ep.states[k].fill_level <= fill_range[1]]
        if not steps:
            continue
        picks = np.linspace(0, len(steps) - 1, per_episode).round().astype(int)
        for p in sorted(set(picks.tolist())):
            k = steps[p]
            j = control_frame(k, sim, fe)
            if j >= ctx_frames:
                out.append(MidFillContext(i, k, float(ep.states[k].fill_level), j))
    return out


def normalized_frames(specs, stats: NormalizationStats) -> list[np.ndarray]:
    return [normalize(s, stats).frames for s in specs]


def roll_windows(rolls, ctx_steps: int, horizon: int, stride: int, pad_start: bool = True) -> np.ndarray:
    """(context + future) windows from piano rolls as float {0, 1} grids.

    With ``pad_start`` the context may reach back before the first step
    (silence), which is what the evaluation sees at the start of a song.
    """
    out = []
    for roll in rolls:
        grid = roll.grid if isinstance(roll, PianoRoll) else np.asarray(roll)
        g = grid.astype(np.float32)
        if pad_start:
            g = np.concatenate([np.zeros((ctx_steps, g.shape[1]), np.float32), g], axis=0)
        g = np.concatenate([g, np.zeros((horizon, g.shape[1]), np.float32)], axis=0)
        for o in range(0, len(g) - ctx_steps - horizon + 1, stride):
            out.append(g[o:o + ctx_steps + horizon])
    return np.stack(out)
