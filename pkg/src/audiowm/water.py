"""Synthetic water-filling task: a button-driven tone whose pitch rises with fill level."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .frontend import PcmSignal
from .rng import Rng

PRESS, RELEASE, HOLD = "press", "release", "hold"


@dataclass
class WaterSimConfig:
    fill_rate: float = 0.25
    f_empty: float = 300.0
    f_full: float = 1200.0
    click_ms: float = 5.0
    noise_rms: float = 0.01
    success_band: tuple[float, float] = (0.85, 0.98)
    # fill level at which the scripted expert releases; None means the band midpoint
    release_fill: float | None = None
    tone_amp: float = 0.5
    click_amp: float = 0.8
    sample_rate: int = 44100
    control_dt: float = 0.05
    fill_rate_jitter: float = 0.2
    pre_roll_s: tuple[float, float] = (1.5, 2.5)
    post_roll_s: tuple[float, float] = (2.7, 3.5)
    seed: int = 0

    def __post_init__(self):
        self.success_band = tuple(self.success_band)
        self.pre_roll_s = tuple(self.pre_roll_s)
        self.post_roll_s = tuple(self.post_roll_s)
        lo, hi = self.success_band
        if not self.f_full > self.f_empty > 0:
            raise ValueError("need f_full > f_empty > 0")
        if not 0 < lo < hi <= 1:
            raise ValueError("need 0 < fill_lo < fill_hi <= 1")
        if self.fill_rate <= 0:
            raise ValueError("fill_rate must be positive")

    @property
    def release_target(self) -> float:
        lo, hi = self.success_band
        return 0.5 * (lo + hi) if self.release_fill is None else self.release_fill

    def pitch(self, fill):
        return self.f_empty + (self.f_full - self.f_empty) * np.asarray(fill)


@dataclass
class WaterSimState:
    fill_level: float = 0.0
    pressed: bool = False
    time_s: float = 0.0
    overflowed: bool = False
    phase: float = 0.0
    fill_rate: float | None = None


def water_step(state: WaterSimState, action: str, dt: float, cfg: WaterSimConfig,
               rng: Rng) -> tuple[WaterSimState, PcmSignal]:
    """Advance the dispenser by ``dt`` seconds and synthesize the audio it makes."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if action not in (PRESS, RELEASE, HOLD):
        raise ValueError(f"unknown action '{action}'")
    sr = cfg.sample_rate
    n = int(round(dt * sr))
    rate = cfg.fill_rate if state.fill_rate is None else state.fill_rate
    pressed = state.pressed
    transition = (action == PRESS and not pressed) or (action == RELEASE and pressed)
    if action == PRESS:
        pressed = True
    elif action == RELEASE:
        pressed = False

    audio = rng.normal(n) * cfg.noise_rms
    fill = state.fill_level
    overflowed = state.overflowed
    phase = state.phase
    if pressed:
        levels = fill + rate * np.arange(n) / sr
        if levels[-1] + rate / sr > 1.0 or overflowed:
            overflowed = True
        levels = np.minimum(levels, 1.0)
        inc = 2 * np.pi * cfg.pitch(levels) / sr
        phases = phase + np.cumsum(inc) - inc[0]
        audio += cfg.tone_amp * np.sin(phases)
        phase = float((phases[-1] + inc[-1]) % (2 * np.pi))
        fill = min(fill + rate * n / sr, 1.0)
    if transition:
        k = min(n, int(round(cfg.click_ms * 1e-3 * sr)))
        audio[:k] += cfg.click_amp * rng.uniform(k, -1.0, 1.0) * np.linspace(1.0, 0.0, k)
    new = replace(state, fill_level=fill, pressed=pressed, time_s=state.time_s + n / sr,
                  overflowed=overflowed, phase=phase)
    return new, PcmSignal(audio, sr)


@dataclass
class WaterEpisode:
    signal: PcmSignal
    actions: list[str]
    states: list[WaterSimState]
    press_step: int
    release_step: int
    fill_rate: float
    control_dt: float
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def press_time(self) -> float:
        return self.press_step * self.control_dt

    @property
    def release_time(self) -> float:
        return self.release_step * self.control_dt

    def pressed_mask(self) -> np.ndarray:
        """+1 for control steps the button is held down, -1 otherwise."""
        return np.array([1.0 if s.pressed else -1.0 for s in self.states[1:]], np.float32)


def episode_fill_rate(cfg: WaterSimConfig, rng: Rng) -> float:
    return cfg.fill_rate * float(rng.uniform(low=1 - cfg.fill_rate_jitter, high=1 + cfg.fill_rate_jitter))


def water_episode_oracle(cfg: WaterSimConfig, seed: int | None = None) -> WaterEpisode:
    """Scripted expert: idle, press, release once the fill reaches the release target, idle."""
    seed = cfg.seed if seed is None else seed
    rng = Rng((seed, "water-episode"))
    audio_rng = Rng((seed, "water-audio"))
    dt = cfg.control_dt
    rate = episode_fill_rate(cfg, rng)
    pre_steps = int(round(rng.uniform(low=cfg.pre_roll_s[0], high=cfg.pre_roll_s[1]) / dt))
    post_steps = int(round(rng.uniform(low=cfg.post_roll_s[0], high=cfg.post_roll_s[1]) / dt))
    state = WaterSimState(fill_rate=rate)
    states, actions, chunks = [state], [], []

    def step(action):
        nonlocal state
        state, audio = water_step(state, action, dt, cfg, audio_rng)
        states.append(state)
        actions.append(action)
        chunks.append(audio.samples)

    for _ in range(pre_steps):
        step(HOLD)
    press_step = len(actions)
    step(PRESS)
    while state.fill_level < cfg.release_target:
        step(HOLD)
    release_step = len(actions)
    step(RELEASE)
    for _ in range(post_steps):
        step(HOLD)
    return WaterEpisode(PcmSignal(np.concatenate(chunks), cfg.sample_rate), actions, states, press_step,
                        release_step, rate, dt, seed)


def is_success(state: WaterSimState, cfg: WaterSimConfig) -> bool:
    lo, hi = cfg.success_band
    return (not state.pressed) and (not state.overflowed) and lo <= state.fill_level <= hi
