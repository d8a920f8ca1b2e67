"""Kinematic piano-duet environment, lookahead controller, F1 scoring and benchmark songs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .midi import LOWEST_KEY, N_KEYS, NoteEvent, PianoRoll, to_piano_roll
from .policy import REACH, KeyCommand, _keys, move_toward, piano_controller
from .rng import Rng


@dataclass
class PianoEnvState:
    hand_position: float = 43.5
    executed: list = field(default_factory=list)
    step_index: int = 0

    def executed_roll(self, step_s: float = 0.125) -> PianoRoll:
        grid = np.array(self.executed, np.uint8).reshape(len(self.executed), N_KEYS)
        return PianoRoll(grid, step_s)


def piano_step(env: PianoEnvState, cmd: KeyCommand, goals: PianoRoll | None = None, dt: float = 1.0,
               max_speed: float = np.inf, reach: float = REACH) -> PianoEnvState:
    """Move the hand (speed-capped), then record reachable presses for this step."""
    position = float(np.clip(move_toward(env.hand_position, cmd.target_position, max_speed * dt), 0, N_KEYS - 1))
    row = np.zeros(N_KEYS, np.uint8)
    keys = _keys(cmd.press_mask)
    row[keys[np.abs(keys - position) <= reach]] = 1
    return PianoEnvState(position, env.executed + [row], env.step_index + 1)


def play(reference: PianoRoll, goal_rows_fn, max_speed: float, reach: float = REACH,
         start_position: float | None = None) -> PianoEnvState:
    """Run one episode; ``goal_rows_fn(t)`` returns the H x 88 goal stack at step t."""
    first = _keys(reference.grid.max(axis=0)) if reference.n_steps else np.array([])
    start = float(start_position if start_position is not None else (first.mean() if first.size else 43.5))
    env = PianoEnvState(hand_position=start)
    for t in range(reference.n_steps):
        cmd = piano_controller(goal_rows_fn(t), env.hand_position, max_speed, reach)
        env = piano_step(env, cmd, reference, 1.0, max_speed, reach)
    return env


# --- benchmark songs ------------------------------------------------------------

_NOTE = {"C": 0, "D": 2, "E": 4, "F": 5, "G": 7, "A": 9, "B": 11}

TWINKLE = ("C4 C4 G4 G4 A4 A4 G4:2 F4 F4 E4 E4 D4 D4 C4:2 "
           "G4 G4 F4 F4 E4 E4 D4:2 G4 G4 F4 F4 E4 E4 D4:2 "
           "C4 C4 G4 G4 A4 A4 G4:2 F4 F4 E4 E4 D4 D4 C4:2")


def note_number(name: str) -> int:
    return 12 * (int(name[-1]) + 1) + _NOTE[name[0]] + name[1:-1].count("#")


def melody_roll(text: str, step_s: float = 0.125) -> PianoRoll:
    """Single-line melody "C4 D4:2 ..." (duration in steps after the colon)."""
    events, t = [], 0
    for tok in text.split():
        name, _, dur = tok.partition(":")
        steps = int(dur) if dur else 1
        events.append(NoteEvent(t * step_s, (t + steps) * step_s, note_number(name)))
        t += steps
    return to_piano_roll(events, step_s, t * step_s)


def etude_roll(seed: int, max_jump: int, bars: int = 16, notes_per_bar: int = 4, rest_steps: int = 4,
               spread: int = 4, step_s: float = 0.125) -> PianoRoll:
    """Register-hopping study.

    A few register centers, each with a fixed motif of ``notes_per_bar`` notes
    within +-``spread`` keys, visited in a repeating bar pattern.  Each bar
    ends with ``rest_steps`` of silence.  Jumps between centers are drawn in
    [max_jump/2, max_jump] key indices.
    """
    rng = Rng((seed, "etude"))
    lo, hi = spread, N_KEYS - 1 - spread
    centers = [lo + rng.integers(hi - lo + 1)]
    for _ in range(2):
        jump = max_jump - rng.integers(max_jump // 2 + 1) if max_jump else 0
        sign = 1 if rng.uniform() < 0.5 else -1
        c = centers[0] + sign * jump
        if not lo <= c <= hi:
            c = centers[0] - sign * jump
        centers.append(int(np.clip(c, lo, hi)))
    motifs = [[c + int(rng.integers(2 * spread + 1)) - spread for _ in range(notes_per_bar)] for c in centers]
    pattern = [0, 1, 0, 2]
    grid = np.zeros((bars * (notes_per_bar + rest_steps), N_KEYS), np.uint8)
    t = 0
    for bar in range(bars):
        motif = motifs[pattern[bar % len(pattern)]]
        for key in motif:
            grid[t, key] = 1
            t += 1
        t += rest_steps
    return PianoRoll(grid, step_s)


BENCHMARK_ETUDES = {"etude_a": (11, 50), "etude_b": (12, 44), "etude_c": (13, 56)}
BENCHMARK_MAX_SPEED = 6.0


def make_benchmark_songs() -> dict[str, PianoRoll]:
    songs = {"twinkle": melody_roll(TWINKLE)}
    for name, (seed, jump) in BENCHMARK_ETUDES.items():
        songs[name] = etude_roll(seed, jump)
    return songs


def key_index(pitch: int) -> int:
    return pitch - LOWEST_KEY


def transpose_roll(roll: PianoRoll, shift: int) -> PianoRoll:
    """Shift every note by ``shift`` keys; notes pushed off the keyboard are dropped."""
    g = np.zeros_like(roll.grid)
    if shift >= 0:
        g[:, shift:] = roll.grid[:, :N_KEYS - shift]
    else:
        g[:, :shift] = roll.grid[:, -shift:]
    return PianoRoll(g, roll.step_s)
