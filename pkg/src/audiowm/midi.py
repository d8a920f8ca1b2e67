"""Standard MIDI File parsing, piano rolls and lookahead goal stacks."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

LOWEST_KEY = 21
HIGHEST_KEY = 108
N_KEYS = 88
DEFAULT_TEMPO = 500_000  # microseconds per quarter note (120 BPM)


class MidiError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


@dataclass(frozen=True)
class NoteEvent:
    onset_s: float
    offset_s: float
    pitch: int
    velocity: int = 64


@dataclass
class PianoRoll:
    grid: np.ndarray
    step_s: float = 0.125

    def __post_init__(self):
        self.grid = (np.asarray(self.grid) > 0).astype(np.uint8)
        if self.grid.ndim != 2 or self.grid.shape[1] != N_KEYS:
            raise ValueError(f"piano roll must be T x {N_KEYS}, got {self.grid.shape}")
        if self.step_s <= 0:
            raise ValueError("step_s must be positive")

    @property
    def n_steps(self) -> int:
        return self.grid.shape[0]


@dataclass
class GoalStack:
    rows: np.ndarray

    @property
    def horizon(self) -> int:
        return self.rows.shape[0]


def read_vlq(data: bytes, pos: int) -> tuple[int, int]:
    """Decode a variable-length quantity; returns (value, next position)."""
    value = 0
    for i in range(4):
        if pos + i >= len(data):
            raise MidiError("variable-length quantity runs past end of data", pos + i)
        byte = data[pos + i]
        value = (value << 7) | (byte & 0x7F)
        if not byte & 0x80:
            return value, pos + i + 1
    raise MidiError("variable-length quantity longer than 4 bytes", pos)


_DATA_LEN = {0x80: 2, 0x90: 2, 0xA0: 2, 0xB0: 2, 0xC0: 1, 0xD0: 1, 0xE0: 2}


def _parse_track(data: bytes, start: int, end: int, track_no: int):
    """Yield raw events (tick, seq, kind, payload) for one MTrk body."""
    events = []
    pos, tick, status, seq = start, 0, None, 0
    while pos < end:
        delta, pos = read_vlq(data, pos)
        tick += delta
        if pos >= end:
            raise MidiError("event missing after delta time", pos)
        first = data[pos]
        if first == 0xFF:
            if pos + 2 > end:
                raise MidiError("truncated meta event", pos)
            mtype = data[pos + 1]
            length, body = read_vlq(data, pos + 2)
            if body + length > end:
                raise MidiError("meta event overruns track chunk", pos)
            if mtype == 0x51:
                if length != 3:
                    raise MidiError("set-tempo meta event must have length 3", pos)
                events.append((tick, track_no, seq, "tempo", int.from_bytes(data[body:body + 3], "big")))
            elif mtype == 0x2F:
                events.append((tick, track_no, seq, "end", None))
                pos = body + length
                break
            pos = body + length
            status = None
        elif first in (0xF0, 0xF7):
            length, body = read_vlq(data, pos + 1)
            if body + length > end:
                raise MidiError("sysex event overruns track chunk", pos)
            pos = body + length
            status = None
        else:
            if first & 0x80:
                if first >= 0xF0:
                    raise MidiError(f"unsupported system message 0x{first:02X}", pos)
                status = first
                pos += 1
            elif status is None:
                raise MidiError("dangling running status (data byte without a status)", pos)
            n = _DATA_LEN[status & 0xF0]
            if pos + n > end:
                raise MidiError("channel message overruns track chunk", pos)
            args = data[pos:pos + n]
            if any(b & 0x80 for b in args):
                raise MidiError("status byte inside channel message data", pos)
            pos += n
            kind = status & 0xF0
            channel = status & 0x0F
            if kind == 0x90 and args[1] > 0:
                events.append((tick, track_no, seq, "on", (channel, args[0], args[1])))
            elif kind == 0x80 or kind == 0x90:
                events.append((tick, track_no, seq, "off", (channel, args[0])))
        seq += 1
    return events, tick


def parse_midi(data: bytes) -> list[NoteEvent]:
    """Decode an SMF format 0/1 byte string into note events (seconds)."""
    if len(data) < 14 or data[:4] != b"MThd":
        raise MidiError("bad header magic", 0)
    (hlen,) = struct.unpack_from(">I", data, 4)
    if hlen < 6 or 8 + hlen > len(data):
        raise MidiError("header chunk length overrun", 4)
    fmt, ntrks, division = struct.unpack_from(">HHH", data, 8)
    if fmt not in (0, 1):
        raise MidiError(f"unsupported SMF format {fmt}", 8)
    if division & 0x8000:
        fps = 256 - (division >> 8)
        ticks_per_second = fps * (division & 0xFF)
        if ticks_per_second <= 0:
            raise MidiError("invalid SMPTE division", 12)
        tpq = None
    else:
        tpq = division
        if tpq == 0:
            raise MidiError("zero ticks per quarter note", 12)

    pos = 8 + hlen
    raw, track_end = [], {}
    found = 0
    while pos < len(data) and found < ntrks:
        if pos + 8 > len(data):
            raise MidiError("truncated chunk header", pos)
        cid = data[pos:pos + 4]
        (clen,) = struct.unpack_from(">I", data, pos + 4)
        if pos + 8 + clen > len(data):
            raise MidiError("chunk length overrun", pos + 4)
        if cid == b"MTrk":
            events, last_tick = _parse_track(data, pos + 8, pos + 8 + clen, found)
            raw.extend(events)
            track_end[found] = last_tick
            found += 1
        pos += 8 + clen
    if found < ntrks:
        raise MidiError(f"expected {ntrks} tracks, found {found}", pos)

    raw.sort(key=lambda e: (e[0], e[1], e[2]))

    def seconds_fn():
        # piecewise-linear tick -> seconds map built from tempo changes
        points = [(0, 0.0, DEFAULT_TEMPO)]
        for tick, _, _, kind, payload in raw:
            if kind == "tempo" and tpq is not None:
                t0, s0, tempo = points[-1]
                points.append((tick, s0 + (tick - t0) * tempo / (1e6 * tpq), payload))

        def to_seconds(tick):
            if tpq is None:
                return tick / ticks_per_second
            for t0, s0, tempo in reversed(points):
                if tick >= t0:
                    return s0 + (tick - t0) * tempo / (1e6 * tpq)
            return 0.0

        return to_seconds

    to_seconds = seconds_fn()
    open_notes: dict[tuple[int, int], list[tuple[float, int, int]]] = {}
    notes: list[NoteEvent] = []

    def close(key, at_s):
        onset, velocity, _ = open_notes[key].pop(0)
        if not open_notes[key]:
            del open_notes[key]
        if at_s > onset and LOWEST_KEY <= key[1] <= HIGHEST_KEY:
            notes.append(NoteEvent(onset, at_s, key[1], velocity))

    for tick, track, _, kind, payload in raw:
        if kind == "on":
            channel, pitch, velocity = payload
            key = (channel, pitch)
            if key in open_notes:
                close(key, to_seconds(tick))
            open_notes.setdefault(key, []).append((to_seconds(tick), velocity, track))
        elif kind == "off":
            key = payload
            if key in open_notes:
                close(key, to_seconds(tick))
    for key in list(open_notes):
        while key in open_notes:
            track = open_notes[key][0][2]
            close(key, to_seconds(track_end[track]))
    notes.sort(key=lambda n: (n.onset_s, n.pitch, n.offset_s))
    return notes


def to_piano_roll(events, step_s: float = 0.125, duration_s: float | None = None) -> PianoRoll:
    """Multi-hot roll: row t has key k set iff some note covers time t*step_s."""
    if step_s <= 0:
        raise ValueError("step_s must be positive")
    events = list(events)
    if duration_s is None:
        duration_s = max((e.offset_s for e in events), default=0.0)
    n = max(int(math.ceil(duration_s / step_s - 1e-9)), 0)
    grid = np.zeros((n, N_KEYS), dtype=np.uint8)
    for e in events:
        if not LOWEST_KEY <= e.pitch <= HIGHEST_KEY:
            continue
        start = max(int(math.ceil(e.onset_s / step_s - 1e-9)), 0)
        stop = min(int(math.ceil(e.offset_s / step_s - 1e-9)), n)
        if stop > start:
            grid[start:stop, e.pitch - LOWEST_KEY] = 1
    return PianoRoll(grid, step_s)


def goal_stack(roll: PianoRoll, t_index: int, horizon: int) -> GoalStack:
    """Rows t_index .. t_index+horizon-1 of the roll, zero-padded past the end."""
    if not 0 <= t_index < roll.n_steps:
        raise IndexError(f"t_index {t_index} outside roll of {roll.n_steps} steps")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    rows = np.zeros((horizon, N_KEYS), dtype=np.uint8)
    avail = roll.grid[t_index:t_index + horizon]
    rows[:len(avail)] = avail
    return GoalStack(rows)


def roll_to_events(roll: PianoRoll, velocity: int = 64) -> list[NoteEvent]:
    events = []
    padded = np.vstack([np.zeros((1, N_KEYS), np.int8), roll.grid.astype(np.int8), np.zeros((1, N_KEYS), np.int8)])
    edges = np.diff(padded, axis=0)
    for key in range(N_KEYS):
        starts = np.flatnonzero(edges[:, key] == 1)
        stops = np.flatnonzero(edges[:, key] == -1)
        for a, b in zip(starts, stops):
            events.append(NoteEvent(a * roll.step_s, b * roll.step_s, key + LOWEST_KEY, velocity))
    events.sort(key=lambda n: (n.onset_s, n.pitch, n.offset_s))
    return events
