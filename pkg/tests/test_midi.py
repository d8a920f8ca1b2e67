import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from audiowm.midi import (N_KEYS, MidiError, NoteEvent, PianoRoll, goal_stack, parse_midi, read_vlq, roll_to_events,
                          to_piano_roll)

import smfbuild as S


def test_vlq_two_bytes():
    assert read_vlq(bytes([0x81, 0x48]), 0) == (200, 2)


@given(st.integers(0, 0x0FFFFFFF))
def test_vlq_round_trip(n):
    enc = S.vlq(n)
    assert read_vlq(enc, 0) == (n, len(enc))


def test_one_beat_note_at_120_bpm():
    events = parse_midi(S.one_note_file())
    assert events == [NoteEvent(0.0, 0.5, 60, 64)]


def test_tempo_change_mid_track():
    # second beat at 60 BPM lasts a full second
    body = S.note_on(0, 60) + S.tempo(480, 1_000_000) + S.note_off(480, 60)
    (ev,) = parse_midi(S.smf([S.track(body)]))
    assert ev.offset_s == pytest.approx(1.5)


def test_running_status_note_pairs():
    body = S.note_on(0, 60) + S.running(0, 64, 64) + S.running(240, 60, 0) + S.running(240, 64, 0)
    events = parse_midi(S.smf([S.track(body)]))
    assert [(e.pitch, e.onset_s, e.offset_s) for e in events] == [(60, 0.0, 0.25), (64, 0.0, 0.5)]


def test_format1_tracks_merged():
    t0 = S.track(S.tempo(0, 500_000))
    t1 = S.track(S.note_on(480, 62) + S.note_off(480, 62))
    t2 = S.track(S.note_on(0, 70) + S.note_off(240, 70))
    events = parse_midi(S.smf([t0, t1, t2], fmt=1))
    assert [(e.pitch, e.onset_s, e.offset_s) for e in events] == [(70, 0.0, 0.25), (62, 0.5, 1.0)]


def test_bad_magic():
    with pytest.raises(MidiError, match="bad header magic") as info:
        parse_midi(b"RIFF" + S.one_note_file()[4:])
    assert info.value.offset == 0


def test_chunk_overrun():
    with pytest.raises(MidiError, match="overrun"):
        parse_midi(S.one_note_file()[:-2])


def test_dangling_running_status():
    with pytest.raises(MidiError, match="running status"):
        parse_midi(S.smf([S.track(S.running(0, 60, 64))]))


def test_single_note_roll():
    roll = to_piano_roll([NoteEvent(0.0, 0.5, 60)], 0.125, 1.0)
    assert roll.grid.shape == (8, N_KEYS)
    assert roll.grid[:4, 39].all() and not roll.grid[4:, 39].any()
    assert roll.grid.sum() == 4


def test_empty_roll():
    roll = to_piano_roll([], 0.125, 1.0)
    assert roll.grid.shape == (8, 88) and not roll.grid.any()


def test_chord_row():
    roll = to_piano_roll([NoteEvent(0.0, 0.125, 60), NoteEvent(0.0, 0.125, 64)], 0.125)
    assert np.flatnonzero(roll.grid[0]).tolist() == [39, 43]


def test_goal_stack_examples():
    roll = to_piano_roll([NoteEvent(0.0, 0.5, 60)], 0.125, 1.0)
    assert np.array_equal(goal_stack(roll, 3, 1).rows[0], roll.grid[3])
    tail = goal_stack(roll, 7, 4).rows
    assert np.array_equal(tail[0], roll.grid[7]) and not tail[1:].any()
    g = goal_stack(roll, 0, 10).rows
    assert g[:4, 39].all() and not g[4:].any()


def test_roll_to_events_examples():
    roll = to_piano_roll([NoteEvent(0.0, 0.5, 60)], 0.125, 1.0)
    assert roll_to_events(roll) == [NoteEvent(0.0, 0.5, 60, 64)]
    assert roll_to_events(PianoRoll(np.zeros((4, N_KEYS)))) == []
    grid = np.zeros((3, N_KEYS))
    grid[[0, 2], 10] = 1
    assert len(roll_to_events(PianoRoll(grid))) == 2


def test_64_steps_cover_8_seconds():
    roll = to_piano_roll([], 0.125, 8.0)
    assert roll.n_steps == 64


notes = st.tuples(st.integers(0, 40), st.integers(1, 12), st.integers(21, 108))


@settings(max_examples=100, deadline=None)
@given(st.lists(notes, max_size=12))
def test_roll_event_round_trip(raw):
    step = 0.125
    events = [NoteEvent(a * step, (a + d) * step, p) for a, d, p in raw]
    roll = to_piano_roll(events, step, 60 * step)
    back = to_piano_roll(roll_to_events(roll), step, 60 * step)
    assert np.array_equal(back.grid, roll.grid)
    # overlapping notes on a key merge into one run, so compare covered cells
    for e in roll_to_events(roll):
        assert roll.grid[int(e.onset_s / step):int(e.offset_s / step), e.pitch - 21].all()


@settings(max_examples=100, deadline=None)
@given(st.lists(notes, max_size=12, unique_by=lambda n: n[2]))
def test_round_trip_distinct_keys_is_exact(raw):
    step = 0.125
    events = sorted({NoteEvent(a * step, (a + d) * step, p) for a, d, p in raw},
                    key=lambda n: (n.onset_s, n.pitch, n.offset_s))
    assert roll_to_events(to_piano_roll(events, step)) == events


@settings(max_examples=300, deadline=None)
@given(st.binary(max_size=200))
def test_fuzz_random_bytes(blob):
    try:
        parse_midi(blob)
    except MidiError as exc:
        assert exc.offset >= 0


@settings(max_examples=300, deadline=None)
@given(st.binary(max_size=60), st.integers(0, 3))
def test_fuzz_valid_header_random_track(body, fmt):
    data = S.smf([S.track(body)], fmt=min(fmt, 1))
    try:
        events = parse_midi(data)
    except MidiError as exc:
        assert 0 <= exc.offset <= len(data)
    else:
        assert all(e.offset_s > e.onset_s for e in events)


@given(st.integers(0, 7))
def test_goal_stack_h1_is_row(t):
    roll = to_piano_roll([NoteEvent(0.0, 0.5, 60), NoteEvent(0.25, 1.0, 72)], 0.125, 1.0)
    assert np.array_equal(goal_stack(roll, t, 1).rows[0], roll.grid[t])
