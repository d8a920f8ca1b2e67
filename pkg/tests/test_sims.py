import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from audiowm.frontend import FrontendConfig, hz_to_mel, mel_center_frequencies, spectrogram
from audiowm.midi import N_KEYS, PianoRoll
from audiowm.piano import (BENCHMARK_MAX_SPEED, PianoEnvState, etude_roll, make_benchmark_songs, piano_step, play,
                           transpose_roll)
from audiowm.policy import KeyCommand, f1_score
from audiowm.rng import Rng
from audiowm.water import (HOLD, PRESS, RELEASE, WaterSimConfig, WaterSimState, is_success, water_episode_oracle,
                           water_step)

SIM = WaterSimConfig()


def tone_peak_hz(fill, cfg=SIM):
    state = WaterSimState(fill_level=fill, pressed=True, fill_rate=1e-9)
    _, audio = water_step(state, HOLD, 0.2, cfg, Rng(0))
    spec = np.abs(np.fft.rfft(audio.samples * np.hanning(len(audio.samples))))
    return np.fft.rfftfreq(len(audio.samples), 1 / cfg.sample_rate)[spec.argmax()], audio


@pytest.mark.parametrize("fill, expected", [(0.0, 300.0), (1.0, 1200.0)])
def test_tone_endpoints(fill, expected):
    peak, _ = tone_peak_hz(fill)
    assert abs(peak - expected) <= 5.0


def test_released_hold_keeps_fill():
    s = WaterSimState(fill_level=0.4)
    for dt in (0.01, 0.05, 1.0):
        s2, _ = water_step(s, HOLD, dt, SIM, Rng(1))
        assert s2.fill_level == 0.4 and not s2.pressed


def test_fill_slope_while_pressed():
    s, _ = water_step(WaterSimState(fill_rate=0.25), PRESS, 0.05, SIM, Rng(0))
    s, _ = water_step(s, HOLD, 0.05, SIM, Rng(0))
    assert s.fill_level == pytest.approx(0.025)


def test_overflow_flag():
    s = WaterSimState(fill_level=0.99, pressed=True)
    s, _ = water_step(s, HOLD, 0.1, SIM, Rng(0))
    assert s.overflowed and not is_success(s, SIM)


def test_click_on_transition():
    quiet = WaterSimConfig(noise_rms=0.0)
    _, a = water_step(WaterSimState(fill_level=0.5, pressed=True), RELEASE, 0.05, quiet, Rng(0))
    k = int(round(0.005 * quiet.sample_rate))
    assert np.abs(a.samples[:k]).max() > 0.1 and not a.samples[k:].any()


def test_bad_step_arguments():
    with pytest.raises(ValueError):
        water_step(WaterSimState(), HOLD, 0.0, SIM, Rng(0))
    with pytest.raises(ValueError):
        water_step(WaterSimState(), "wiggle", 0.1, SIM, Rng(0))


@pytest.mark.parametrize("fill", [0.0, 0.25, 0.5, 0.75, 1.0])
def test_dominant_mel_bin_tracks_pitch(fill):
    _, audio = tone_peak_hz(fill)
    spec = spectrogram(audio, FrontendConfig())
    centres = mel_center_frequencies(128, 20.0, SIM.sample_rate / 2)
    f = float(SIM.pitch(fill))
    width = float(hz_to_mel(centres[1]) - hz_to_mel(centres[0]))
    got = np.bincount(spec.frames.argmax(axis=1)).argmax()
    assert abs(float(hz_to_mel(centres[got]) - hz_to_mel(f))) <= width


def test_oracle_episodes_succeed():
    for seed in range(30):
        ep = water_episode_oracle(SIM, seed)
        assert is_success(ep.states[-1], SIM)
        assert ep.release_time < ep.press_time + 1.0 / ep.fill_rate


def test_oracle_deterministic():
    a, b = water_episode_oracle(SIM, 5), water_episode_oracle(SIM, 5)
    assert np.array_equal(a.signal.samples, b.signal.samples) and a.actions == b.actions


@pytest.mark.parametrize("seed", range(5))
def test_release_time_closed_form_at_band_entry(seed):
    lo = SIM.success_band[0]
    cfg = WaterSimConfig(release_fill=lo)
    ep = water_episode_oracle(cfg, seed)
    predicted = ep.press_time + lo / ep.fill_rate
    assert abs(ep.release_time - predicted) <= cfg.control_dt


def test_fill_rate_jitter_bounds():
    rates = [water_episode_oracle(SIM, s).fill_rate for s in range(20)]
    assert min(rates) >= 0.25 * 0.8 and max(rates) <= 0.25 * 1.2
    assert len(set(rates)) == 20


def test_always_hold_overflows():
    s = WaterSimState(fill_rate=0.25)
    s, _ = water_step(s, PRESS, 0.05, SIM, Rng(0))
    for _ in range(200):
        s, _ = water_step(s, HOLD, 0.05, SIM, Rng(0))
    assert s.overflowed and not is_success(s, SIM)


# --- piano ---------------------------------------------------------------------


def press(*keys, target):
    mask = np.zeros(N_KEYS, bool)
    mask[list(keys)] = True
    return KeyCommand(target, mask)


def test_piano_step_rules():
    env = PianoEnvState(hand_position=20.0)
    assert piano_step(env, press(target=20.0)).hand_position == 20.0
    far = piano_step(PianoEnvState(hand_position=0.0), press(87, target=0.0), reach=12)
    assert not far.executed[-1].any()
    near = piano_step(PianoEnvState(hand_position=10.0), press(target=13.0), max_speed=5.0)
    assert near.hand_position == 13.0
    capped = piano_step(PianoEnvState(hand_position=10.0), press(target=40.0), max_speed=5.0)
    assert capped.hand_position == 15.0


def test_executed_rows_append_only():
    env = PianoEnvState()
    after = piano_step(env, press(40, target=43.5))
    assert env.executed == [] and len(after.executed) == 1 and after.step_index == 1


def test_twinkle_opening():
    g = make_benchmark_songs()["twinkle"].grid
    assert [int(np.flatnonzero(r)[0]) for r in g[:4]] == [39, 39, 46, 46]
    assert g.shape == (48, N_KEYS)


def test_benchmark_songs_fixed():
    a, b = make_benchmark_songs(), make_benchmark_songs()
    assert list(a) == ["twinkle", "etude_a", "etude_b", "etude_c"]
    assert all(np.array_equal(a[k].grid, b[k].grid) for k in a)


def test_zero_jump_etude_needs_no_movement():
    roll = etude_roll(3, 0)
    keys = np.flatnonzero(roll.grid.max(axis=0))
    centre = (keys.min() + keys.max()) / 2
    env = play(roll, lambda t: roll.grid[t:t + 1], max_speed=0.0, start_position=centre)
    assert f1_score(env.executed_roll(), roll) == 1.0


def test_calibrated_speed_makes_reactive_play_miss():
    from audiowm.evaluate import goal_rows_fn, start_position

    scores = {h: [] for h in (1, 16)}
    for name, roll in make_benchmark_songs().items():
        for h in scores:
            env = play(roll, goal_rows_fn(roll, h), BENCHMARK_MAX_SPEED, 12, start_position(roll, 0))
            scores[h].append(f1_score(env.executed_roll(), roll))
    assert np.mean(scores[16]) - np.mean(scores[1]) >= 0.1
    assert min(scores[16]) == 1.0


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 87), st.integers(0, 87)), max_size=10), st.floats(0.5, 20))
def test_piano_env_deterministic(cmds, speed):
    def run():
        env = PianoEnvState()
        for target, key in cmds:
            env = piano_step(env, press(key, target=target), max_speed=speed)
        return env

    a, b = run(), run()
    assert np.array_equal(a.executed_roll().grid, b.executed_roll().grid)
    assert 0 <= a.hand_position <= 87


@given(st.integers(-10, 10))
def test_transpose_shifts_keys(shift):
    roll = PianoRoll(np.eye(N_KEYS, dtype=np.uint8)[30:40])
    moved = transpose_roll(roll, shift)
    assert [int(np.flatnonzero(r)[0]) for r in moved.grid] == list(range(30 + shift, 40 + shift))
