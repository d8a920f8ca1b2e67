import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from audiowm import gradcheck
from audiowm.checkpoint import CheckpointError, dump_checkpoint, load_checkpoint
from audiowm.config import PROFILES, ConfigError, RunConfig, dumps, from_dict, load_config
from audiowm.gridio import GridFormatError, dump_grid, dump_pgm, dump_roll_csv, load_grid, load_roll_csv
from audiowm.tensor import PRIMITIVES, Primitive

f32 = st.floats(-1e6, 1e6, allow_nan=False, width=32)


@settings(max_examples=50, deadline=None)
@given(st.dictionaries(st.text(min_size=1, max_size=10), arrays(np.float32, array_shapes(min_dims=0, max_dims=3),
                                                                  elements=f32), max_size=4))
def test_checkpoint_byte_exact_round_trip(tensors):
    meta = {"model": {"d": 32}, "normalization": {"lo": -23.0, "hi": 4.6}}
    data = dump_checkpoint(tensors, meta)
    back, meta2 = load_checkpoint(data)
    assert meta2 == meta
    assert list(back) == list(tensors)
    assert all(np.array_equal(back[k], tensors[k]) for k in tensors)
    assert dump_checkpoint(back, meta2) == data


def test_checkpoint_errors():
    data = dump_checkpoint({"w": np.ones((2, 3), np.float32)}, {})
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(b"XXXX" + data[4:])
    with pytest.raises(CheckpointError, match="overruns"):
        load_checkpoint(data[:-1])


@given(arrays(np.float32, st.tuples(st.integers(0, 20), st.integers(1, 20)), elements=f32), st.floats(1e-4, 1))
def test_grid_round_trip(frames, shift):
    back, s = load_grid(dump_grid(frames, shift))
    assert np.array_equal(back, frames) and s == shift


def test_grid_header_layout():
    data = dump_grid(np.zeros((3, 2)), 0.01)
    assert data[:4] == b"SPEC" and len(data) == 4 + 4 + 4 + 4 + 8 + 3 * 2 * 4
    with pytest.raises(GridFormatError):
        load_grid(b"SPEX" + data[4:])
    with pytest.raises(GridFormatError):
        load_grid(data[:-4])


def test_pgm_preview():
    data = dump_pgm(np.array([[-1.0, 1.0], [0.0, 0.0], [1.0, -1.0]]))
    head, _, pix = data.partition(b"255\n")
    assert head == b"P5\n3 2\n"
    # time left to right, feature 0 on the bottom row
    assert list(pix) == [255, 128, 0, 0, 128, 255]


@given(st.lists(st.lists(st.booleans(), min_size=88, max_size=88), max_size=10))
def test_roll_csv_round_trip(rows):
    grid = np.array(rows, np.uint8).reshape(len(rows), 88)
    assert np.array_equal(load_roll_csv(dump_roll_csv(grid)), grid)


def test_roll_csv_width_checked():
    with pytest.raises(GridFormatError):
        load_roll_csv("0,1\n")


# --- config ---------------------------------------------------------------------


def test_defaults_resolve_and_echo():
    cfg = RunConfig()
    echoed = json.loads(dumps(cfg))
    assert echoed["world_model"]["net"]["n_context"] == 8 and echoed["world_model"]["net"]["n_future"] == 16
    assert echoed["sampler"]["n_steps"] == 10
    assert echoed["world_model"]["loss"]["context_dropout_p"] == 0.5
    assert from_dict(echoed) == cfg


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown key"):
        from_dict({"world_model": {"net": {"depth": 3}}})
    with pytest.raises(ConfigError, match="unknown key"):
        from_dict({"colour": "blue"})


def test_invalid_values_rejected():
    with pytest.raises(ConfigError):
        from_dict({"sampler": {"n_steps": 0}})
    with pytest.raises(ConfigError, match="profile"):
        from_dict({"profile": "cluster"})


def test_partial_section_keeps_section_defaults():
    cfg = from_dict({"piano": {"autoencoder": {"hidden": [16]}}})
    assert cfg.piano.autoencoder.hidden == (16,)
    assert cfg.piano.autoencoder.n_features == 88 and cfg.piano.autoencoder.block == 8


def test_reference_profile_values():
    cfg = from_dict({"profile": "reference"})
    for train in (cfg.autoencoder.train, cfg.world_model.train, cfg.policy.train):
        assert (train.lr, train.batch_size, train.steps, train.weight_decay) == (1.5e-4, 256, 3000, 1e-6)
    assert "desk" in PROFILES


def test_load_config_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(bad)


# --- gradcheck negative control --------------------------------------------------


def test_corrupted_gradient_rule_is_named(monkeypatch):
    good = PRIMITIVES["tanh"]

    def bad_backward(ctx, grad):
        return [2.0 * g for g in good.backward(ctx, grad)]

    monkeypatch.setitem(PRIMITIVES, "tanh", Primitive("tanh", good.forward, bad_backward))
    report = gradcheck.run_gradcheck(seeds=range(1))
    assert not report.passed
    assert "tanh" in report.failures
    assert any("tanh" in line and "FAIL" in line for line in report.lines())
