import hashlib
import os
from pathlib import Path

import pytest

from audiowm import cli

ROOT = Path(__file__).resolve().parents[1]
SMOKE = ROOT / "configs" / "smoke.json"
DESK = ROOT / "configs" / "desk.json"

PIPELINE = [
    ["synth"], ["preprocess"], ["train", "ae"], ["train", "wm"], ["train", "policy"], ["train", "policy", "--baseline"],
    ["train", "ae", "--task", "piano"], ["train", "wm", "--task", "piano"], ["eval", "water"], ["eval", "piano"],
]


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


def run_pipeline(out, config, stages=PIPELINE):
    for stage in stages:
        code = run_cli(*stage, "--out", out, "--config", config)
        assert code == 0, f"stage {' '.join(stage)} exited {code}"
    return Path(out)


def sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@pytest.fixture(scope="session")
def smoke_run(tmp_path_factory):
    return run_pipeline(tmp_path_factory.mktemp("smoke"), SMOKE)


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    """Full desk-profile pipeline (several minutes); AUDIOWM_DESK_RUN reuses a finished run directory."""
    reuse = os.environ.get("AUDIOWM_DESK_RUN")
    if reuse:
        return Path(reuse)
    return run_pipeline(tmp_path_factory.mktemp("desk"), DESK)
