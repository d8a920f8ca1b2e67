"""Closed-loop water trials for both policy arms of a finished run, with fill statistics.

    python scripts/water_paired_trials.py runs/desk --trials 100
"""

import argparse
import json
from pathlib import Path

import numpy as np

from audiowm.config import load_config
from audiowm.evaluate import WaterModels, water_evaluate
from audiowm.frontend import NormalizationStats
from audiowm.pipeline import load_autoencoder, load_policy, load_world_model


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("run_dir", type=Path)
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--seed", type=int, default=5000, help="episode seed base (eval uses 1000)")
    ap.add_argument("--release-fill", type=float, help="override the simulator's release target")
    args = ap.parse_args()
    run = args.run_dir
    cfg = load_config(run / "config" / "eval_water.resolved.json")
    sim = cfg.simulator
    if args.release_fill is not None:
        sim.release_fill = args.release_fill
    stats = json.loads((run / "features" / "water" / "stats.json").read_text())
    ckpt = run / "checkpoints"
    ae, wm = load_autoencoder(ckpt / "ae.sfwm"), load_world_model(ckpt / "wm.sfwm")
    for arm, name in (("lookahead", "policy"), ("baseline", "policy_baseline")):
        models = WaterModels(NormalizationStats(stats["lo"], stats["hi"]), ae, wm, load_policy(ckpt / f"{name}.sfwm"))
        trials = water_evaluate(models, sim, cfg.frontend, args.trials, args.seed, cfg.sampler.n_steps)
        fills = np.array([t.fill_level for t in trials])
        print(f"{arm:9s} {sum(t.success for t in trials)}/{len(trials)} "
              f"fill mean {fills.mean():.3f} sd {fills.std():.3f} min {fills.min():.3f} max {fills.max():.3f} "
              f"overflow {sum(t.overflowed for t in trials)}")


if __name__ == "__main__":
    main()
