"""Run every pipeline stage in order and print a timing table plus the eval summaries.

    python scripts/run_pipeline.py --config configs/desk.json --out runs/desk
"""

import argparse
import json
import sys
import time
from pathlib import Path

from audiowm import cli

STAGES = [
    ["synth"], ["preprocess"], ["train", "ae"], ["train", "wm"], ["train", "policy"], ["train", "policy", "--baseline"],
    ["train", "ae", "--task", "piano"], ["train", "wm", "--task", "piano"], ["eval", "water"], ["eval", "piano"],
]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/desk.json")
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--from-stage", type=int, default=0, help="skip the first N stages (resume)")
    args = ap.parse_args()
    timings = []
    for stage in STAGES[args.from_stage:]:
        t0 = time.perf_counter()
        code = cli.main([*stage, "--config", args.config, "--out", args.out])
        timings.append((" ".join(stage), time.perf_counter() - t0))
        if code:
            print(f"stage '{' '.join(stage)}' failed with exit code {code}", file=sys.stderr)
            return code
    print()
    for name, sec in timings:
        print(f"{name:28s} {sec:8.1f}s")
    print(f"{'total':28s} {sum(s for _, s in timings):8.1f}s")
    for task in ("water", "piano"):
        path = Path(args.out) / "eval" / f"{task}_summary.json"
        summary = json.loads(path.read_text())
        summary.get("pitch_trend", {}).pop("spearman", None)
        print(f"\n{task}: {json.dumps(summary, sort_keys=True)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
