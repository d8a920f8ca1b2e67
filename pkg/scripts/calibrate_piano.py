"""Sweep the hand speed cap with oracle lookahead: mean F1 for H=1 and H=16 on the benchmark songs.

The benchmark speed is the one where reactive play clearly misses but full lookahead is still perfect.
"""

import argparse

import numpy as np

from audiowm.evaluate import piano_evaluate
from audiowm.piano import make_benchmark_songs


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--speeds", type=float, nargs="+", default=[2, 3, 4, 5, 6, 8, 10, 14])
    ap.add_argument("--seeds", type=int, default=20)
    args = ap.parse_args()
    songs = make_benchmark_songs()
    print(f"{'max_speed':>9s} {'F1 H=1':>8s} {'F1 H=16':>8s} {'gap':>6s} {'min H=16':>9s}")
    for speed in args.speeds:
        res = piano_evaluate(songs, None, range(args.seeds), max_speed=speed)
        f1 = {h: np.array([r.f1 for r in res if r.horizon == h]) for h in (1, 16)}
        print(f"{speed:9.1f} {f1[1].mean():8.3f} {f1[16].mean():8.3f} {f1[16].mean() - f1[1].mean():6.3f} "
              f"{f1[16].min():9.3f}")


if __name__ == "__main__":
    main()
