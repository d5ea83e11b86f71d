"""Force-stage time over a grain x workers grid on one Plummer sample.

    python scripts/grain_sweep.py --n 10000 --workers 1,2,4 --grains 1,16,64,256,10000
"""
import argparse
import statistics

from bhflow.dataflow import GrainConfig
from bhflow.engine import Engine
from bhflow.simulation import SimConfig, initial_state, run_simulation


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=10_000)
    ap.add_argument("--theta", type=float, default=0.5)
    ap.add_argument("--steps", type=int, default=4)
    ap.add_argument("--workers", default="1,4")
    ap.add_argument("--grains", default="1,64,10000")
    args = ap.parse_args()
    workers = [int(w) for w in args.workers.split(",")]
    grains = [int(g) for g in args.grains.split(",")]
    init = initial_state(SimConfig(n=args.n, seed=1))

    print(f"{'workers':>7} {'grain':>7} {'force_s':>9} {'tasks':>8}")
    for w in workers:
        with Engine(workers=w) as eng:
            for g in grains:
                cfg = SimConfig(n=args.n, theta=args.theta, steps=args.steps, workers=w, grain=GrainConfig(g))
                _, ts = run_simulation(cfg, state=init.copy(), engine=eng)
                warm = ts[1:] or ts
                t = statistics.fmean(x.force_time for x in warm)
                print(f"{w:>7} {g:>7} {t:>9.4f} {warm[-1].tasks_spawned:>8}")


if __name__ == "__main__":
    main()
