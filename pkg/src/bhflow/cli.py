"""Command line: ``gen``, ``run``, ``verify``, ``bench``.

Exit codes: 0 ok, 1 usage, 2 parse/I-O, 3 verification failed, 4 engine deadlock.
"""
from __future__ import annotations

import argparse
import csv
import statistics
import sys
from dataclasses import dataclass, fields

import numpy as np

from .dataflow import Accumulation, GrainConfig, StageError, dataflow_forces
from .engine import DeadlockError, Engine, EngineConfig
from .icgen import ParticleFileError, PlummerConfig, plummer_arrays, read_arrays, write_arrays
from .octree import ForceParams, accel_direct, make_tree
from .simulation import Backend, SimConfig, SimState, run_simulation

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_VERIFY, EXIT_DEADLOCK = 0, 1, 2, 3, 4

CSV_HEADER = (
    "backend,n,theta,grain,workers,iteration,tree_time_s,force_time_s,"
    "total_time_s,tasks_spawned,suspensions,mean_list_len"
)


class UsageError(Exception):
    pass


@dataclass
class BenchRecord:
    backend: str
    n: int
    theta: float
    grain: int
    workers: int
    iteration: int
    tree_time_s: float
    force_time_s: float
    total_time_s: float
    tasks_spawned: int
    suspensions: int
    mean_list_len: float


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated integer list: {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("list must not be empty")
    return vals


def _records(config: SimConfig, timings) -> list[BenchRecord]:
    if config.backend is Backend.DATAFLOW:
        grain = config.grain.grain_for(config.n)
    else:
        grain = 0
    workers = 1 if config.backend is Backend.SERIAL else config.workers
    return [
        BenchRecord(
            backend=config.backend.value,
            n=config.n,
            theta=config.theta,
            grain=grain,
            workers=workers,
            iteration=t.iteration,
            tree_time_s=t.tree_time,
            force_time_s=t.force_time,
            total_time_s=t.total_time,
            tasks_spawned=t.tasks_spawned,
            suspensions=t.suspensions,
            mean_list_len=t.mean_list_len,
        )
        for t in timings
    ]


def write_records(fh, records, header: bool = True):
    w = csv.writer(fh, lineterminator="\n")
    if header:
        w.writerow(CSV_HEADER.split(","))
    for r in records:
        w.writerow([getattr(r, f.name) for f in fields(BenchRecord)])


def _load_state(path) -> SimState:
    mass, pos, vel = read_arrays(path)
    return SimState(mass, pos, vel)


def _grain(args) -> GrainConfig:
    acc = Accumulation(args.accum)
    if getattr(args, "tasks", None):
        return GrainConfig(grain=None, tasks=args.tasks, accumulation=acc)
    return GrainConfig(grain=args.grain, accumulation=acc)


def _params(args) -> ForceParams:
    return ForceParams(g_const=1.0, softening=args.softening)


# -- commands -----------------------------------------------------------------


def cmd_gen(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    mass, pos, vel = plummer_arrays(PlummerConfig(n=args.n, seed=args.seed))
    write_arrays(args.out, mass, pos, vel)
    return EXIT_OK


def cmd_run(args) -> int:
    state = _load_state(args.input)
    config = SimConfig(
        n=state.n,
        theta=args.theta,
        dt=args.dt,
        steps=args.steps,
        params=_params(args),
        grain=_grain(args),
        workers=args.workers,
        backend=Backend(args.backend),
    )
    final, timings = run_simulation(config, state=state, sync=True)
    records = _records(config, timings)
    if args.timings_out:
        with open(args.timings_out, "w", newline="") as fh:
            write_records(fh, records)
    else:
        write_records(sys.stdout, records)
    if args.out:
        write_arrays(args.out, final.mass, final.pos, final.vel)
    return EXIT_OK


def relative_errors(approx: np.ndarray, exact: np.ndarray) -> np.ndarray:
    num = np.linalg.norm(approx - exact, axis=1)
    den = np.linalg.norm(exact, axis=1)
    return np.divide(num, den, out=num.copy(), where=den > 0)


def verify_verdict(theta: float, max_err: float, median_err: float, bound: float) -> bool:
    if theta == 0:
        return max_err == 0.0
    return median_err < bound


def cmd_verify(args) -> int:
    mass, pos, _ = read_arrays(args.input)
    n = len(mass)
    k = n if args.sample is None else args.sample
    if not 1 <= k <= n:
        raise UsageError(f"--sample must be in [1, {n}]")
    params = _params(args)
    tree = make_tree(pos, mass)
    with Engine(EngineConfig(workers=args.workers)) as eng:
        acc, _, mean_len, _ = dataflow_forces(tree, pos, args.theta, _grain(args), params, eng)
    rng = np.random.default_rng(args.seed)
    idx = np.sort(rng.choice(n, size=k, replace=False))
    exact = np.array([accel_direct(pos, mass, int(i), params) for i in idx])
    err = relative_errors(acc[idx], exact)
    max_err, med_err = float(err.max()), float(np.median(err))
    ok = verify_verdict(args.theta, max_err, med_err, args.bound)
    print(f"n={n} theta={args.theta} sample={k} mean_list_len={mean_len:.2f}")
    print(f"max_rel_error={max_err:.6e}")
    print(f"median_rel_error={med_err:.6e}")
    print(f"status={'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_VERIFY


def best_grains(records: list[BenchRecord]) -> dict[int, tuple[int, float]]:
    """Per worker count, the dataflow grain with the lowest mean force time.

    Iteration 0 is treated as warm-up and dropped when later iterations exist.
    """
    by_cfg: dict[tuple[int, int], list[float]] = {}
    for r in records:
        if r.backend == Backend.DATAFLOW.value:
            by_cfg.setdefault((r.workers, r.grain), []).append((r.iteration, r.force_time_s))
    best: dict[int, tuple[int, float]] = {}
    for (w, g), rows in sorted(by_cfg.items()):
        times = [t for it, t in rows if it > 0] or [t for _, t in rows]
        m = statistics.fmean(times)
        if w not in best or m < best[w][1]:
            best[w] = (g, m)
    return best


def bench_configs(n, theta, workers_list, grain_list, steps, dt, params, accum):
    """Serial once, then per worker count: static chunks and every dataflow grain."""
    base = dict(n=n, theta=theta, steps=steps, dt=dt, params=params)
    yield SimConfig(backend=Backend.SERIAL, workers=1, **base)
    for w in workers_list:
        yield SimConfig(backend=Backend.STATIC, workers=w, **base)
        for g in grain_list:
            yield SimConfig(backend=Backend.DATAFLOW, workers=w, grain=GrainConfig(grain=g, accumulation=accum), **base)


def cmd_bench(args) -> int:
    state = _load_state(args.input)
    if any(w < 1 for w in args.workers_list) or any(g < 1 for g in args.grain_list):
        raise UsageError("worker and grain lists must hold positive integers")
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    records: list[BenchRecord] = []
    try:
        write_records(out, [])
        for cfg in bench_configs(
            state.n, args.theta, args.workers_list, args.grain_list, args.steps, args.dt,
            _params(args), Accumulation(args.accum),
        ):
            _, timings = run_simulation(cfg, state=state.copy())
            recs = _records(cfg, timings)
            write_records(out, recs, header=False)
            out.flush()
            records.extend(recs)
    finally:
        if out is not sys.stdout:
            out.close()
    summary = sys.stderr if out is sys.stdout else sys.stdout
    print("# best grain per worker count (mean force time, warm-up dropped)", file=summary)
    for w, (g, t) in best_grains(records).items():
        print(f"workers={w} best_grain={g} force_time_s={t:.6f}", file=summary)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bhflow", description="Dataflow Barnes-Hut N-body")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write a Plummer sample")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    def physics(sp):
        sp.add_argument("--in", dest="input", required=True)
        sp.add_argument("--theta", type=float, default=0.5)
        sp.add_argument("--softening", type=float, default=1e-2)
        sp.add_argument("--accum", choices=[a.value for a in Accumulation], default="det")

    r = sub.add_parser("run", help="run a simulation, emit timing CSV")
    physics(r)
    r.add_argument("--backend", choices=[b.value for b in Backend], default="dataflow")
    grain = r.add_mutually_exclusive_group()
    grain.add_argument("--grain", type=int, default=64, help="particles per management task")
    grain.add_argument("--tasks", type=int, help="fixed number of management tasks instead of --grain")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--steps", type=int, default=1)
    r.add_argument("--dt", type=float, default=1e-3)
    r.add_argument("--timings-out", help="CSV path (default: stdout)")
    r.add_argument("--out", help="final particle state (nbody v1)")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="compare dataflow forces with the direct sum")
    physics(v)
    v.add_argument("--sample", type=int, help="particles checked against the direct sum (default: all)")
    v.add_argument("--bound", type=float, default=1e-2, help="median relative error bound for theta > 0")
    v.add_argument("--workers", type=int, default=1)
    v.add_argument("--grain", type=int, default=64)
    v.add_argument("--seed", type=int, default=0, help="seed for the particle sample")
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("bench", help="grain x worker sweep, CSV out")
    physics(b)
    b.add_argument("--workers-list", type=_int_list, required=True)
    b.add_argument("--grain-list", type=_int_list, required=True)
    b.add_argument("--steps", type=int, default=1)
    b.add_argument("--dt", type=float, default=1e-3)
    b.add_argument("--out", help="CSV path (default: stdout; summary then goes to stderr)")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"bhflow: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DeadlockError, StageError) as e:
        print(f"bhflow: {e}", file=sys.stderr)
        return EXIT_DEADLOCK
    except (ParticleFileError, OSError) as e:
        print(f"bhflow: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"bhflow: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
