"""Iteration driver: tree barrier, force stage, leapfrog update, diagnostics.

Each :func:`step` builds the tree at x(t), evaluates a(t) with the chosen
backend, applies the closing half-kick left over from the previous step, then
the opening half-kick and the drift.  Velocities in a stepped state are
therefore half a step behind until :func:`synchronize` evaluates the force
once more and applies the closing kick.
"""
from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from .backends import serial_force, static_chunk_force
from .dataflow import GrainConfig, StageStats, dataflow_forces
from .engine import Engine, EngineConfig
from .icgen import PlummerConfig, plummer_arrays
from .octree import ForceParams, make_tree


class Backend(enum.Enum):
    DATAFLOW = "dataflow"
    STATIC = "static"
    SERIAL = "serial"


class NumericalBlowupError(ArithmeticError):
    def __init__(self, iteration: int):
        super().__init__(f"non-finite positions after iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class SimConfig:
    n: int = 1000
    theta: float = 0.5
    dt: float = 1e-3
    steps: int = 1
    params: ForceParams = ForceParams()
    grain: GrainConfig = GrainConfig()
    workers: int = 1
    backend: Backend = Backend.DATAFLOW
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.theta < 0:
            raise ValueError("theta must be non-negative")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class SimState:
    mass: np.ndarray
    pos: np.ndarray
    vel: np.ndarray
    time: float = 0.0
    iteration: int = 0
    half_kick_pending: bool = False

    @property
    def n(self) -> int:
        return len(self.mass)

    def copy(self) -> "SimState":
        return replace(self, mass=self.mass.copy(), pos=self.pos.copy(), vel=self.vel.copy())


@dataclass
class IterationTiming:
    iteration: int
    tree_time: float
    force_time: float
    integrate_time: float
    total_time: float
    mean_list_len: float
    stage: StageStats | None = None
    chunk_times: list[float] = field(default_factory=list)

    @property
    def tasks_spawned(self) -> int:
        return self.stage.engine_tasks_spawned if self.stage else 0

    @property
    def suspensions(self) -> int:
        return self.stage.engine_suspensions if self.stage else 0


def compute_forces(state: SimState, config: SimConfig, engine: Engine | None = None):
    """Tree + one force evaluation; returns ``(acc, tree_time, force_time, mean_len, stage, chunk_times)``."""
    t0 = time.perf_counter()
    tree = make_tree(state.pos, state.mass)
    tree_time = time.perf_counter() - t0
    stage = None
    chunk_times: list[float] = []
    if config.backend is Backend.DATAFLOW:
        if engine is None:
            raise ValueError("dataflow backend needs an engine")
        acc, stage, mean_len, setup = dataflow_forces(tree, state.pos, config.theta, config.grain, config.params, engine)
        tree_time += setup
        force_time = stage.wall_time_force
    else:
        t1 = time.perf_counter()
        if config.backend is Backend.SERIAL:
            acc, lens = serial_force(tree, state.pos, config.theta, config.params)
        else:
            acc, lens, report = static_chunk_force(tree, state.pos, config.theta, config.workers, config.params)
            chunk_times = list(report.times)
        force_time = time.perf_counter() - t1
        mean_len = float(lens.mean()) if len(lens) else 0.0
    return acc, tree_time, force_time, mean_len, stage, chunk_times


def step(state: SimState, config: SimConfig, engine: Engine | None = None) -> tuple[SimState, IterationTiming]:
    t_start = time.perf_counter()
    acc, tree_time, force_time, mean_len, stage, chunk_times = compute_forces(state, config, engine)
    t0 = time.perf_counter()
    dt = config.dt
    vel = state.vel.copy()
    if state.half_kick_pending:
        vel += acc * (0.5 * dt)
    vel += acc * (0.5 * dt)
    with np.errstate(over="ignore", invalid="ignore"):
        pos = state.pos + vel * dt
    if not np.isfinite(pos).all():
        raise NumericalBlowupError(state.iteration)
    new = SimState(state.mass, pos, vel, state.time + dt, state.iteration + 1, True)
    t_end = time.perf_counter()
    timing = IterationTiming(
        iteration=state.iteration,
        tree_time=tree_time,
        force_time=force_time,
        integrate_time=t_end - t0,
        total_time=t_end - t_start,
        mean_list_len=mean_len,
        stage=stage,
        chunk_times=chunk_times,
    )
    return new, timing


def synchronize(state: SimState, config: SimConfig, engine: Engine | None = None) -> SimState:
    """Apply the pending closing half-kick so velocities match positions in time."""
    if not state.half_kick_pending:
        return state
    acc = compute_forces(state, config, engine)[0]
    return replace(state, vel=state.vel + acc * (0.5 * config.dt), half_kick_pending=False)


def initial_state(config: SimConfig) -> SimState:
    mass, pos, vel = plummer_arrays(PlummerConfig(n=config.n, seed=config.seed, g_const=config.params.g_const))
    return SimState(mass, pos, vel)


def run_simulation(
    config: SimConfig,
    state: SimState | None = None,
    engine: Engine | None = None,
    sync: bool = False,
) -> tuple[SimState, list[IterationTiming]]:
    """Run ``config.steps`` iterations from ``state`` (a Plummer sample if omitted)."""
    if state is None:
        state = initial_state(config)
    own = engine is None and config.backend is Backend.DATAFLOW
    if own:
        engine = Engine(EngineConfig(workers=config.workers))
    try:
        timings = []
        for _ in range(config.steps):
            state, t = step(state, config, engine)
            timings.append(t)
        if sync:
            state = synchronize(state, config, engine)
    finally:
        if own:
            engine.shutdown()
    return state, timings


@dataclass(frozen=True)
class Diagnostics:
    kinetic: float
    potential: float
    momentum: tuple[float, float, float]

    @property
    def total(self) -> float:
        return self.kinetic + self.potential


def diagnostics(state: SimState, params: ForceParams = ForceParams()) -> Diagnostics:
    m = state.mass
    ke = math.fsum(0.5 * m * np.einsum("ij,ij->i", state.vel, state.vel))
    pe = K.potential_energy(np.ascontiguousarray(state.pos), np.ascontiguousarray(m), params.g_const, params.eps2)
    mom = tuple(math.fsum(m * state.vel[:, k]) for k in range(3))
    return Diagnostics(ke, float(pe), mom)
