"""Force stage as a dataflow graph on the engine.

The moment-annotated tree is flattened into an *input row*: one pre-set future
per tree node carrying its mass and centroid.  Each particle gets an *output
element* whose dependency vector lists the GIDs of its interaction list.
Management tasks each own a contiguous slice of the output row and spawn one
element task per particle; the element task then either joins on all its
inputs at once (deterministic) or issues one get per input and folds
contributions in arrival order (streaming).
"""
from __future__ import annotations

import enum
import math
import struct
import threading
import time
from dataclasses import dataclass
from itertools import count
from typing import Sequence

import numpy as np

from . import _kernels as K
from .engine import DeadlockError, Engine, EngineError, Gid
from .octree import ForceParams, Octree, SingularForceError, interaction_lists


class Accumulation(enum.Enum):
    DETERMINISTIC = "det"
    STREAMING = "stream"


@dataclass(frozen=True)
class GrainConfig:
    """Either ``grain`` (particles per management task) or ``tasks`` (fixed count)."""

    grain: int | None = 1
    tasks: int | None = None
    accumulation: Accumulation = Accumulation.DETERMINISTIC

    def __post_init__(self):
        if (self.grain is None) == (self.tasks is None):
            raise ValueError("give exactly one of grain or tasks")
        if self.grain is not None and self.grain < 1:
            raise ValueError("grain must be >= 1")
        if self.tasks is not None and self.tasks < 1:
            raise ValueError("tasks must be >= 1")

    def grain_for(self, p: int) -> int:
        if self.grain is not None:
            return self.grain
        return max(1, math.ceil(p / self.tasks))


_RECORD = struct.Struct("<6d")


class InputPayload(bytes):
    """Immutable packed record ``(mass, x, y, z, node_id, is_particle)``.

    Six little-endian doubles, so a batch of payloads joins straight into an
    ``(n, 6)`` array.
    """

    __slots__ = ()

    def __new__(cls, mass, x, y, z, node_id, is_particle):
        return super().__new__(cls, _RECORD.pack(mass, x, y, z, node_id, is_particle))

    def fields(self) -> tuple:
        return _RECORD.unpack(self)

    @property
    def mass(self) -> float:
        return self.fields()[0]

    @property
    def com(self) -> tuple[float, float, float]:
        return self.fields()[1:4]

    @property
    def node_id(self) -> int:
        return int(self.fields()[4])

    @property
    def is_particle(self) -> bool:
        return bool(self.fields()[5])

    def __repr__(self):
        m, x, y, z, node, part = self.fields()
        return f"InputPayload(mass={m!r}, com=({x!r}, {y!r}, {z!r}), node_id={int(node)}, is_particle={bool(part)})"


def payload_rows(payloads) -> np.ndarray:
    """Stack payloads into an ``(n, 6)`` float array without copying field by field."""
    return np.frombuffer(b"".join(payloads), dtype="<f8").reshape(-1, 6)


@dataclass
class InputElement:
    gid: Gid
    payload: InputPayload


@dataclass
class InputRow:
    elements: list[InputElement]
    gid_of_node: np.ndarray  # node_id -> gid

    def __len__(self):
        return len(self.elements)


@dataclass
class OutputElement:
    gid: Gid
    particle_index: int
    deps: np.ndarray  # input-row gids, traversal order


@dataclass
class StageStats:
    management_tasks: int = 0
    element_tasks: int = 0
    get_tasks: int = 0
    join_tasks: int = 0
    wall_time_force: float = 0.0
    management_per_worker: tuple[int, ...] = ()
    engine_tasks_spawned: int = 0
    engine_suspensions: int = 0

    @property
    def counters(self) -> tuple[int, int, int]:
        return (self.management_tasks, self.element_tasks, self.get_tasks)


class StageError(EngineError):
    pass


def flatten(tree: Octree, engine: Engine) -> InputRow:
    """One pre-set future per tree node, in depth-first order."""
    if not tree.has_moments:
        raise ValueError("compute_moments must run before flatten")
    order = tree.preorder()
    gids = engine.futures_new(len(order))
    gid_of_node = np.full(tree.n_nodes, -1, dtype=np.int64)
    masses = tree.node_mass[order].tolist()
    coms = tree.com[order].tolist()
    is_leaf = (tree.kind[order] == K.LEAF).tolist()
    elements = []
    for gid, node, m, c, lf in zip(gids, order.tolist(), masses, coms, is_leaf):
        p = InputPayload(m, c[0], c[1], c[2], node, int(lf))
        engine.future_set(gid, p)
        gid_of_node[node] = gid
        elements.append(InputElement(Gid(gid), p))
    return InputRow(elements, gid_of_node)


def wire(row: InputRow, tree: Octree, pos, theta: float, engine: Engine) -> list[OutputElement]:
    """One output element per particle, in input-row order, deps from the tree walk."""
    order = tree.preorder()
    idx = tree.leaf[order[tree.kind[order] == K.LEAF]]
    offsets, nodes = interaction_lists(tree, pos, theta, idx)
    dep_gids = row.gid_of_node[nodes]
    results = engine.futures_new(len(idx))
    off = offsets.tolist()
    return [
        OutputElement(Gid(results[k]), i, dep_gids[off[k] : off[k + 1]])
        for k, i in enumerate(idx.tolist())
    ]


def stage_task_count(p: int, deps_sizes: Sequence[int], grain: int) -> tuple[int, int, int]:
    """Predicted ``(management, element, get)`` task counts for a streaming stage.

    Per particle that is one element task plus one task per input read, on top
    of its share of a management task.
    """
    if grain < 1:
        raise ValueError("grain must be >= 1")
    return (-(-p // grain), p, int(sum(deps_sizes)))


class _Stream:
    __slots__ = ("lock", "remaining", "terms")

    def __init__(self, n):
        self.lock = threading.Lock()
        self.remaining = n
        self.terms: tuple[list, list, list] = ([], [], [])


def execute_force_stage(
    row: InputRow,
    outputs: Sequence[OutputElement],
    grain: GrainConfig,
    params: ForceParams,
    engine: Engine,
    pos,
) -> tuple[np.ndarray, StageStats]:
    """Run the force stage; returns accelerations indexed by particle and stage counters.

    ``pos`` supplies each element's own position (the target); every source
    value is read through the input-row futures.
    """
    pos = np.ascontiguousarray(pos, dtype=float)
    g_const, eps2 = params.g_const, params.eps2
    p = len(outputs)
    g = grain.grain_for(p)
    w = engine.workers
    n_mgmt, n_elem, n_get, n_join = count(), count(), count(), count()
    mgmt_by_worker = [0] * w
    streaming = grain.accumulation is Accumulation.STREAMING

    def finish_det(out: OutputElement, payloads):
        next(n_join)
        src = payload_rows(payloads) if payloads else np.zeros((0, 6))
        acc, status = K.accel_from_rows(pos[out.particle_index], src, g_const, eps2)
        if status:
            raise SingularForceError(f"particle {out.particle_index}: coincident source")
        engine.future_set(out.gid, acc)

    def element_det(out: OutputElement):
        next(n_elem)
        engine.when_all(out.deps, lambda payloads: finish_det(out, payloads))

    def element_stream(out: OutputElement):
        next(n_elem)
        n = len(out.deps)
        if n == 0:
            engine.future_set(out.gid, np.zeros(3))
            return
        px, py, pz = pos[out.particle_index].tolist()
        st = _Stream(n)

        def on_input(payload):
            next(n_get)
            m, sx, sy, sz = payload.fields()[:4]
            dx, dy, dz = sx - px, sy - py, sz - pz
            r2 = dx * dx + dy * dy + dz * dz + eps2
            if r2 == 0.0:
                raise SingularForceError(f"particle {out.particle_index}: coincident source")
            f = g_const * m / (r2 * math.sqrt(r2))
            with st.lock:
                st.terms[0].append(f * dx)
                st.terms[1].append(f * dy)
                st.terms[2].append(f * dz)
                st.remaining -= 1
                done = st.remaining == 0
            if done:
                engine.future_set(out.gid, np.array([math.fsum(t) for t in st.terms]))

        for gid in out.deps.tolist():
            engine.future_get(gid, on_input)

    element = element_stream if streaming else element_det

    def manage(lo: int, hi: int):
        next(n_mgmt)
        k = engine.current_worker()
        mgmt_by_worker[k] += 1
        for out in outputs[lo:hi]:
            engine.spawn(element, out, queue=k)

    before = engine.stats()
    t0 = time.perf_counter()
    for lo in range(0, p, g):
        engine.spawn(manage, lo, min(lo + g, p))
    try:
        after = engine.quiesce()
    except DeadlockError as e:
        raise StageError(f"force stage stalled: {e}") from e
    wall = time.perf_counter() - t0
    delta = after - before

    acc = np.zeros((len(pos), 3))
    for out in outputs:
        acc[out.particle_index] = engine.value(out.gid)
    stats = StageStats(
        management_tasks=next(n_mgmt),
        element_tasks=next(n_elem),
        get_tasks=next(n_get),
        join_tasks=next(n_join),
        wall_time_force=wall,
        management_per_worker=tuple(mgmt_by_worker),
        engine_tasks_spawned=delta.tasks_spawned,
        engine_suspensions=delta.suspensions,
    )
    return acc, stats


def dataflow_forces(tree: Octree, pos, theta: float, grain: GrainConfig, params: ForceParams, engine: Engine):
    """flatten + wire + execute; returns ``(acc, stats, mean_list_len, setup_time)``."""
    t0 = time.perf_counter()
    row = flatten(tree, engine)
    outputs = wire(row, tree, pos, theta, engine)
    setup = time.perf_counter() - t0
    acc, stats = execute_force_stage(row, outputs, grain, params, engine, pos)
    mean_len = float(np.mean([len(o.deps) for o in outputs])) if outputs else 0.0
    return acc, stats, mean_len, setup
