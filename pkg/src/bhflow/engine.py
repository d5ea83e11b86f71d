"""Single-process task engine: worker queues, write-once futures, joins.

Tasks are plain callables placed on per-worker FIFO queues (round-robin unless
a queue is named).  A future is a write-once cell addressed by an integer GID.
Reading an unset future never blocks: the reader hands over a continuation
which is queued as a new task when the value arrives, so a waiting reader
holds no worker.

    with Engine(EngineConfig(workers=4)) as eng:
        g = eng.future_new()
        eng.future_get(g, print)
        eng.spawn(eng.future_set, g, 42)
        eng.quiesce()
"""
from __future__ import annotations

import statistics
import threading
import time
from collections import deque
from dataclasses import dataclass, fields
from operator import itemgetter
from typing import Any, Callable, NewType, Sequence

import numpy as np

Gid = NewType("Gid", int)

_EMPTY = object()


class EngineError(RuntimeError):
    pass


class ConfigError(EngineError, ValueError):
    pass


class QueueRangeError(EngineError, IndexError):
    pass


class ResolutionError(EngineError, KeyError):
    def __str__(self):
        return f"unknown gid {self.args[0]}"


class SingleAssignmentError(EngineError):
    pass


class DeadlockError(EngineError):
    """Work ran out while readers were still waiting on unset futures."""

    def __init__(self, gids: Sequence[int]):
        self.gids = sorted(gids)
        shown = ", ".join(map(str, self.gids[:20]))
        more = "" if len(self.gids) <= 20 else f", ... ({len(self.gids)} total)"
        super().__init__(f"deadlock: unsatisfied gids [{shown}{more}]")


class TaskError(EngineError):
    pass


@dataclass(frozen=True)
class EngineConfig:
    workers: int = 1
    placement: str = "round_robin"
    stealing: bool = False
    profile_spawn: bool = False

    def __post_init__(self):
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers!r}")
        if self.placement != "round_robin":
            raise ConfigError(f"unsupported placement {self.placement!r}")


@dataclass(frozen=True)
class EngineStats:
    tasks_spawned: int = 0
    tasks_completed: int = 0
    suspensions: int = 0
    sets: int = 0
    gets: int = 0
    joins: int = 0
    steals: int = 0
    spawn_median_ns: float | None = None
    spawn_p95_ns: float | None = None
    per_queue: tuple[int, ...] = ()

    def as_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "per_queue":
                v = ",".join(map(str, v))
            lines.append(f"{f.name}={'' if v is None else v}")
        return "\n".join(lines)

    def __sub__(self, other: "EngineStats") -> "EngineStats":
        return EngineStats(
            tasks_spawned=self.tasks_spawned - other.tasks_spawned,
            tasks_completed=self.tasks_completed - other.tasks_completed,
            suspensions=self.suspensions - other.suspensions,
            sets=self.sets - other.sets,
            gets=self.gets - other.gets,
            joins=self.joins - other.joins,
            steals=self.steals - other.steals,
            spawn_median_ns=self.spawn_median_ns,
            spawn_p95_ns=self.spawn_p95_ns,
            per_queue=tuple(a - b for a, b in zip(self.per_queue, other.per_queue)),
        )


class Task:
    __slots__ = ("id", "action", "args", "continuation", "home_queue")

    def __init__(self, id, action, args, continuation, home_queue):
        self.id = id
        self.action = action
        self.args = args
        self.continuation = continuation
        self.home_queue = home_queue


class _Join:
    __slots__ = ("gids", "action", "remaining")

    def __init__(self, gids, action, remaining):
        self.gids = gids
        self.action = action
        self.remaining = remaining


def _gather(gids, table) -> tuple:
    if len(gids) == 1:
        return (table[gids[0]],)
    return itemgetter(*gids)(table)


class Engine:
    def __init__(self, config: EngineConfig | None = None, **kw):
        if config is None:
            config = EngineConfig(**kw)
        self.config = config
        w = config.workers
        self._lock = threading.Lock()
        self._idle = threading.Condition(self._lock)
        self._queues = [deque() for _ in range(w)]
        self._cvs = [threading.Condition() for _ in range(w)]
        self._sleeping = [False] * w
        self._rr = 0
        self._next_task = 0
        self._pending = 0
        self._placed = [0] * w
        # registry; slot 0 is never a valid gid
        self._values: list = [_EMPTY]
        self._ready = bytearray(1)
        self._waiters: dict[int, list] = {}
        self._c = dict(spawned=0, completed=0, suspensions=0, sets=0, gets=0, joins=0, steals=0)
        self._spawn_ns: list[int] = []
        self._errors: list[BaseException] = []
        self._shutdown = False
        self._local = threading.local()
        self._threads = [
            threading.Thread(target=self._worker, args=(k,), name=f"bhflow-worker-{k}", daemon=True)
            for k in range(w)
        ]
        for t in self._threads:
            t.start()

    # -- lifecycle ---------------------------------------------------------

    @property
    def workers(self) -> int:
        return self.config.workers

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()

    def shutdown(self):
        if self._shutdown:
            return
        self._shutdown = True
        for cv in self._cvs:
            with cv:
                cv.notify_all()
        if not self.in_task():
            for t in self._threads:
                t.join()

    def in_task(self) -> bool:
        return getattr(self._local, "worker", None) is not None

    def current_worker(self) -> int | None:
        """Index of the worker running the calling task, else ``None``."""
        return getattr(self._local, "worker", None)

    # -- tasks -------------------------------------------------------------

    def spawn(self, action: Callable, *args, queue: int | None = None, then: Callable | None = None) -> int:
        """Queue ``action(*args)``; ``then`` receives its return value in the same task."""
        if self._shutdown:
            raise EngineError("engine is shut down")
        if queue is not None and not 0 <= queue < self.config.workers:
            raise QueueRangeError(f"queue {queue} out of range for {self.config.workers} workers")
        if self.config.profile_spawn:
            t0 = time.perf_counter_ns()
            with self._lock:
                tid = self._spawn_locked(action, args, queue, then)
            self._spawn_ns.append(time.perf_counter_ns() - t0)
            return tid
        with self._lock:
            return self._spawn_locked(action, args, queue, then)

    def _spawn_locked(self, action, args, queue=None, then=None) -> int:
        w = self.config.workers
        if queue is None:
            queue = self._rr
            self._rr = (queue + 1) % w
        tid = self._next_task
        self._next_task = tid + 1
        self._pending += 1
        self._c["spawned"] += 1
        self._placed[queue] += 1
        self._queues[queue].append(Task(tid, action, args, then, queue))
        if self._sleeping[queue]:
            cv = self._cvs[queue]
            with cv:
                cv.notify()
        return tid

    def _worker(self, k: int):
        self._local.worker = k
        q = self._queues[k]
        stealing = self.config.stealing
        cv = self._cvs[k]
        while True:
            try:
                task = q.popleft()
            except IndexError:
                task = self._steal(k) if stealing else None
                if task is None:
                    with cv:
                        self._sleeping[k] = True
                        while not q and not self._shutdown:
                            cv.wait(0.001 if stealing else None)
                            if stealing:
                                break
                        self._sleeping[k] = False
                    if self._shutdown and not q:
                        return
                    continue
            try:
                r = task.action(*task.args)
                if task.continuation is not None:
                    task.continuation(r)
            except BaseException as e:  # reported at quiesce
                with self._lock:
                    self._errors.append(e)
            with self._lock:
                self._c["completed"] += 1
                self._pending -= 1
                if self._pending == 0:
                    self._idle.notify_all()

    def _steal(self, k: int):
        w = self.config.workers
        for d in range(1, w):
            try:
                task = self._queues[(k + d) % w].pop()
            except IndexError:
                continue
            with self._lock:
                self._c["steals"] += 1
            return task
        return None

    def quiesce(self) -> EngineStats:
        """Block until every queue is drained and no task is running."""
        if self.in_task():
            raise EngineError("quiesce called from inside a task")
        with self._lock:
            while self._pending:
                self._idle.wait()
            errors, self._errors = self._errors, []
            stuck = [g for g, ws in self._waiters.items() if ws]
        if errors:
            raise TaskError(f"{len(errors)} task(s) failed; first: {errors[0]!r}") from errors[0]
        if stuck:
            raise DeadlockError(stuck)
        return self.stats()

    def stats(self) -> EngineStats:
        with self._lock:
            c = dict(self._c)
            placed = tuple(self._placed)
            samples = list(self._spawn_ns)
        med = p95 = None
        if samples:
            med = float(statistics.median(samples))
            p95 = float(statistics.quantiles(samples, n=20)[-1]) if len(samples) > 1 else float(samples[0])
        return EngineStats(
            tasks_spawned=c["spawned"],
            tasks_completed=c["completed"],
            suspensions=c["suspensions"],
            sets=c["sets"],
            gets=c["gets"],
            joins=c["joins"],
            steals=c["steals"],
            spawn_median_ns=med,
            spawn_p95_ns=p95,
            per_queue=placed,
        )

    # -- futures -----------------------------------------------------------

    def future_new(self) -> Gid:
        with self._lock:
            gid = len(self._values)
            self._values.append(_EMPTY)
            self._ready.append(0)
        return Gid(gid)

    def futures_new(self, count: int) -> range:
        """Allocate ``count`` consecutive empty cells."""
        with self._lock:
            first = len(self._values)
            self._values.extend([_EMPTY] * count)
            self._ready.extend(bytes(count))
        return range(first, first + count)

    def _check(self, gid):
        if not 0 < gid < len(self._values):
            raise ResolutionError(gid)

    def is_set(self, gid: Gid) -> bool:
        with self._lock:
            self._check(gid)
            return bool(self._ready[gid])

    def value(self, gid: Gid) -> Any:
        """Payload of a set cell (not a suspension point; raises if unset)."""
        with self._lock:
            self._check(gid)
            if not self._ready[gid]:
                raise EngineError(f"gid {gid} is not set")
            return self._values[gid]

    def future_set(self, gid: Gid, payload: Any) -> None:
        with self._lock:
            self._check(gid)
            if self._ready[gid]:
                raise SingleAssignmentError(f"gid {gid} already set")
            self._values[gid] = payload
            self._ready[gid] = 1
            self._c["sets"] += 1
            waiters = self._waiters.pop(gid, None)
            if waiters:
                for w in waiters:
                    if type(w) is _Join:
                        w.remaining -= 1
                        if w.remaining == 0:
                            self._spawn_locked(w.action, (_gather(w.gids, self._values),))
                    else:
                        self._spawn_locked(w, (payload,))

    def future_get(self, gid: Gid, continuation: Callable[[Any], Any]) -> None:
        """Run ``continuation(payload)`` as a task once ``gid`` is set."""
        with self._lock:
            self._check(gid)
            self._c["gets"] += 1
            if self._ready[gid]:
                self._spawn_locked(continuation, (self._values[gid],))
            else:
                self._c["suspensions"] += 1
                self._waiters.setdefault(gid, []).append(continuation)

    def when_all(self, gids: Sequence[int], action: Callable[[tuple], Any]) -> None:
        """Queue ``action(payloads)`` once every gid is set; payloads in ``gids`` order.

        ``gids`` may be a list or an integer numpy array.
        """
        if isinstance(gids, np.ndarray):
            return self._when_all_array(gids, action)
        gids = list(gids)
        with self._lock:
            self._c["joins"] += 1
            if not gids:
                self._spawn_locked(action, ((),))
                return
            n = len(self._values)
            if min(gids) < 1 or max(gids) >= n:
                raise ResolutionError(next(g for g in gids if not 0 < g < n))
            if 0 not in _gather(gids, self._ready):
                self._spawn_locked(action, (_gather(gids, self._values),))
                return
            self._register_join(gids, action)

    def _when_all_array(self, gids: np.ndarray, action) -> None:
        with self._lock:
            self._c["joins"] += 1
            if gids.size == 0:
                self._spawn_locked(action, ((),))
                return
            n = len(self._values)
            lo, hi = gids.min(), gids.max()
            if lo < 1 or hi >= n:
                raise ResolutionError(int(lo if lo < 1 else hi))
            ready = np.frombuffer(self._ready, dtype=np.uint8)[gids]
            glist = gids.tolist()
            if ready.all():
                self._spawn_locked(action, (_gather(glist, self._values),))
                return
            self._register_join(glist, action)

    def _register_join(self, gids: list, action) -> None:
        missing = {g for g in gids if not self._ready[g]}
        join = _Join(gids, action, len(missing))
        for g in missing:
            self._waiters.setdefault(g, []).append(join)


def measure_spawn_overhead(n: int = 100_000, workers: int = 1) -> dict:
    """Spawn ``n`` no-op tasks; report per-spawn cost and spawn+dispatch throughput."""
    with Engine(EngineConfig(workers=workers, profile_spawn=True)) as eng:
        noop = int
        t0 = time.perf_counter_ns()
        for _ in range(n):
            eng.spawn(noop)
        stats = eng.quiesce()
        total = time.perf_counter_ns() - t0
    return {
        "tasks": n,
        "spawn_median_ns": stats.spawn_median_ns,
        "spawn_p95_ns": stats.spawn_p95_ns,
        "spawn_dispatch_mean_ns": total / n,
    }
