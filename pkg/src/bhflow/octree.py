"""Barnes-Hut octree, acceptance test, interaction lists and the direct-sum oracle.

Particles are carried as arrays: ``pos`` with shape ``(N, 3)`` and ``mass``
with shape ``(N,)``.  :class:`Particle` exists for the file format and for
small hand-written cases; :func:`as_arrays` converts.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import _kernels as K

PAD = 1.001
MIN_HALF_WIDTH = 1e-9


class DuplicatePositionError(ValueError):
    def __init__(self, i: int, j: int):
        super().__init__(f"particles {j} and {i} cannot be separated (duplicate positions?)")
        self.indices = (j, i)


class SingularForceError(ArithmeticError):
    pass


@dataclass(frozen=True)
class Particle:
    index: int
    mass: float
    position: tuple[float, float, float]
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class ForceParams:
    g_const: float = 1.0
    softening: float = 1e-2

    def __post_init__(self):
        if not self.g_const > 0:
            raise ValueError("g_const must be positive")
        if not self.softening >= 0:
            raise ValueError("softening must be non-negative")

    @property
    def eps2(self) -> float:
        return self.softening * self.softening


@dataclass(frozen=True)
class Cube:
    center: tuple[float, float, float]
    half_width: float

    def __post_init__(self):
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")

    @property
    def side(self) -> float:
        return 2.0 * self.half_width

    def contains(self, p) -> bool:
        """Half-open membership, lower bound inclusive on every axis."""
        h = self.half_width
        return all(c - h <= x < c + h for c, x in zip(self.center, p))


class Source(NamedTuple):
    mass: float
    com: tuple[float, float, float]
    node_id: int


def as_arrays(particles: Sequence[Particle]):
    """``(mass, pos, vel)`` arrays from a particle list (order preserved)."""
    mass = np.array([p.mass for p in particles], dtype=float)
    pos = np.array([p.position for p in particles], dtype=float).reshape(-1, 3)
    vel = np.array([p.velocity for p in particles], dtype=float).reshape(-1, 3)
    return mass, pos, vel


def bounds(pos) -> Cube:
    pos = np.asarray(pos, dtype=float).reshape(-1, 3)
    if len(pos) == 0:
        raise ValueError("bounds of an empty particle set")
    lo = pos.min(axis=0)
    hi = pos.max(axis=0)
    center = 0.5 * (lo + hi)
    half = max(0.5 * float((hi - lo).max()) * PAD, MIN_HALF_WIDTH)
    return Cube(tuple(float(c) for c in center), half)


@dataclass
class OctreeNode:
    """Read-only view of one node of an :class:`Octree`."""

    node_id: int
    cube: Cube
    kind: str  # "internal" | "leaf" | "empty"
    children: tuple[int | None, ...]
    particle: int | None
    total_mass: float
    com: tuple[float, float, float]


@dataclass
class Octree:
    """Array-backed octree.  Node 0 is the root; children have larger ids."""

    center: np.ndarray
    half: np.ndarray
    child: np.ndarray
    kind: np.ndarray
    leaf: np.ndarray
    depth: np.ndarray
    n_particles: int
    node_mass: np.ndarray | None = None
    com: np.ndarray | None = None
    _order: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.kind)

    @property
    def has_moments(self) -> bool:
        return self.node_mass is not None

    @property
    def root(self) -> OctreeNode:
        return self.node(0)

    def node(self, node_id: int) -> OctreeNode:
        k = int(self.kind[node_id])
        kind = {K.EMPTY: "empty", K.LEAF: "leaf", K.INTERNAL: "internal"}[k]
        kids = tuple(int(c) if c >= 0 else None for c in self.child[node_id])
        if self.has_moments:
            m = float(self.node_mass[node_id])
            com = tuple(float(x) for x in self.com[node_id])
        else:
            m, com = 0.0, (0.0, 0.0, 0.0)
        return OctreeNode(
            node_id=node_id,
            cube=Cube(tuple(float(x) for x in self.center[node_id]), float(self.half[node_id])),
            kind=kind,
            children=kids,
            particle=int(self.leaf[node_id]) if k == K.LEAF else None,
            total_mass=m,
            com=com,
        )

    def preorder(self) -> np.ndarray:
        """Node ids in depth-first order, children visited in octant order."""
        if self._order is None:
            self._order = K.preorder(self.child, self.kind)
        return self._order

    def leaf_of(self) -> np.ndarray:
        """Map particle index -> leaf node id."""
        out = np.full(self.n_particles, -1, dtype=np.int64)
        leaves = np.flatnonzero(self.kind == K.LEAF)
        out[self.leaf[leaves]] = leaves
        return out


def build_tree(pos, root: Cube | None = None) -> Octree:
    """Recursive octant subdivision until every leaf holds one particle."""
    pos = np.ascontiguousarray(pos, dtype=float).reshape(-1, 3)
    if root is None:
        root = bounds(pos)
    center, half, child, kind, leaf, depth, i, j = K.build_tree(
        pos, np.asarray(root.center, dtype=float), float(root.half_width)
    )
    if i >= 0:
        raise DuplicatePositionError(int(i), int(j))
    return Octree(center, half, child, kind, leaf, depth, len(pos))


def compute_moments(tree: Octree, pos, mass) -> Octree:
    pos = np.ascontiguousarray(pos, dtype=float).reshape(-1, 3)
    tree.node_mass, tree.com = K.compute_moments(
        tree.child, tree.kind, tree.leaf, pos, np.ascontiguousarray(mass, dtype=float)
    )
    return tree


def make_tree(pos, mass) -> Octree:
    """bounds + build_tree + compute_moments."""
    return compute_moments(build_tree(pos, bounds(pos)), pos, mass)


def mac_accept(node: OctreeNode, target, theta: float) -> bool:
    """True if ``node`` may stand in for its particles as seen from ``target``."""
    if theta < 0:
        raise ValueError("theta must be non-negative")
    return bool(K.mac_accept(node.cube.side, np.asarray(node.com, float), np.asarray(target, float), float(theta)))


def _require_moments(tree: Octree):
    if not tree.has_moments:
        raise ValueError("compute_moments must run before traversal")


def interaction_nodes(tree: Octree, pos, i: int, theta: float) -> np.ndarray:
    """Node ids contributing to particle ``i``, in depth-first octant order."""
    _require_moments(tree)
    if theta < 0:
        raise ValueError("theta must be non-negative")
    pos = np.asarray(pos, dtype=float)
    return K.interaction_list(i, pos[i], float(theta), tree.child, tree.kind, tree.leaf, tree.half, tree.com)


def interaction_lists(tree: Octree, pos, theta: float, indices=None):
    """``(offsets, node_ids)`` in CSR layout for every index in ``indices``."""
    _require_moments(tree)
    pos = np.ascontiguousarray(pos, dtype=float)
    if indices is None:
        indices = np.arange(len(pos), dtype=np.int64)
    return K.interaction_lists(
        np.asarray(indices, dtype=np.int64), pos, float(theta), tree.child, tree.kind, tree.leaf, tree.half, tree.com
    )


def interaction_list(tree: Octree, pos, i: int, theta: float) -> list[Source]:
    nodes = interaction_nodes(tree, pos, i, theta)
    return [
        Source(float(tree.node_mass[n]), tuple(float(x) for x in tree.com[n]), int(n)) for n in nodes
    ]


def accel_from_sources(target, sources: Sequence[Source], params: ForceParams = ForceParams()) -> np.ndarray:
    """Softened Newtonian acceleration at ``target`` from the given sources.

    The per-source terms are summed with correct rounding, so the result does
    not depend on the order of ``sources``.
    """
    rows = np.array([(s.mass, *s.com) for s in sources], dtype=float).reshape(-1, 4)
    acc, status = K.accel_from_rows(np.asarray(target, dtype=float), rows, params.g_const, params.eps2)
    if status:
        raise SingularForceError("coincident source with zero softening")
    return acc


def accel_direct(pos, mass, i: int, params: ForceParams = ForceParams()) -> np.ndarray:
    """O(N) pairwise sum on particle ``i`` over all ``j != i`` in ascending ``j``."""
    pos = np.ascontiguousarray(pos, dtype=float)
    if not 0 <= i < len(pos):
        raise IndexError(i)
    acc, status = K.direct_accel(pos, np.ascontiguousarray(mass, dtype=float), i, params.g_const, params.eps2)
    if status:
        raise SingularForceError(f"particle {i} coincides with another and softening is zero")
    return acc


def accel_direct_all(pos, mass, params: ForceParams = ForceParams(), indices=None) -> np.ndarray:
    pos = np.ascontiguousarray(pos, dtype=float)
    mass = np.ascontiguousarray(mass, dtype=float)
    idx = range(len(pos)) if indices is None else indices
    return np.array([accel_direct(pos, mass, int(i), params) for i in idx]).reshape(-1, 3)
