"""Plummer-sphere initial conditions and the ``nbody v1`` particle file format."""
from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass

import numpy as np

from .octree import Particle

_MASK = (1 << 64) - 1
_TWO_M53 = 2.0 ** -53


class Rng:
    """splitmix64; bit-identical on every platform for a given seed."""

    def __init__(self, seed: int = 0):
        self.state = seed & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def next_unit(self) -> float:
        """Uniform on [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * _TWO_M53


@dataclass(frozen=True)
class PlummerConfig:
    n: int
    seed: int = 0
    scale_a: float = 1.0
    total_mass: float = 1.0
    rmax_cut: float = 20.0
    g_const: float = 1.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not self.scale_a > 0 or not self.rmax_cut > 0 or not self.total_mass > 0:
            raise ValueError("scale_a, rmax_cut and total_mass must be positive")


def _unit_vector(rng: Rng):
    cos_t = 1.0 - 2.0 * rng.next_unit()
    phi = 2.0 * math.pi * rng.next_unit()
    sin_t = math.sqrt(max(0.0, 1.0 - cos_t * cos_t))
    return sin_t * math.cos(phi), sin_t * math.sin(phi), cos_t


def _speed_fraction(rng: Rng) -> float:
    # rejection from q^2 (1 - q^2)^(7/2) under a flat 0.1 envelope
    while True:
        q = rng.next_unit()
        y = 0.1 * rng.next_unit()
        if y < q * q * (1.0 - q * q) ** 3.5:
            return q


def plummer_arrays(cfg: PlummerConfig):
    """``(mass, pos, vel)`` of a Plummer realization in its centre-of-mass frame."""
    rng = Rng(cfg.seed)
    a = cfg.scale_a
    n = cfg.n
    pos = np.empty((n, 3))
    vel = np.empty((n, 3))
    vscale = math.sqrt(cfg.g_const * cfg.total_mass / a)
    rmax = cfg.rmax_cut * a
    for i in range(n):
        while True:
            u = rng.next_unit()
            if u == 0.0:
                continue
            d = u ** (-2.0 / 3.0) - 1.0
            if d <= 0.0:
                continue
            r = a * d ** -0.5
            if r <= rmax:
                break
        ux, uy, uz = _unit_vector(rng)
        pos[i] = (r * ux, r * uy, r * uz)
        v_esc = math.sqrt(2.0) * (1.0 + (r / a) ** 2) ** -0.25 * vscale
        v = _speed_fraction(rng) * v_esc
        wx, wy, wz = _unit_vector(rng)
        vel[i] = (v * wx, v * wy, v * wz)
    mass = np.full(n, cfg.total_mass / n)
    mtot = math.fsum(mass)
    for arr in (pos, vel):
        shift = [math.fsum(mass * arr[:, k]) / mtot for k in range(3)]
        arr -= shift
    return mass, pos, vel


def plummer(cfg: PlummerConfig) -> list[Particle]:
    return to_particles(*plummer_arrays(cfg))


def to_particles(mass, pos, vel) -> list[Particle]:
    return [
        Particle(i, m, tuple(p), tuple(v))
        for i, (m, p, v) in enumerate(zip(mass.tolist(), pos.tolist(), vel.tolist()))
    ]


# -- nbody v1 text format ---------------------------------------------------

_HEADER = re.compile(r"^# nbody v1 N=(\d+)\s*$")


class ParticleFileError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


def write_arrays(path, mass, pos, vel) -> None:
    mass = np.asarray(mass, dtype=float)
    pos = np.asarray(pos, dtype=float).reshape(-1, 3)
    vel = np.asarray(vel, dtype=float).reshape(-1, 3)
    rows = np.column_stack([mass, pos, vel]).tolist()
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(f"# nbody v1 N={len(rows)}\n")
        fh.writelines(" ".join(format(x, ".17g") for x in row) + "\n" for row in rows)
    os.replace(tmp, path)


def write_particles(path, particles) -> None:
    mass = [p.mass for p in particles]
    pos = [p.position for p in particles]
    vel = [p.velocity for p in particles]
    write_arrays(path, mass, pos, vel)


def read_arrays(path):
    """Parse an ``nbody v1`` file into ``(mass, pos, vel)``."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParticleFileError(1, "empty file")
    m = _HEADER.match(lines[0])
    if not m:
        raise ParticleFileError(1, f"bad header {lines[0][:40]!r}")
    n = int(m.group(1))
    body = lines[1:]
    while body and not body[-1].strip():
        body.pop()
    if len(body) != n:
        where = len(lines) if len(body) < n else n + 2
        raise ParticleFileError(where, f"header declares {n} particles, found {len(body)}")
    data = np.empty((n, 7))
    for k, text in enumerate(body):
        lineno = k + 2
        parts = text.split()
        if len(parts) != 7:
            raise ParticleFileError(lineno, f"expected 7 fields, got {len(parts)}")
        try:
            vals = [float(x) for x in parts]
        except ValueError as e:
            raise ParticleFileError(lineno, str(e)) from None
        if not all(math.isfinite(v) for v in vals):
            raise ParticleFileError(lineno, "non-finite value")
        if vals[0] <= 0.0:
            raise ParticleFileError(lineno, "mass must be positive")
        data[k] = vals
    return data[:, 0].copy(), data[:, 1:4].copy(), data[:, 4:7].copy()


def read_particles(path) -> list[Particle]:
    return to_particles(*read_arrays(path))
