"""
Aubry-André-Harper lattices on a ring.

    H(V) = -sum_i (c†_i c_{i+1} + h.c.) + V sum_i cos(2 pi i omega) n_i,    i = 1..L

Hopping sets the energy unit. Rational frequencies omega = p/q are Fibonacci
approximants of the inverse golden ratio; see :func:`fibonacci_lattice` for the
two size/frequency pairings that are supported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
V_CRITICAL = 2.0

# 'numerator': L = F_m, omega = F_m / F_{m+1}  (default, reproduces the
#              half-filling particle counts 11, 28, 45, 116, 189, ...)
# 'denominator': L = F_m, omega = F_{m-1} / F_m  (commensurate with the ring)
CONVENTIONS = ("numerator", "denominator")


def fibonacci_approximant(m: int) -> tuple[int, int]:
    """Return ``(F_{m-1}, F_m)`` with ``F_1 = F_2 = 1``.

    Python integers never overflow; ``m`` is capped only to keep the float ratio
    meaningful.
    """
    if m < 2:
        raise ValueError(f"m must be >= 2, got {m}")
    if m > 1400:
        raise OverflowError(f"F_{m} exceeds double-precision range")
    a, b = 1, 1  # F_1, F_2
    for _ in range(m - 2):
        a, b = b, a + b
    return a, b


def fibonacci_index(n: int) -> int:
    """Index ``m >= 2`` with ``F_m == n``; raises if ``n`` is not Fibonacci."""
    a, b, m = 1, 1, 2
    while b < n:
        a, b = b, a + b
        m += 1
    if b != n:
        raise ValueError(f"{n} is not a Fibonacci number")
    return m


def odd_fibonacci_sizes(max_size: int, min_size: int = 3) -> list[int]:
    sizes = []
    a, b = 1, 2
    while b <= max_size:
        if b % 2 == 1 and b >= min_size:
            sizes.append(b)
        a, b = b, a + b
    return sizes


@dataclass(frozen=True)
class LatticeSpec:
    """Periodic AAH ring with sites indexed from 1."""

    L: int
    omega_num: int
    omega_den: int
    phase_offset: float = 0.0
    boundary: str = field(default="periodic", init=False)
    index_origin: int = field(default=1, init=False)

    def __post_init__(self):
        if self.L < 1:
            raise ValueError(f"L must be positive, got {self.L}")
        if not (0 < self.omega_num < self.omega_den):
            raise ValueError(
                f"need 0 < omega_num < omega_den, got {self.omega_num}/{self.omega_den}"
            )
        if math.gcd(self.omega_num, self.omega_den) != 1:
            raise ValueError(f"{self.omega_num}/{self.omega_den} is not in lowest terms")

    @property
    def omega(self) -> float:
        return self.omega_num / self.omega_den

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.index_origin, self.index_origin + self.L)

    @cached_property
    def potential(self) -> np.ndarray:
        """cos(2 pi i omega + phase) for i = 1..L; the V-independent diagonal."""
        # integer product mod den keeps the argument exact for large i
        frac = (self.sites * self.omega_num) % self.omega_den / self.omega_den
        return np.cos(2.0 * np.pi * frac + self.phase_offset)

    @property
    def is_commensurate(self) -> bool:
        return (self.L * self.omega_num) % self.omega_den == 0


def fibonacci_lattice(L: int, convention: str = "numerator") -> LatticeSpec:
    """Lattice of Fibonacci size ``L`` with the matching rational frequency."""
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {CONVENTIONS}")
    m = fibonacci_index(L)
    if convention == "numerator":
        _, nxt = fibonacci_approximant(m + 1)
        return LatticeSpec(L, L, nxt)
    prev, _ = fibonacci_approximant(m)
    if prev == L:  # L = 1
        raise ValueError("denominator convention needs L >= 2")
    return LatticeSpec(L, prev, L)


@dataclass(frozen=True)
class SingleParticleHamiltonian:
    spec: LatticeSpec
    V: float
    matrix: np.ndarray

    @property
    def L(self) -> int:
        return self.spec.L


def hopping_matrix(L: int) -> np.ndarray:
    """Kinetic part: -1 on nearest-neighbour bonds of the ring."""
    h = np.zeros((L, L))
    if L == 1:
        return h
    idx = np.arange(L)
    nxt = (idx + 1) % L
    h[idx, nxt] = -1.0
    h[nxt, idx] = -1.0
    return h


def build_hamiltonian(spec: LatticeSpec, V: float) -> SingleParticleHamiltonian:
    if not np.isfinite(V):
        raise ValueError(f"V must be finite, got {V}")
    h = hopping_matrix(spec.L)
    h[np.diag_indices(spec.L)] = V * spec.potential
    h.setflags(write=False)
    return SingleParticleHamiltonian(spec, float(V), h)
