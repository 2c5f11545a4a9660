"""
Exact diagonalisation of the interacting chain at fixed particle number,

    H = -sum_i (c†_i c_{i+1} + h.c.) + V sum_i cos(2 pi i omega) n_i + U sum_i n_i n_{i+1},

on the same periodic ring as the free model. Basis states are bit patterns
(bit b = site b + 1) in increasing integer order; fermionic signs follow the
Jordan-Wigner ordering by site.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .metrology import FDConfig, FisherPoint, LinearObservable, _central_slope, ofi_from_slope, qfi_estimate
from .model import LatticeSpec

MAX_DIMENSION = 400_000
DENSE_CUTOFF = 600
RESIDUAL_TOL = 1e-8
DEGENERACY_TOL = 1e-10


class DimensionTooLarge(ValueError):
    pass


class DegenerateGroundState(ValueError):
    pass


class EigensolverFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class OccupationBasis:
    L: int
    n_f: int
    states: np.ndarray  # uint64, strictly increasing

    @property
    def dim(self) -> int:
        return self.states.shape[0]

    def index(self, patterns) -> np.ndarray:
        """Ordinal of each bit pattern; raises if a pattern is not in the basis."""
        patterns = np.asarray(patterns, dtype=np.uint64)
        idx = np.searchsorted(self.states, patterns)
        if np.any(idx >= self.dim) or np.any(self.states[np.minimum(idx, self.dim - 1)] != patterns):
            raise KeyError("pattern outside basis")
        return idx

    def occupations(self) -> np.ndarray:
        """dim x L array of 0/1 site occupations."""
        bits = np.arange(self.L, dtype=np.uint64)
        return ((self.states[:, None] >> bits[None, :]) & np.uint64(1)).astype(np.int8)


def build_basis(L: int, n_f: int, max_dim: int = MAX_DIMENSION) -> OccupationBasis:
    if not 0 <= n_f <= L or L > 62:
        raise ValueError(f"bad (L, n_f) = ({L}, {n_f})")
    dim = math.comb(L, n_f)
    if dim > max_dim:
        raise DimensionTooLarge(f"dimension {dim} exceeds cap {max_dim}")
    states = np.fromiter(
        (sum(1 << b for b in c) for c in itertools.combinations(range(L), n_f)),
        dtype=np.uint64, count=dim,
    )
    states.sort()
    return OccupationBasis(L, n_f, states)


@dataclass(frozen=True)
class SparseManyBodyHamiltonian:
    basis: OccupationBasis
    V: float
    U: float
    matrix: sp.csr_matrix

    @property
    def dim(self) -> int:
        return self.basis.dim


def _bonds(L: int) -> list[tuple[int, int]]:
    if L < 2:
        return []
    if L == 2:
        return [(0, 1)]
    return [(b, (b + 1) % L) for b in range(L)]


def hopping_part(basis: OccupationBasis) -> sp.csr_matrix:
    s = basis.states
    one = np.uint64(1)
    rows, cols, vals = [], [], []
    for x, y in _bonds(basis.L):
        lo, hi = min(x, y), max(x, y)
        bx = (s >> np.uint64(lo)) & one
        by = (s >> np.uint64(hi)) & one
        movable = bx != by
        src = s[movable]
        dst = src ^ ((one << np.uint64(lo)) | (one << np.uint64(hi)))
        between = ((one << np.uint64(hi)) - one) ^ ((one << np.uint64(lo + 1)) - one)
        parity = np.bitwise_count(src & between) & 1
        rows.append(basis.index(dst))
        cols.append(np.nonzero(movable)[0])
        vals.append(np.where(parity == 1, 1.0, -1.0))
    if not rows:
        return sp.csr_matrix((basis.dim, basis.dim))
    h = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(basis.dim, basis.dim))
    return h.tocsr()


def diagonal_parts(spec: LatticeSpec, basis: OccupationBasis) -> tuple[np.ndarray, np.ndarray]:
    """(sum_i cos(...) n_i, sum_i n_i n_{i+1}) for every basis state."""
    if basis.L != spec.L:
        raise ValueError("basis and lattice sizes differ")
    occ = basis.occupations().astype(float)
    pot = occ @ spec.potential
    nn = np.zeros(basis.dim)
    for x, y in _bonds(basis.L):
        nn += occ[:, x] * occ[:, y]
    return pot, nn


class ManyBodyModel:
    """Fixed pieces of H for one (lattice, n_f); H(V, U) is assembled on demand."""

    def __init__(self, spec: LatticeSpec, n_f: int, max_dim: int = MAX_DIMENSION):
        self.spec = spec
        self.basis = build_basis(spec.L, n_f, max_dim)
        self.kinetic = hopping_part(self.basis)
        self.potential, self.nn = diagonal_parts(spec, self.basis)

    def hamiltonian(self, V: float, U: float) -> SparseManyBodyHamiltonian:
        m = (self.kinetic + sp.diags(V * self.potential + U * self.nn)).tocsr()
        return SparseManyBodyHamiltonian(self.basis, float(V), float(U), m)


def build_hamiltonian_mb(spec: LatticeSpec, V: float, U: float,
                         basis: OccupationBasis) -> SparseManyBodyHamiltonian:
    pot, nn = diagonal_parts(spec, basis)
    m = (hopping_part(basis) + sp.diags(V * pot + U * nn)).tocsr()
    return SparseManyBodyHamiltonian(basis, float(V), float(U), m)


@dataclass(frozen=True)
class ManyBodyState:
    amplitudes: np.ndarray
    energy: float
    gap: float = float("inf")

    def weights(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


def _fix_gauge(v: np.ndarray) -> np.ndarray:
    j = int(np.argmax(np.abs(v)))
    return v * (np.sign(v[j]) if v[j] != 0 else 1.0)


def ground_state_mb(H: SparseManyBodyHamiltonian, seed: int = 0, maxiter: int | None = None,
                    degeneracy_tol: float = DEGENERACY_TOL) -> ManyBodyState:
    """Lowest eigenpair; Lanczos (ARPACK) above a small dense cutoff."""
    n = H.dim
    if n == 1:
        return ManyBodyState(np.ones(1), float(H.matrix[0, 0]))
    if n <= DENSE_CUTOFF:
        E, Q = scipy.linalg.eigh(H.matrix.toarray(), subset_by_index=[0, 1])
    else:
        v0 = np.random.default_rng(seed).standard_normal(n)
        try:
            E, Q = spla.eigsh(H.matrix, k=2, which="SA", v0=v0, tol=0.0, maxiter=maxiter)
        except spla.ArpackNoConvergence as exc:
            raise EigensolverFailure(str(exc)) from exc
        order = np.argsort(E)
        E, Q = E[order], Q[:, order]
    gap = float(E[1] - E[0])
    if gap < degeneracy_tol:
        raise DegenerateGroundState(f"ground level gap {gap:.2e}")
    v = _fix_gauge(Q[:, 0] / np.linalg.norm(Q[:, 0]))
    resid = float(np.linalg.norm(H.matrix @ v - E[0] * v))
    if resid > RESIDUAL_TOL:
        raise EigensolverFailure(f"residual {resid:.2e} above {RESIDUAL_TOL:.0e}")
    return ManyBodyState(v, float(E[0]), gap)


def diagonal_expectation(state: ManyBodyState, values: np.ndarray) -> tuple[float, float]:
    """Mean and variance of an operator diagonal in the occupation basis."""
    w = state.weights()
    mean = float(w @ values)
    var = float(w @ (values - mean) ** 2)
    return mean, var


def mb_fisher_point(spec: LatticeSpec, V: float, U: float, n_f: int,
                    observables: Sequence[LinearObservable] = (), cfg: FDConfig = FDConfig(),
                    model: ManyBodyModel | None = None) -> FisherPoint:
    """QFI from the phase-free overlap of ED ground states, OFI for diagonal observables."""
    model = model or ManyBodyModel(spec, n_f)
    cache: dict[float, ManyBodyState] = {}

    def gs(v):
        if v not in cache:
            cache[v] = ground_state_mb(model.hamiltonian(v, U))
        return cache[v]

    q = qfi_estimate(lambda v: gs(v).amplitudes, V, cfg)
    sub = replace(cfg, delta_V=q.delta_V, adaptive=False)
    occ = model.basis.occupations().astype(float)
    pt = FisherPoint(V=float(V), F_Q=q.value, L=spec.L, n_f=n_f,
                     delta_V_used=q.delta_V, stencil_error=q.stencil_error)
    for obs in observables:
        vals = occ @ obs.coefficients
        mean_at = lambda v, vals=vals: diagonal_expectation(gs(v), vals)[0]
        slope, _ = _central_slope(mean_at, V, sub.delta_V, sub.richardson)
        mean, var = diagonal_expectation(gs(V), vals)
        pt.expectations[obs.label] = mean
        pt.F_O[obs.label] = ofi_from_slope(slope, var, scale=abs(mean))
    return pt
