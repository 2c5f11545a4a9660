"""
Exact free-fermion engine.

States are Slater determinants stored as an ``L x n_f`` matrix ``Phi`` of
orthonormal orbitals. Everything else follows from the correlation matrix
``C_ij = <c†_i c_j> = (Phi* Phi^T)_ij``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .model import LatticeSpec, SingleParticleHamiltonian, build_hamiltonian

DEGENERACY_TOL = 1e-10
ORTHO_TOL = 1e-10


class DegenerateFermiLevel(ValueError):
    """Highest occupied and lowest empty level coincide; ground state not unique."""


class AmbiguousFilling(ValueError):
    """An eigenvalue sits on zero energy, so the negative-energy count is ill-defined."""


@dataclass(frozen=True)
class SpectralDecomposition:
    energies: np.ndarray  # ascending
    orbitals: np.ndarray  # columns are eigenvectors

    @property
    def L(self) -> int:
        return self.orbitals.shape[0]

    def propagator(self, t: float) -> np.ndarray:
        """exp(-i H t) as an L x L matrix."""
        Q = self.orbitals
        return (Q * np.exp(-1j * self.energies * t)) @ Q.conj().T

    def to_eigenbasis(self, op: np.ndarray) -> np.ndarray:
        """Matrix elements <k|op|l>; ``op`` may be a full matrix or a diagonal vector."""
        Q = self.orbitals
        if op.ndim == 1:
            return Q.conj().T @ (op[:, None] * Q)
        return Q.conj().T @ op @ Q


@dataclass(frozen=True)
class SlaterState:
    orbitals: np.ndarray

    def __post_init__(self):
        phi = np.asarray(self.orbitals)
        if phi.ndim == 1:
            phi = phi[:, None]
        if phi.ndim != 2 or not (1 <= phi.shape[1] <= phi.shape[0]):
            raise ValueError(f"orbitals must be L x n_f with 1 <= n_f <= L, got {phi.shape}")
        object.__setattr__(self, "orbitals", phi)

    @property
    def L(self) -> int:
        return self.orbitals.shape[0]

    @property
    def n_f(self) -> int:
        return self.orbitals.shape[1]

    def orthonormality_error(self) -> float:
        phi = self.orbitals
        return float(np.max(np.abs(phi.conj().T @ phi - np.eye(self.n_f))))

    def check(self, tol: float = ORTHO_TOL) -> "SlaterState":
        err = self.orthonormality_error()
        if err > tol:
            raise ValueError(f"orbitals not orthonormal (max deviation {err:.2e})")
        return self


@dataclass(frozen=True)
class CorrelationMatrix:
    C: np.ndarray

    @property
    def L(self) -> int:
        return self.C.shape[0]

    @property
    def density(self) -> np.ndarray:
        """<n_i> for each site."""
        return self.C.diagonal().real.copy()

    @property
    def n_f(self) -> float:
        return float(np.trace(self.C).real)

    @property
    def projector(self) -> np.ndarray:
        """G = C^T = Phi Phi†, the projector onto the occupied subspace."""
        return self.C.T


def diagonalize(H: SingleParticleHamiltonian | np.ndarray) -> SpectralDecomposition:
    """Dense symmetric eigensolve (LAPACK ``syevd``).

    Raises ``numpy.linalg.LinAlgError`` if LAPACK fails to converge.
    """
    h = H.matrix if isinstance(H, SingleParticleHamiltonian) else np.asarray(H)
    if not np.array_equal(h, h.conj().T):
        raise ValueError("Hamiltonian matrix is not Hermitian")
    E, Q = scipy.linalg.eigh(h, driver="evd")
    E.setflags(write=False)
    Q.setflags(write=False)
    return SpectralDecomposition(E, Q)


def spectrum(spec: LatticeSpec, V: float) -> SpectralDecomposition:
    return diagonalize(build_hamiltonian(spec, V))


def lowest_orbitals(sd: SpectralDecomposition, n_f: int, tol: float = DEGENERACY_TOL) -> SlaterState:
    """Fill the ``n_f`` lowest orbitals, refusing a degenerate Fermi level."""
    L = sd.orbitals.shape[0]
    if not 1 <= n_f <= L:
        raise ValueError(f"need 1 <= n_f <= L={L}, got {n_f}")
    if n_f < sd.energies.shape[0]:
        gap = sd.energies[n_f] - sd.energies[n_f - 1]
        if gap < tol:
            raise DegenerateFermiLevel(
                f"levels {n_f - 1} and {n_f} differ by {gap:.3e} < {tol:.0e}"
            )
    return SlaterState(np.array(sd.orbitals[:, :n_f]))


def ground_state(spec: LatticeSpec, V: float, n_f: int) -> SlaterState:
    """Slater determinant of the ``n_f`` lowest orbitals of H(V)."""
    L = spec.L
    if not 1 <= n_f <= L:
        raise ValueError(f"need 1 <= n_f <= L={L}, got {n_f}")
    h = build_hamiltonian(spec, V).matrix
    top = min(n_f, L - 1)
    # only the occupied levels plus one more are needed for the gap check
    E, Q = scipy.linalg.eigh(h, subset_by_index=[0, top], driver="evr")
    return lowest_orbitals(SpectralDecomposition(E, Q), n_f)


def negative_energy_count(spec: LatticeSpec, V: float, tol: float = DEGENERACY_TOL) -> int:
    E = spectrum(spec, V).energies
    near = np.abs(E) < tol
    if near.any():
        raise AmbiguousFilling(f"eigenvalue {E[near][0]:.3e} within {tol:.0e} of zero")
    return int(np.count_nonzero(E < 0))


def correlation_matrix(state: SlaterState) -> CorrelationMatrix:
    phi = state.orbitals
    return CorrelationMatrix(phi.conj() @ phi.T)


def _coefficients(obs) -> np.ndarray:
    return np.asarray(getattr(obs, "coefficients", obs), dtype=float)


def expectation_linear(C: CorrelationMatrix, obs, tol: float = 1e-10) -> float:
    """<sum_i o_i n_i> = sum_i o_i C_ii."""
    o = _coefficients(obs)
    if o.shape != (C.L,):
        raise ValueError(f"observable has length {o.shape}, lattice has {C.L} sites")
    val = np.dot(o, C.C.diagonal())
    if abs(val.imag) > tol * max(1.0, abs(val.real)):
        raise ValueError(f"expectation has imaginary part {val.imag:.2e}")
    return float(val.real)


def variance_linear(C: CorrelationMatrix, obs, tol: float = 1e-10) -> float:
    """Wick variance  sum_ij o_i o_j C_ij (delta_ij - C_ji)."""
    o = _coefficients(obs)
    if o.shape != (C.L,):
        raise ValueError(f"observable has length {o.shape}, lattice has {C.L} sites")
    c = C.C
    # sum_i o_i^2 C_ii - sum_ij o_i o_j |C_ij|^2
    var = float(np.dot(o * o, c.diagonal().real) - o @ (np.abs(c) ** 2) @ o)
    scale = max(1.0, float(np.dot(o * o, np.abs(c.diagonal()))))
    if var < -tol * scale:
        raise ArithmeticError(f"negative variance {var:.3e}")
    return max(var, 0.0)


def expectation_onebody(C: CorrelationMatrix, A: np.ndarray) -> complex:
    """<sum_ij A_ij c†_i c_j> = sum_ij A_ij C_ij."""
    return complex(np.sum(A * C.C))


def variance_onebody(C: CorrelationMatrix, A: np.ndarray) -> float:
    """Variance of a Hermitian one-body operator: Tr(A G A (1 - G)), G = C^T."""
    G = C.projector
    AG = A @ G
    var = np.trace(A @ AG) - np.trace(AG @ AG)
    return float(var.real)


def slater_overlap(A: SlaterState, B: SlaterState) -> complex:
    """<A|B> = det(Phi_A† Phi_B)."""
    if A.orbitals.shape != B.orbitals.shape:
        raise ValueError(f"shape mismatch {A.orbitals.shape} vs {B.orbitals.shape}")
    return complex(np.linalg.det(A.orbitals.conj().T @ B.orbitals))


def principal_sines(A: SlaterState, B: SlaterState) -> np.ndarray:
    """Sines of the principal angles between the two occupied subspaces."""
    if A.orbitals.shape != B.orbitals.shape:
        raise ValueError(f"shape mismatch {A.orbitals.shape} vs {B.orbitals.shape}")
    pa, pb = A.orbitals, B.orbitals
    resid = pb - pa @ (pa.conj().T @ pb)
    return np.clip(np.linalg.svd(resid, compute_uv=False), 0.0, 1.0)


def slater_infidelity(A: SlaterState, B: SlaterState) -> float:
    """1 - |<A|B>| from principal angles.

    |<A|B>| = prod_k cos(theta_k); going through the sines keeps full relative
    precision when the states are nearly identical, where ``1 - |det|`` would
    cancel catastrophically.
    """
    s = principal_sines(A, B)
    if np.any(s >= 1.0):
        return 1.0
    return float(-np.expm1(0.5 * np.sum(np.log1p(-s * s))))
