"""
Sudden-quench sensing.

An initial Slater state is evolved with H(V_f) and with H(V_f + dV); both legs
start from the same state, so only the quench Hamiltonian carries the
parameter. Time-dependent QFI comes either from the fidelity between the legs
or, independently, from the variance of the time-averaged generator

    F_Q(t) = 4 t^2 Var_psi0( (1/t) int_0^t H_2(t') dt' ).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import freefermion as ff
from .metrology import (FDConfig, LinearObservable, _central_slope, _fidelity_fisher,
                        ofi_from_slope)
from .model import LatticeSpec, SingleParticleHamiltonian, build_hamiltonian

TRANSIENT_WINDOW = (0.05, 0.8)
SHORT_TRANSIENT_WINDOW = (0.01, 0.1)
LONG_TIME_WINDOW = (5.0, 20.0)


@dataclass(frozen=True)
class GroundStateInit:
    V: float
    n_f: int


@dataclass(frozen=True)
class CdwProduct:
    """|1010...>: particles on sites 1, 3, 5, ..."""


@dataclass(frozen=True)
class QuenchProtocol:
    spec: LatticeSpec
    initial: GroundStateInit | CdwProduct
    V_f: float
    times: tuple[float, ...] = ()
    cfg: FDConfig = FDConfig()

    def __post_init__(self):
        ts = tuple(float(t) for t in self.times)
        if any(t < 0 for t in ts) or any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("times must be nonnegative and strictly increasing")
        object.__setattr__(self, "times", ts)

    def initial_state(self) -> ff.SlaterState:
        if isinstance(self.initial, CdwProduct):
            return cdw_product_state(self.spec.L)
        return ff.ground_state(self.spec, self.initial.V, self.initial.n_f)


def cdw_product_state(L: int) -> ff.SlaterState:
    if L < 1:
        raise ValueError("L must be >= 1")
    occupied = np.arange(0, L, 2)  # 0-based rows for sites 1, 3, 5, ...
    phi = np.zeros((L, occupied.size))
    phi[occupied, np.arange(occupied.size)] = 1.0
    return ff.SlaterState(phi)


def evolve_slater(state: ff.SlaterState, H_f: SingleParticleHamiltonian | ff.SpectralDecomposition,
                  t: float) -> ff.SlaterState:
    """exp(-i H_f t) applied to every occupied orbital."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    sd = H_f if isinstance(H_f, ff.SpectralDecomposition) else ff.diagonalize(H_f)
    if t == 0:
        return ff.SlaterState(state.orbitals.astype(complex))
    Q = sd.orbitals
    return ff.SlaterState(Q @ (np.exp(-1j * sd.energies * t)[:, None] * (Q.T @ state.orbitals)))


def averaging_kernel(x: np.ndarray) -> np.ndarray:
    """(e^{ix} - 1) / (ix), equal to 1 at x = 0."""
    x = np.asarray(x, dtype=float)
    out = np.ones_like(x, dtype=complex)
    nz = np.abs(x) > 1e-8
    out[nz] = np.expm1(1j * x[nz]) / (1j * x[nz])
    small = ~nz
    # series 1 + ix/2 - x^2/6 keeps the kernel smooth near 0
    out[small] = 1 + 0.5j * x[small] - x[small] ** 2 / 6
    return out


class QuenchEngine:
    """Caches spectra of H(V) and the initial state for one protocol.

    Every (protocol, t) evaluation is independent; the cached spectral data is
    read-only once built.
    """

    def __init__(self, proto: QuenchProtocol):
        self.proto = proto
        self.spec = proto.spec
        self.psi0 = proto.initial_state()
        self._spectra: dict[float, ff.SpectralDecomposition] = {}
        self._coeffs: dict[float, np.ndarray] = {}

    @property
    def n_f(self) -> int:
        return self.psi0.n_f

    def spectrum(self, V: float) -> ff.SpectralDecomposition:
        if V not in self._spectra:
            self._spectra[V] = ff.diagonalize(build_hamiltonian(self.spec, V))
        return self._spectra[V]

    def state(self, V: float, t: float) -> ff.SlaterState:
        sd = self.spectrum(V)
        if V not in self._coeffs:
            self._coeffs[V] = sd.orbitals.T @ self.psi0.orbitals
        if t == 0:
            return ff.SlaterState(self.psi0.orbitals.astype(complex))
        return ff.SlaterState(sd.orbitals @ (np.exp(-1j * sd.energies * t)[:, None] * self._coeffs[V]))

    def correlation(self, V: float, t: float) -> ff.CorrelationMatrix:
        return ff.correlation_matrix(self.state(V, t))

    def fidelity(self, t: float, dV: float | None = None) -> float:
        dV = self.proto.cfg.delta_V if dV is None else dV
        Vf = self.proto.V_f
        return 1.0 - ff.slater_infidelity(self.state(Vf, t), self.state(Vf + dV, t))

    def qfi(self, t: float) -> float:
        Vf = self.proto.V_f
        infid = lambda v, w: ff.slater_infidelity(self.state(v, t), self.state(w, t))
        return _fidelity_fisher(infid, Vf, self.proto.cfg).value

    def generator(self, t: float) -> np.ndarray:
        """Time-averaged H_2 over [0, t] as an L x L site-basis matrix."""
        sd = self.spectrum(self.proto.V_f)
        h2 = sd.to_eigenbasis(self.spec.potential)
        gaps = sd.energies[:, None] - sd.energies[None, :]
        avg = h2 * averaging_kernel(gaps * t)
        Q = sd.orbitals
        return Q @ avg @ Q.T

    def generator_qfi(self, t: float) -> float:
        if t <= 0:
            return 0.0
        C0 = ff.correlation_matrix(self.psi0)
        return 4.0 * t * t * ff.variance_onebody(C0, self.generator(t))

    def ofi(self, t: float, obs: LinearObservable) -> float:
        Vf = self.proto.V_f
        cfg = self.proto.cfg
        mean_at = lambda v: ff.expectation_linear(self.correlation(v, t), obs)
        slope, _ = _central_slope(mean_at, Vf, cfg.delta_V, cfg.richardson)
        C = self.correlation(Vf, t)
        var = ff.variance_linear(C, obs)
        return ofi_from_slope(slope, var, scale=abs(ff.expectation_linear(C, obs)))


def dynamic_fidelity(proto: QuenchProtocol, t: float, dV: float | None = None) -> float:
    """|<psi(V_f, t)|psi(V_f + dV, t)>| from a shared initial state."""
    return QuenchEngine(proto).fidelity(t, dV)


def dynamic_qfi(proto: QuenchProtocol, t: float) -> float:
    return QuenchEngine(proto).qfi(t)


def generator_variance_qfi(proto: QuenchProtocol, t: float) -> float:
    return QuenchEngine(proto).generator_qfi(t)


def dynamic_ofi(proto: QuenchProtocol, t: float, obs: LinearObservable) -> float:
    return QuenchEngine(proto).ofi(t, obs)


@dataclass
class QuenchSeries:
    L: int
    n_f: int
    V_f: float
    times: np.ndarray
    F_Q: np.ndarray
    F_gen: np.ndarray
    F_O: dict[str, np.ndarray] = field(default_factory=dict)

    def columns(self) -> dict[str, np.ndarray]:
        cols = {"t": self.times, "F_Q": self.F_Q, "F_Q_generator": self.F_gen}
        cols.update({f"F_O:{k}": v for k, v in self.F_O.items()})
        return cols


def quench_series(proto: QuenchProtocol, observables: Sequence[LinearObservable] = ()) -> QuenchSeries:
    eng = QuenchEngine(proto)
    ts = np.asarray(proto.times, dtype=float)
    fq = np.array([eng.qfi(t) for t in ts])
    fg = np.array([eng.generator_qfi(t) for t in ts])
    fo = {o.label: np.array([eng.ofi(t, o) for t in ts]) for o in observables}
    return QuenchSeries(proto.spec.L, eng.n_f, proto.V_f, ts, fq, fg, fo)


def time_grid(transient: tuple[float, float] = TRANSIENT_WINDOW, n_transient: int = 16,
              t_max: float = 20.0, dt: float = 0.25) -> np.ndarray:
    """Geometric points across the transient window, then a linear grid to ``t_max``."""
    geo = np.geomspace(transient[0], transient[1], n_transient)
    lin = np.arange(np.ceil(transient[1] / dt) * dt, t_max + 0.5 * dt, dt)
    lin = lin[lin > transient[1] * (1 + 1e-12)]
    return np.concatenate([geo, lin])


def window_average(times, values, window: tuple[float, float] = LONG_TIME_WINDOW) -> float:
    """Plain mean of the samples with ``window[0] <= t <= window[1]``."""
    t = np.asarray(times)
    sel = (t >= window[0]) & (t <= window[1])
    if not sel.any():
        raise ValueError(f"no samples in window {window}")
    return float(np.mean(np.asarray(values)[sel]))
