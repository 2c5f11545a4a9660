"""
Fisher-information estimators and the sensing observables.

All three estimators work from finite differences in the parameter ``V`` on a
symmetric stencil:

* QFI from the state fidelity,        F_Q = 8 (1 - |<psi(V)|psi(V+d)>|) / d^2
* CFI from the Bhattacharyya overlap,  F_C = 8 (1 - sum sqrt(p(V) p(V+d))) / d^2
* OFI from error propagation,         F_O = (d<O>/dV)^2 / Var(O)

The +d and -d legs are averaged, and by default a second evaluation at ``2d``
is used for one Richardson step. The difference between the two step sizes is
reported as the stencil error.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import freefermion as ff
from .model import LatticeSpec

CHAIN_SLACK = 1e-3


class StepTooSmall(ArithmeticError):
    pass


class StepTooLarge(ArithmeticError):
    pass


class DeterministicObservable(ArithmeticError):
    """Observable has zero variance but a nonzero slope; its OFI diverges."""


class DivergentCFI(ArithmeticError):
    """An outcome with zero probability has a nonzero derivative."""


# --------------------------------------------------------------------------
# observables and measurements


@dataclass(frozen=True)
class LinearObservable:
    """O = sum_i o_i n_i."""

    coefficients: np.ndarray
    label: str

    def __post_init__(self):
        o = np.asarray(self.coefficients, dtype=float)
        if o.ndim != 1 or not np.all(np.isfinite(o)):
            raise ValueError(f"{self.label}: coefficients must be a finite vector")
        o.setflags(write=False)
        object.__setattr__(self, "coefficients", o)

    def __len__(self):
        return self.coefficients.shape[0]


def cdw_observable(L: int, n_f: int) -> LinearObservable:
    """Even/odd imbalance sum_i (-1)^i n_i / n_f, sites numbered from 1."""
    sites = np.arange(1, L + 1)
    return LinearObservable((-1.0) ** sites / n_f, "cdw")


def h2_observable(spec: LatticeSpec) -> LinearObservable:
    """The modulation operator itself, sum_i cos(2 pi i omega) n_i."""
    return LinearObservable(spec.potential.copy(), "h2")


def ipr_observable(C: ff.CorrelationMatrix) -> LinearObservable:
    """sum_i <n_i> n_i with the weights frozen at the given state.

    The weights depend on the state, so this is a diagnostic only and is kept
    out of OFI sweeps.
    """
    return LinearObservable(C.density, "ipr")


def number_observable(L: int) -> LinearObservable:
    return LinearObservable(np.ones(L), "number")


@dataclass(frozen=True)
class MeasurementModel:
    """Coarse-graining of site occupations into outcome labels 0..K-1."""

    partition: np.ndarray
    label: str

    def __post_init__(self):
        p = np.asarray(self.partition, dtype=int)
        if p.ndim != 1 or p.size == 0 or p.min() < 0:
            raise ValueError("partition must assign every site a nonnegative label")
        p.setflags(write=False)
        object.__setattr__(self, "partition", p)

    @property
    def n_outcomes(self) -> int:
        return int(self.partition.max()) + 1

    def distribution(self, C: ff.CorrelationMatrix) -> np.ndarray:
        """Outcome probabilities of locating a particle, sum_{i in zeta} <n_i> / n_f."""
        if C.L != self.partition.size:
            raise ValueError(f"model covers {self.partition.size} sites, state has {C.L}")
        rho = C.density
        return np.bincount(self.partition, weights=rho, minlength=self.n_outcomes) / rho.sum()


def site_resolved(L: int) -> MeasurementModel:
    return MeasurementModel(np.arange(L), "site")


def parity_binned(L: int) -> MeasurementModel:
    """Two outcomes: particle on an odd site (label 0) or an even site (label 1)."""
    return MeasurementModel((np.arange(1, L + 1) + 1) % 2, "parity")


# --------------------------------------------------------------------------
# finite-difference machinery


@dataclass(frozen=True)
class FDConfig:
    delta_V: float = 1e-4
    adaptive: bool = False
    target_infidelity_range: tuple[float, float] = (1e-8, 1e-4)
    richardson: bool = True
    noise_floor: float = 1e-15
    max_rescales: int = 12
    stencil: str = field(default="central3", init=False)

    def __post_init__(self):
        if not self.delta_V > 0:
            raise ValueError(f"delta_V must be positive, got {self.delta_V}")
        lo, hi = self.target_infidelity_range
        if not 0 < lo < hi < 1:
            raise ValueError(f"bad target_infidelity_range {self.target_infidelity_range}")


@dataclass(frozen=True)
class FDEstimate:
    value: float
    delta_V: float
    stencil_error: float

    def __float__(self):
        return self.value


def _extrapolate(f_d: float, f_2d: float | None, richardson: bool) -> tuple[float, float]:
    if f_2d is None:
        return f_d, float("nan")
    err = abs(f_d - f_2d) / 3.0
    return (f_d + (f_d - f_2d) / 3.0 if richardson else f_d), err


def state_infidelity(a, b) -> float:
    """1 - |<a|b>| for Slater states or normalised state vectors."""
    if isinstance(a, ff.SlaterState):
        return ff.slater_infidelity(a, b)
    a = np.asarray(a).reshape(-1, 1)
    b = np.asarray(b).reshape(-1, 1)
    return ff.slater_infidelity(ff.SlaterState(a), ff.SlaterState(b))


def hellinger_infidelity(p: np.ndarray, q: np.ndarray) -> float:
    """1 - sum sqrt(p q), evaluated as half the squared Hellinger distance."""
    return 0.5 * float(np.sum((np.sqrt(p) - np.sqrt(q)) ** 2))


def _symmetric_infidelity(fn, V: float, d: float) -> float:
    return 0.5 * (fn(V, V + d) + fn(V, V - d))


def _fidelity_fisher(infid: Callable[[float, float], float], V: float, cfg: FDConfig) -> FDEstimate:
    d = cfg.delta_V
    lo, hi = cfg.target_infidelity_range
    x = _symmetric_infidelity(infid, V, d)
    if cfg.adaptive:
        for _ in range(cfg.max_rescales):
            if x > hi:
                d /= 4.0
            elif x < lo and d < 0.1:
                d = min(4.0 * d, 0.1)
            else:
                break
            x = _symmetric_infidelity(infid, V, d)
        if x > hi:
            raise StepTooLarge(f"infidelity {x:.2e} above {hi:.0e} even at dV={d:.2e}")
        if x <= cfg.noise_floor:
            return FDEstimate(0.0, d, 0.0)
    else:
        if x > hi:
            raise StepTooLarge(f"infidelity {x:.2e} above {hi:.0e} at dV={d:.2e}")
        if x < cfg.noise_floor:
            # distinguish a parameter-independent state from a step that is too fine
            if _symmetric_infidelity(infid, V, 0.1) < cfg.noise_floor:
                return FDEstimate(0.0, d, 0.0)
            raise StepTooSmall(f"infidelity {x:.2e} below noise floor at dV={d:.2e}")
    f_d = 8.0 * x / d**2
    f_2d = 8.0 * _symmetric_infidelity(infid, V, 2 * d) / (2 * d) ** 2 if cfg.richardson else None
    val, err = _extrapolate(f_d, f_2d, cfg.richardson)
    return FDEstimate(max(val, 0.0), d, err)


def qfi_estimate(state_at: Callable[[float], object], V: float, cfg: FDConfig = FDConfig()) -> FDEstimate:
    cache: dict[float, object] = {}

    def psi(v):
        if v not in cache:
            cache[v] = state_at(v)
        return cache[v]

    return _fidelity_fisher(lambda v, w: state_infidelity(psi(v), psi(w)), V, cfg)


def qfi_from_fidelity(state_at: Callable[[float], object], V: float, cfg: FDConfig = FDConfig()) -> float:
    """Pure-state QFI of the family ``state_at`` at ``V`` (F_Q = 4 chi_Q)."""
    return qfi_estimate(state_at, V, cfg).value


def _check_divergent(p0: np.ndarray, pp: np.ndarray, pm: np.ndarray, tol: float = 1e-14):
    zero = p0 <= tol
    if np.any(zero & (np.abs(pp - pm) > tol)):
        raise DivergentCFI("zero-probability outcome with nonzero derivative")


def cfi_estimate(dist_at: Callable[[float], np.ndarray], V: float, cfg: FDConfig = FDConfig()) -> FDEstimate:
    cache: dict[float, np.ndarray] = {}

    def p(v):
        if v not in cache:
            q = np.asarray(dist_at(v), dtype=float)
            if abs(q.sum() - 1.0) > 1e-10 or np.any(q < -1e-14):
                raise ValueError(f"distribution at V={v} is not normalised (sum={q.sum()})")
            cache[v] = np.clip(q, 0.0, None)
        return cache[v]

    d = cfg.delta_V
    _check_divergent(p(V), p(V + d), p(V - d))
    return _fidelity_fisher(lambda v, w: hellinger_infidelity(p(v), p(w)), V, cfg)


def cfi(dist_at: Callable[[float], np.ndarray], V: float, cfg: FDConfig = FDConfig()) -> float:
    """Classical Fisher information of the outcome distribution ``dist_at``."""
    return cfi_estimate(dist_at, V, cfg).value


def _central_slope(f: Callable[[float], float], V: float, d: float, richardson: bool) -> tuple[float, float]:
    s_d = (f(V + d) - f(V - d)) / (2 * d)
    if not richardson:
        return s_d, float("nan")
    s_2d = (f(V + 2 * d) - f(V - 2 * d)) / (4 * d)
    return _extrapolate(s_d, s_2d, True)


def ofi_from_slope(slope: float, var: float, rel_tol: float = 1e-12, scale: float = 1.0) -> float:
    if var <= 0.0:
        if abs(slope) <= rel_tol * max(scale, 1.0):
            return 0.0
        raise DeterministicObservable(f"zero variance with slope {slope:.3e}")
    return slope * slope / var


def ofi(mean_at: Callable[[float], float], var_at: Callable[[float], float], V: float,
        cfg: FDConfig = FDConfig()) -> float:
    """Error-propagation Fisher information (d<O>/dV)^2 / Var(O)."""
    slope, _ = _central_slope(mean_at, V, cfg.delta_V, cfg.richardson)
    return ofi_from_slope(slope, var_at(V), scale=abs(mean_at(V)))


def cramer_rao_bound(F: float, M: int = 1) -> float:
    """Smallest achievable variance 1/(M F) after ``M`` repetitions."""
    if not F > 0:
        raise ValueError(f"Fisher information must be positive, got {F}")
    if M < 1:
        raise ValueError(f"M must be a positive integer, got {M}")
    return 1.0 / (M * F)


# --------------------------------------------------------------------------
# adiabatic (ground-state) sweeps


@dataclass
class FisherPoint:
    V: float
    F_Q: float
    F_C: dict[str, float] = field(default_factory=dict)
    F_O: dict[str, float] = field(default_factory=dict)
    expectations: dict[str, float] = field(default_factory=dict)
    L: int = 0
    n_f: int = 0
    delta_V_used: float = 0.0
    stencil_error: float = 0.0

    def chain_violations(self, slack: float = CHAIN_SLACK) -> list[str]:
        """Labels of Cramér-Rao inequalities F_O <= F_C <= F_Q broken beyond ``slack``."""
        bad = []
        top = self.F_Q * (1 + slack)
        for k, v in self.F_C.items():
            if v > top:
                bad.append(f"F_C[{k}] > F_Q")
        # any classical measurement bounds the observable built from it
        ceiling = min([top] + [v * (1 + slack) for k, v in self.F_C.items() if k == "site"])
        for k, v in self.F_O.items():
            if v > ceiling:
                bad.append(f"F_O[{k}] > bound")
        return bad

    @property
    def chi_Q(self) -> float:
        return self.F_Q / 4.0


def fisher_point(spec: LatticeSpec, V: float, n_f: int,
                 observables: Sequence[LinearObservable] = (),
                 measurements: Sequence[MeasurementModel] = (),
                 cfg: FDConfig = FDConfig()) -> FisherPoint:
    """All estimators at one ``V`` for the ``n_f``-fermion ground state.

    Outcome distributions locate a single particle, so CFI is only reported
    for ``n_f == 1``.
    """
    states: dict[float, ff.SlaterState] = {}

    def state_at(v):
        if v not in states:
            states[v] = ff.ground_state(spec, v, n_f)
        return states[v]

    q = qfi_estimate(state_at, V, cfg)
    d = q.delta_V
    sub = replace(cfg, delta_V=d, adaptive=False)
    corr: dict[float, ff.CorrelationMatrix] = {}

    def C_at(v):
        if v not in corr:
            corr[v] = ff.correlation_matrix(state_at(v))
        return corr[v]

    pt = FisherPoint(V=float(V), F_Q=q.value, L=spec.L, n_f=n_f,
                     delta_V_used=d, stencil_error=q.stencil_error)
    if n_f == 1:
        for m in measurements:
            pt.F_C[m.label] = cfi_estimate(lambda v: m.distribution(C_at(v)), V, sub).value
    for obs in observables:
        mean_at = lambda v, o=obs: ff.expectation_linear(C_at(v), o)
        var_at = lambda v, o=obs: ff.variance_linear(C_at(v), o)
        pt.expectations[obs.label] = mean_at(V)
        pt.F_O[obs.label] = ofi(mean_at, var_at, V, sub)
    return pt


def _fisher_point_args(args):
    return fisher_point(*args)


def adiabatic_sweep(spec: LatticeSpec, n_f: int, V_grid: Iterable[float],
                    observables: Sequence[LinearObservable] = (),
                    measurements: Sequence[MeasurementModel] = (),
                    cfg: FDConfig = FDConfig(), workers: int = 1) -> list[FisherPoint]:
    grid = [float(v) for v in V_grid]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("V_grid must be strictly increasing")
    jobs = [(spec, v, n_f, tuple(observables), tuple(measurements), cfg) for v in grid]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            pts = list(pool.map(_fisher_point_args, jobs))
    else:
        pts = [fisher_point(*j) for j in jobs]
    return sorted(pts, key=lambda p: p.V)


def fisher_summary(points: Sequence[FisherPoint]) -> Mapping[str, np.ndarray]:
    """Column arrays (V, F_Q, F_C:<label>, F_O:<label>, <obs>) for tabular output."""
    cols: dict[str, list[float]] = {"V": [], "F_Q": []}
    for p in points:
        cols["V"].append(p.V)
        cols["F_Q"].append(p.F_Q)
        for k, v in p.F_C.items():
            cols.setdefault(f"F_C:{k}", []).append(v)
        for k, v in p.F_O.items():
            cols.setdefault(f"F_O:{k}", []).append(v)
        for k, v in p.expectations.items():
            cols.setdefault(f"mean:{k}", []).append(v)
    return {k: np.asarray(v) for k, v in cols.items()}
