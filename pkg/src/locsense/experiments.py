"""
End-to-end pipelines shared by the CLI and the acceptance suite.

Each function computes one figure's worth of numbers for a single lattice size
(or a single interaction strength) so that the runner can farm sizes out to
workers and cache them independently.
"""

from __future__ import annotations

from dataclasses import asdict
from typing import Sequence

import numpy as np

from . import freefermion as ff
from . import manybody as mb
from .analysis import power_law_fit, refine_peak
from .dynamics import (CdwProduct, GroundStateInit, QuenchProtocol, TRANSIENT_WINDOW, quench_series,
                       time_grid)
from .metrology import (FDConfig, FisherPoint, cdw_observable, fisher_point, h2_observable,
                        parity_binned, site_resolved)
from .model import V_CRITICAL, LatticeSpec, fibonacci_lattice

PEAK_WINDOW = (1.5, 2.6)
PEAK_TOL = 1e-5


def _peak(evaluate, window, tol=PEAK_TOL, n=45):
    return refine_peak(evaluate, window[0], window[1], n=n, tol=tol)


def single_particle_peaks(L: int, cfg: FDConfig = FDConfig(), window=PEAK_WINDOW,
                          convention: str = "numerator") -> dict:
    """V* and peak heights of F_Q and F_cdw for one particle on a Fibonacci ring."""
    spec = fibonacci_lattice(L, convention)
    cdw = cdw_observable(L, 1)
    VQ, FQ = _peak(lambda v: fisher_point(spec, v, 1, (), (), cfg).F_Q, window)
    Vc, Fc = _peak(lambda v: fisher_point(spec, v, 1, (cdw,), (), cfg).F_O["cdw"], window)
    at_q = fisher_point(spec, VQ, 1, (cdw,), (site_resolved(L), parity_binned(L)), cfg)
    at_c = fisher_point(spec, Vc, 1, (cdw,), (site_resolved(L), parity_binned(L)), cfg)
    return {
        "L": L, "n_f": 1,
        "V_star_Q": VQ, "F_Q_star": FQ,
        "V_star_cdw": Vc, "F_cdw_star": Fc,
        "points": [point_record(at_q), point_record(at_c)],
    }


def self_consistent_filling(spec: LatticeSpec, cfg: FDConfig = FDConfig(), window=PEAK_WINDOW,
                            max_iter: int = 6) -> tuple[int, float, float]:
    """Particle number filling every negative level at the QFI peak it produces.

    Returns (n_f, V*, F_Q*).
    """
    n_f = ff.negative_energy_count(spec, V_CRITICAL)
    seen = set()
    for _ in range(max_iter):
        V_star, F_star = _peak(lambda v: fisher_point(spec, v, n_f, (), (), cfg).F_Q, window)
        nxt = ff.negative_energy_count(spec, V_star)
        if nxt == n_f:
            return n_f, V_star, F_star
        if nxt in seen:
            break
        seen.add(n_f)
        n_f = nxt
    raise RuntimeError(f"particle number did not settle for L={spec.L}")


def halffilled_peaks(L: int, cfg: FDConfig = FDConfig(), window=PEAK_WINDOW,
                     convention: str = "numerator") -> dict:
    """F_Q* at the QFI peak and the H_2 observable's OFI evaluated there."""
    spec = fibonacci_lattice(L, convention)
    n_f, V_star, F_star = self_consistent_filling(spec, cfg, window)
    h2 = h2_observable(spec)
    pt = fisher_point(spec, V_star, n_f, (h2, cdw_observable(L, n_f)), (), cfg)
    return {
        "L": L, "n_f": n_f, "V_star_Q": V_star, "F_Q_star": F_star,
        "F_h2_star": pt.F_O["h2"], "F_cdw_at_star": pt.F_O["cdw"],
        "points": [point_record(pt)],
    }


def adiabatic_points(L: int, n_f: int, V_grid: Sequence[float], observables: Sequence[str],
                     measurements: Sequence[str], cfg: FDConfig = FDConfig(),
                     convention: str = "numerator") -> list[FisherPoint]:
    spec = fibonacci_lattice(L, convention)
    obs = [make_observable(name, spec, n_f) for name in observables]
    meas = [make_measurement(name, L) for name in measurements]
    return [fisher_point(spec, float(v), n_f, obs, meas, cfg) for v in V_grid]


def make_observable(name: str, spec: LatticeSpec, n_f: int):
    if name == "cdw":
        return cdw_observable(spec.L, n_f)
    if name == "h2":
        return h2_observable(spec)
    raise ValueError(f"unknown observable {name!r} (ipr is state-dependent and not swept)")


def make_measurement(name: str, L: int):
    if name == "site":
        return site_resolved(L)
    if name == "parity":
        return parity_binned(L)
    raise ValueError(f"unknown measurement {name!r}")


def quench_protocol(L: int, initial: dict, V_f: float | str, times, cfg: FDConfig = FDConfig(),
                    convention: str = "numerator", n_f: int | None = None) -> QuenchProtocol:
    """Build a protocol from plain settings.

    ``initial`` is ``{"type": "cdw"}`` or ``{"type": "ground", "V": 5.0}``; a
    ground state uses the half-filling rule unless ``n_f`` is given. ``V_f``
    may be the string ``"vstar"`` for the half-filled QFI peak.
    """
    spec = fibonacci_lattice(L, convention)
    if V_f == "vstar":
        V_f = halffilled_vstar(L, cfg, convention)
    if initial["type"] == "cdw":
        init = CdwProduct()
    elif initial["type"] == "ground":
        if n_f is None:
            n_f = halffilled_nf(L, cfg, convention)
        init = GroundStateInit(float(initial["V"]), n_f)
    else:
        raise ValueError(f"unknown initial state {initial!r}")
    return QuenchProtocol(spec, init, float(V_f), tuple(times), cfg)


_HALF_CACHE: dict[tuple, tuple[int, float, float]] = {}


def _half(L, cfg, convention):
    key = (L, cfg, convention)
    if key not in _HALF_CACHE:
        _HALF_CACHE[key] = self_consistent_filling(fibonacci_lattice(L, convention), cfg)
    return _HALF_CACHE[key]


def halffilled_nf(L: int, cfg: FDConfig = FDConfig(), convention: str = "numerator") -> int:
    return _half(L, cfg, convention)[0]


def halffilled_vstar(L: int, cfg: FDConfig = FDConfig(), convention: str = "numerator") -> float:
    return _half(L, cfg, convention)[1]


def quench_run(proto: QuenchProtocol, observables: Sequence[str],
               window: tuple[float, float] = TRANSIENT_WINDOW) -> dict:
    n_f = proto.initial_state().n_f
    obs = [make_observable(name, proto.spec, n_f) for name in observables]
    series = quench_series(proto, obs)
    fits = {}
    for k, v in series.F_O.items():
        fits[f"F_O:{k}"] = _maybe_fit(series.times, v, window)
    fits["F_Q"] = _maybe_fit(series.times, series.F_Q, window)
    return {
        "L": proto.spec.L, "n_f": n_f, "V_f": proto.V_f,
        "columns": {k: np.asarray(v).tolist() for k, v in series.columns().items()},
        "fits": fits,
    }


def _maybe_fit(t, y, window):
    try:
        return power_law_fit(t, y, window).as_dict()
    except ValueError as exc:
        return {"error": str(exc)}


def interacting_peak(L: int, U: float, n_f: int | None = None, window=(1.3, 3.0),
                     cfg: FDConfig = FDConfig(), convention: str = "numerator",
                     tol: float = 1e-4, n: int = 18) -> dict:
    spec = fibonacci_lattice(L, convention)
    if n_f is None:
        n_f = halffilled_nf(L, cfg, convention)
    model = mb.ManyBodyModel(spec, n_f)
    V_star, F_star = refine_peak(
        lambda v: mb.mb_fisher_point(spec, v, U, n_f, (), cfg, model).F_Q,
        window[0], window[1], n=n, tol=tol,
    )
    pt = mb.mb_fisher_point(spec, V_star, U, n_f, (h2_observable(spec),), cfg, model)
    return {"L": L, "U": U, "n_f": n_f, "V_star_Q": V_star, "F_Q_star": F_star,
            "points": [point_record(pt)]}


def interacting_points(L: int, U: float, n_f: int, V_grid, cfg: FDConfig = FDConfig(),
                       convention: str = "numerator") -> list[FisherPoint]:
    spec = fibonacci_lattice(L, convention)
    model = mb.ManyBodyModel(spec, n_f)
    obs = (h2_observable(spec), cdw_observable(L, n_f))
    return [mb.mb_fisher_point(spec, float(v), U, n_f, obs, cfg, model) for v in V_grid]


def point_record(p: FisherPoint) -> dict:
    return asdict(p)


def point_from_record(d: dict) -> FisherPoint:
    return FisherPoint(**d)
