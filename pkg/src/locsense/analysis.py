"""Peak location, power-law fits and finite-size collapse diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

R2_EXCLUSION_THRESHOLD = 0.995


class PeakOnBoundary(ValueError):
    """Maximum sits on the first or last grid point; widen the grid."""


@dataclass(frozen=True)
class ScalingFit:
    exponent: float
    amplitude: float
    exponent_stderr: float
    r_squared: float
    points: tuple[tuple[float, float], ...]
    window: tuple[float, float] | None = None
    excluded: tuple[float, ...] = ()

    def predict(self, x):
        return self.amplitude * np.asarray(x, dtype=float) ** self.exponent

    def as_dict(self) -> dict:
        return {
            "exponent": self.exponent,
            "exponent_stderr": self.exponent_stderr,
            "amplitude": self.amplitude,
            "r_squared": self.r_squared,
            "n_points": len(self.points),
            "window": list(self.window) if self.window else None,
            "excluded": list(self.excluded),
        }


def _field(p, selector):
    if callable(selector):
        return float(selector(p))
    if "." in selector:  # e.g. "F_O.cdw"
        outer, inner = selector.split(".", 1)
        return float(getattr(p, outer)[inner])
    return float(getattr(p, selector))


def parabola_vertex(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Vertex of the parabola through three points (any spacing)."""
    (x0, x1, x2), (y0, y1, y2) = x, y
    f01 = (y1 - y0) / (x1 - x0)
    a = ((y2 - y1) / (x2 - x1) - f01) / (x2 - x0)
    if a == 0:
        return float(x1), float(y1)
    xv = 0.5 * (x0 + x1) - f01 / (2 * a)
    yv = y0 + f01 * (xv - x0) + a * (xv - x0) * (xv - x1)
    return float(xv), float(yv)


def find_peak(points, field: str | Callable = "F_Q", ys=None) -> tuple[float, float]:
    """Refined location and height of the maximum of sampled data.

    ``points`` is either a list of FisherPoint-like objects (with ``field``
    selecting the value) or an array of x values together with ``ys``.
    """
    if ys is None:
        pts = sorted(points, key=lambda p: p.V)
        xs = np.array([p.V for p in pts], dtype=float)
        vals = np.array([_field(p, field) for p in pts], dtype=float)
    else:
        xs = np.asarray(points, dtype=float)
        vals = np.asarray(ys, dtype=float)
        order = np.argsort(xs)
        xs, vals = xs[order], vals[order]
    if xs.size < 3:
        raise ValueError("need at least 3 grid points")
    j = int(np.argmax(vals))
    if j == 0 or j == xs.size - 1:
        raise PeakOnBoundary(f"maximum at grid edge V={xs[j]:g}; widen grid")
    return parabola_vertex(xs[j - 1:j + 2], vals[j - 1:j + 2])


def refine_peak(evaluate: Callable[[float], float], lo: float, hi: float, n: int = 41,
                tol: float = 1e-5, zoom_points: int = 13, max_levels: int = 12) -> tuple[float, float]:
    """Locate the maximum of ``evaluate`` on [lo, hi] by repeated grid zooming.

    Each level brackets the current best grid point by its neighbours and
    resamples; the final vertex comes from :func:`find_peak`.
    """
    xs = np.linspace(lo, hi, n)
    ys = np.array([evaluate(x) for x in xs])
    for _ in range(max_levels):
        V_star, _ = find_peak(xs, ys=ys)
        j = int(np.argmax(ys))
        step = xs[1] - xs[0]
        if step <= tol:
            break
        a, b = xs[j - 1], xs[j + 1]
        xs = np.linspace(a, b, zoom_points)
        inner = np.array([evaluate(x) for x in xs[1:-1]])
        ys = np.concatenate([[ys[j - 1]], inner, [ys[j + 1]]])
    V_star, _ = find_peak(xs, ys=ys)
    return V_star, float(evaluate(V_star))


def power_law_fit(xs, ys, window: tuple[float, float] | None = None) -> ScalingFit:
    """Least-squares line through (log x, log y); y = amplitude * x**exponent."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if window is not None:
        keep = (x >= window[0]) & (x <= window[1])
        x, y = x[keep], y[keep]
    if x.size < 3:
        raise ValueError(f"need at least 3 points in window, got {x.size}")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("power-law fit needs positive data in the window")
    lx, ly = np.log(x), np.log(y)
    mx = lx.mean()
    sxx = np.sum((lx - mx) ** 2)
    slope = np.sum((lx - mx) * (ly - ly.mean())) / sxx
    icpt = ly.mean() - slope * mx
    resid = ly - (icpt + slope * lx)
    rss = float(np.sum(resid**2))
    tss = float(np.sum((ly - ly.mean()) ** 2))
    dof = x.size - 2
    stderr = float(np.sqrt(rss / dof / sxx)) if dof > 0 else float("nan")
    r2 = 1.0 - rss / tss if tss > 0 else 1.0
    return ScalingFit(
        exponent=float(slope),
        amplitude=float(np.exp(icpt)),
        exponent_stderr=stderr,
        r_squared=float(min(max(r2, 0.0), 1.0)),
        points=tuple(zip(x.tolist(), y.tolist())),
        window=tuple(window) if window is not None else None,
    )


def size_scaling_fit(Ls, values, threshold: float = R2_EXCLUSION_THRESHOLD) -> ScalingFit:
    """Power-law fit over sizes, dropping the smallest size when it spoils r^2."""
    fit = power_law_fit(Ls, values)
    if fit.r_squared >= threshold or len(fit.points) < 4:
        return fit
    order = np.argsort(Ls)
    smallest = float(np.asarray(Ls, dtype=float)[order[0]])
    trimmed = power_law_fit(np.asarray(Ls)[order[1:]], np.asarray(values)[order[1:]])
    if trimmed.r_squared <= fit.r_squared:
        return fit
    return ScalingFit(**{**trimmed.__dict__, "excluded": (smallest,)})


def collapse_check(curves: Mapping[int, tuple[Sequence[float], Sequence[float]]], alpha: float,
                   t_max: float | None = None) -> float:
    """Largest relative spread of value / L**alpha across sizes on a shared time grid.

    The spread at each time is (max - min) / mean over sizes.
    """
    if not curves:
        raise ValueError("no curves")
    ts = None
    scaled = []
    for L, (t, v) in sorted(curves.items()):
        t = np.asarray(t, dtype=float)
        if ts is None:
            ts = t
        elif t.shape != ts.shape or not np.allclose(t, ts, rtol=1e-12, atol=0):
            raise ValueError(f"time grid for L={L} differs from the others")
        scaled.append(np.asarray(v, dtype=float) / float(L) ** alpha)
    arr = np.vstack(scaled)
    if t_max is not None:
        arr = arr[:, ts <= t_max]
    mean = arr.mean(axis=0)
    spread = (arr.max(axis=0) - arr.min(axis=0)) / np.abs(mean)
    return float(np.max(spread)) if spread.size else 0.0


@dataclass
class PeakTable:
    """Per-size peak data collected by the scaling pipelines."""

    L: list[int] = field(default_factory=list)
    V_star: list[float] = field(default_factory=list)
    F_star: dict[str, list[float]] = field(default_factory=dict)

    def add(self, L: int, V_star: float, **values: float):
        self.L.append(L)
        self.V_star.append(V_star)
        for k, v in values.items():
            self.F_star.setdefault(k, []).append(v)

    def fit(self, key: str) -> ScalingFit:
        return size_scaling_fit(self.L, self.F_star[key])
