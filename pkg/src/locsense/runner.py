"""
Declarative experiment runs with a point-level on-disk cache.

A config names a pipeline ``kind`` plus its parameters. The runner splits the
work into independent points (one lattice size, one grid value, or one
interaction strength), looks each up in the cache, computes the misses on a
bounded worker pool and writes

    <output_dir>/result.json      summary document (fits, metadata, failures)
    <output_dir>/<panel>.csv      one flat table per figure panel
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
import yaml

from . import __version__
from . import experiments as ex
from .analysis import collapse_check, power_law_fit, size_scaling_fit
from .dynamics import time_grid
from .metrology import FDConfig
from .model import odd_fibonacci_sizes

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1"
CACHE_ENV = "LOCSENSE_CACHE_DIR"
KINDS = ("single_adiabatic", "halffilled_adiabatic", "quench", "interacting_ed", "scaling_summary")
SCALING_SIZES = set(odd_fibonacci_sizes(10**5))


class ConfigError(ValueError):
    pass


class CacheCorruption(RuntimeError):
    pass


# --------------------------------------------------------------------------
# config handling


@dataclass
class ExperimentConfig:
    kind: str
    sizes: list[int]
    params: dict[str, Any] = field(default_factory=dict)
    fd: dict[str, Any] = field(default_factory=dict)
    output_dir: str = "results"
    workers: int = 1

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        try:
            kind = raw.pop("kind")
            sizes = [int(L) for L in raw.pop("sizes")]
        except KeyError as exc:
            raise ConfigError(f"missing required field {exc.args[0]!r}") from None
        fd = dict(raw.pop("fd", {}) or {})
        output_dir = str(raw.pop("output_dir", "results"))
        workers = int(raw.pop("workers", 1))
        cfg = cls(kind, sizes, raw, fd, output_dir, workers)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ExperimentConfig":
        with open(path) as fh:
            raw = yaml.safe_load(fh)
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(raw)

    def fd_config(self) -> FDConfig:
        fd = dict(self.fd)
        if "target_infidelity_range" in fd:
            fd["target_infidelity_range"] = tuple(fd["target_infidelity_range"])
        try:
            return FDConfig(**fd)
        except TypeError as exc:
            raise ConfigError(f"fd: {exc}") from None

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not self.sizes or any(L < 1 for L in self.sizes):
            raise ConfigError("sizes must be a non-empty list of positive integers")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        need = {
            "single_adiabatic": ["V_grid"],
            "halffilled_adiabatic": ["V_grid"],
            "quench": ["initial", "V_f"],
            "interacting_ed": ["U"],
            "scaling_summary": ["filling"],
        }[self.kind]
        missing = [k for k in need if k not in self.params]
        if missing:
            raise ConfigError(f"{self.kind}: missing required field(s) {missing}")
        if self.kind == "scaling_summary":
            bad = [L for L in self.sizes if L not in SCALING_SIZES]
            if bad:
                raise ConfigError(f"scaling_summary sizes must be odd Fibonacci numbers, got {bad}")
            if self.params["filling"] not in ("single", "half"):
                raise ConfigError("filling must be 'single' or 'half'")
        if "V_grid" in self.params:
            _grid(self.params["V_grid"])
        if self.kind == "quench":
            init = self.params["initial"]
            if not isinstance(init, dict) or init.get("type") not in ("cdw", "ground"):
                raise ConfigError("initial must be {type: cdw} or {type: ground, V: ...}")
            if init["type"] == "ground" and "V" not in init:
                raise ConfigError("ground-state initial needs V")
            for vf in np.atleast_1d(np.asarray(self.params["V_f"], dtype=object)):
                if not (vf == "vstar" or isinstance(vf, (int, float))):
                    raise ConfigError("V_f must be a number, 'vstar' or a list of those")
        self.fd_config()

    def canonical(self) -> dict:
        """Everything that determines the numbers (not output_dir or workers)."""
        return {"kind": self.kind, "sizes": sorted(self.sizes), "params": self.params, "fd": self.fd}

    def hash(self) -> str:
        return digest(self.canonical())


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serialisable: {type(o)}")


def digest(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def _grid(spec) -> np.ndarray:
    if isinstance(spec, dict):
        try:
            g = np.linspace(float(spec["start"]), float(spec["stop"]), int(spec["num"]))
        except KeyError as exc:
            raise ConfigError(f"V_grid needs start/stop/num, missing {exc.args[0]}") from None
    elif isinstance(spec, (list, tuple)):
        g = np.asarray(spec, dtype=float)
    else:
        raise ConfigError("V_grid must be a list or {start, stop, num}")
    if g.size == 0 or np.any(np.diff(g) <= 0):
        raise ConfigError("V_grid must be non-empty and strictly increasing")
    return g


def _times(spec: dict | list | None) -> np.ndarray:
    if spec is None:
        return time_grid()
    if isinstance(spec, list):
        return np.asarray(spec, dtype=float)
    spec = dict(spec)
    if "transient" in spec:
        spec["transient"] = tuple(spec["transient"])
    return time_grid(**spec)


# --------------------------------------------------------------------------
# cache


class PointCache:
    """One JSON file per point, named by a hash of (version, config, point)."""

    def __init__(self, root: str | os.PathLike | None, force: bool = False):
        self.root = Path(root) if root else None
        self.force = force
        self.hits = 0
        self.misses = 0
        if self.root:
            self.root.mkdir(parents=True, exist_ok=True)

    def key(self, config_hash: str, point: dict) -> str:
        return digest({"version": __version__, "config": config_hash, "point": point})

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str):
        if not self.root or self.force:
            return None
        path = self._path(key)
        if not path.exists():
            return None
        doc = json.loads(path.read_text())
        if digest(doc["payload"]) != doc.get("checksum"):
            raise CacheCorruption(f"checksum mismatch in {path}")
        self.hits += 1
        return doc["payload"]

    def put(self, key: str, payload):
        if not self.root:
            return
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        doc = {"checksum": digest(payload), "payload": payload}
        tmp = path.with_suffix(".tmp")
        tmp.write_text(canonical_json(doc))
        tmp.replace(path)


def default_cache_dir() -> Path:
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "locsense"


# --------------------------------------------------------------------------
# work units


def _to_jsonable(x):
    return json.loads(canonical_json(x))


def _task(kind: str, point: dict, params: dict, fd: dict):
    cfg = FDConfig(**{**fd, **({"target_infidelity_range": tuple(fd["target_infidelity_range"])}
                                if "target_infidelity_range" in fd else {})})
    conv = params.get("convention", "numerator")
    if kind == "scaling_summary":
        fn = ex.single_particle_peaks if params["filling"] == "single" else ex.halffilled_peaks
        return _to_jsonable(fn(point["L"], cfg, convention=conv))
    if kind in ("single_adiabatic", "halffilled_adiabatic"):
        L = point["L"]
        if kind == "single_adiabatic":
            n_f = 1
        else:
            n_f = params.get("n_f") or ex.halffilled_nf(L, cfg, conv)
        pts = ex.adiabatic_points(L, n_f, [point["V"]], params.get("observables", ["cdw"]),
                                  params.get("measurements", ["site"] if n_f == 1 else []), cfg, conv)
        return _to_jsonable(ex.point_record(pts[0]))
    if kind == "quench":
        proto = ex.quench_protocol(point["L"], params["initial"], point["V_f"],
                                   _times(params.get("times")), cfg, conv, params.get("n_f"))
        window = tuple(params.get("fit_window", (0.05, 0.8)))
        return _to_jsonable(ex.quench_run(proto, params.get("observables", ["h2"]), window))
    if kind == "interacting_ed":
        if "V" in point:
            n_f = params.get("n_f") or ex.halffilled_nf(point["L"], cfg, conv)
            pts = ex.interacting_points(point["L"], point["U"], n_f, [point["V"]], cfg, conv)
            return _to_jsonable(ex.point_record(pts[0]))
        window = tuple(params.get("peak_window", (1.3, 3.0)))
        return _to_jsonable(ex.interacting_peak(point["L"], point["U"], params.get("n_f"), window,
                                                cfg, conv))
    raise ConfigError(f"unknown kind {kind}")


def _run_with_retry(args):
    kind, point, params, fd = args
    err = None
    for _ in range(2):
        try:
            return {"ok": True, "value": _task(kind, point, params, fd)}
        except Exception as exc:  # retried once, then reported
            err = f"{type(exc).__name__}: {exc}"
    return {"ok": False, "error": err}


def work_points(config: ExperimentConfig) -> list[dict]:
    p = config.params
    Ls = sorted(config.sizes)
    if config.kind == "scaling_summary":
        return [{"L": L} for L in Ls]
    if config.kind == "quench":
        vfs = p["V_f"] if isinstance(p["V_f"], list) else [p["V_f"]]
        return [{"L": L, "V_f": vf} for vf in vfs for L in Ls]
    if config.kind in ("single_adiabatic", "halffilled_adiabatic"):
        return [{"L": L, "V": float(v)} for L in Ls for v in _grid(p["V_grid"])]
    if config.kind == "interacting_ed":
        Us = [float(u) for u in np.atleast_1d(p["U"])]
        pts = [{"L": L, "U": U} for L in Ls for U in Us]
        if "V_grid" in p:
            pts += [{"L": L, "U": U, "V": float(v)} for L in Ls for U in Us for v in _grid(p["V_grid"])]
        return pts
    raise ConfigError(config.kind)


# --------------------------------------------------------------------------
# tabular output


def format_float(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return f"{float(x):.17g}"


def write_table(path: Path, columns: list[str], rows: list[list]):
    lines = [f"# schema={SCHEMA_VERSION}", ",".join(columns)]
    lines += [",".join(format_float(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def read_table(path: str | os.PathLike) -> tuple[list[str], np.ndarray]:
    with open(path) as fh:
        first = fh.readline().strip()
        if not first.startswith("# schema="):
            raise ValueError(f"{path}: missing schema line")
        header = fh.readline().strip().split(",")
    data = np.genfromtxt(path, delimiter=",", skip_header=2, ndmin=2)
    return header, data


def _point_rows(records: list[tuple[dict, dict]], extra: tuple[str, ...] = ()) -> tuple[list[str], list[list]]:
    keys_c = sorted({k for _, r in records for k in r["F_C"]})
    keys_o = sorted({k for _, r in records for k in r["F_O"]})
    keys_m = sorted({k for _, r in records for k in r["expectations"]})
    cols = ["L", *extra, "n_f", "V", "F_Q"] + [f"F_C_{k}" for k in keys_c] + \
        [f"F_O_{k}" for k in keys_o] + [f"mean_{k}" for k in keys_m] + ["delta_V", "stencil_error"]
    rows = []
    for pt, r in records:
        rows.append([r["L"], *[pt[e] for e in extra], r["n_f"], r["V"], r["F_Q"]]
                    + [r["F_C"].get(k) for k in keys_c] + [r["F_O"].get(k) for k in keys_o]
                    + [r["expectations"].get(k) for k in keys_m]
                    + [r["delta_V_used"], r["stencil_error"]])
    return cols, rows


# --------------------------------------------------------------------------
# assembling results


@dataclass
class ResultRecord:
    config_hash: str
    kind: str
    schema: str
    version: str
    outputs: dict
    fits: dict
    failures: list
    wall_time: float
    cache_hits: int
    cache_misses: int
    tables: list[str]

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _assemble(config: ExperimentConfig, results: list[tuple[dict, dict]], outdir: Path):
    kind = config.kind
    fits: dict = {}
    outputs: dict = {}
    tables: list[str] = []

    def table(name, cols, rows):
        write_table(outdir / f"{name}.csv", cols, rows)
        tables.append(f"{name}.csv")

    if kind == "scaling_summary":
        recs = sorted((r for _, r in results), key=lambda r: r["L"])
        Ls = [r["L"] for r in recs]
        if config.params["filling"] == "single":
            cols = ["L", "V_star", "F_Q_star", "F_cdw_star", "V_star_Q"]
            rows = [[r["L"], r["V_star_cdw"], r["F_Q_star"], r["F_cdw_star"], r["V_star_Q"]] for r in recs]
            table("fig1d", cols, rows)
            keys = {"F_Q_star": "F_Q_star", "F_cdw_star": "F_cdw_star"}
        else:
            cols = ["L", "n_f", "V_star", "F_Q_star", "F_h2_star"]
            rows = [[r["L"], r["n_f"], r["V_star_Q"], r["F_Q_star"], r["F_h2_star"]] for r in recs]
            table("fig2b", cols, rows)
            keys = {"F_Q_star": "F_Q_star", "F_h2_star": "F_h2_star"}
        if len(Ls) >= 3:
            for name, k in keys.items():
                fits[name] = size_scaling_fit(Ls, [r[k] for r in recs]).as_dict()
        outputs["peaks"] = [{k: v for k, v in r.items() if k != "points"} for r in recs]
    elif kind in ("single_adiabatic", "halffilled_adiabatic"):
        recs = sorted(results, key=lambda pr: (pr[0]["L"], pr[0]["V"]))
        cols, rows = _point_rows(recs)
        table("fig1abc" if kind == "single_adiabatic" else "fig2_sweep", cols, rows)
        outputs["n_points"] = len(rows)
    elif kind == "quench":
        multi = isinstance(config.params["V_f"], list)
        groups: dict[str, dict] = {}
        for pt, r in sorted(results, key=lambda pr: (str(pr[0]["V_f"]), pr[0]["L"])):
            tag = f"_Vf{pt['V_f']}" if multi else ""
            c = r["columns"]
            names = ["t"] + sorted(k for k in c if k != "t")
            rows = [[r["L"], r["n_f"], r["V_f"]] + [c[k][i] for k in names] for i in range(len(c["t"]))]
            table(f"quench_L{r['L']}{tag}", ["L", "n_f", "V_f"] + [n.replace(":", "_") for n in names], rows)
            fits[f"L{r['L']}{tag}"] = r["fits"]
            groups.setdefault(tag, {})[r["L"]] = (c["t"], np.asarray(c["F_Q"]) / np.asarray(c["t"]) ** 2)
        t_max = float(config.params.get("collapse_t_max", 3.0))
        for tag, curves_q in groups.items():
            if len(curves_q) > 1:
                outputs[f"collapse_spread_FQ_over_Lt2{tag}"] = collapse_check(curves_q, 1.0, t_max=t_max)
        window = tuple(config.params.get("fit_window", (0.05, 0.8)))
        outputs["fit_window"] = list(window)
    elif kind == "interacting_ed":
        peaks = sorted((r for p, r in results if "V" not in p), key=lambda r: (r["L"], r["U"]))
        table("fig2a_peaks", ["L", "U", "n_f", "V_star", "F_Q_star"],
              [[r["L"], r["U"], r["n_f"], r["V_star_Q"], r["F_Q_star"]] for r in peaks])
        sweep = sorted(((p, r) for p, r in results if "V" in p), key=lambda pr: (pr[0]["L"], pr[0]["U"], pr[0]["V"]))
        if sweep:
            cols, rows = _point_rows(sweep, extra=("U",))
            table("fig2a", cols, rows)
        outputs["peaks"] = [{k: v for k, v in r.items() if k != "points"} for r in peaks]
        outputs["note"] = "interacting L=89 DMRG points are out of scope; exact diagonalisation only"
    return outputs, fits, tables


def run(config: ExperimentConfig, cache_dir: str | os.PathLike | None = None, force: bool = False,
        workers: int | None = None, progress: Callable[[str], None] | None = None) -> ResultRecord:
    """Execute ``config``; cached points are reused unless ``force``."""
    t0 = time.perf_counter()
    h = config.hash()
    cache = PointCache(cache_dir, force)
    points = work_points(config)
    results: list[tuple[dict, dict] | None] = [None] * len(points)
    pending = []
    for i, pt in enumerate(points):
        key = cache.key(h, pt)
        hit = cache.get(key)
        if hit is not None:
            results[i] = (pt, hit)
        else:
            pending.append((i, key))
    cache.misses = len(pending)
    args = [(config.kind, points[i], config.params, config.fd) for i, _ in pending]
    n_workers = workers or config.workers
    if n_workers > 1 and len(args) > 1:
        with ProcessPoolExecutor(n_workers) as pool:
            outcomes = list(pool.map(_run_with_retry, args))
    else:
        outcomes = [_run_with_retry(a) for a in args]
    failures = []
    for (i, key), out in zip(pending, outcomes):
        if out["ok"]:
            cache.put(key, out["value"])
            results[i] = (points[i], out["value"])
        else:
            failures.append({"point": points[i], "error": out["error"]})
            log.error("point %s failed: %s", points[i], out["error"])
    done = [r for r in results if r is not None]
    outdir = Path(config.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    outputs, fits, tables = _assemble(config, done, outdir)
    rec = ResultRecord(
        config_hash=h, kind=config.kind, schema=SCHEMA_VERSION, version=__version__,
        outputs=outputs, fits=fits, failures=failures,
        wall_time=time.perf_counter() - t0, cache_hits=cache.hits, cache_misses=cache.misses,
        tables=tables,
    )
    summary = {**rec.to_dict(), "config": config.canonical()}
    (outdir / "result.json").write_text(json.dumps(_to_jsonable(summary), indent=2, sort_keys=True) + "\n")
    return rec


# --------------------------------------------------------------------------
# figure catalogue

FIGURES = [
    {"panel": "1a", "kind": "single_adiabatic", "what": "F_Q and site-resolved F_C vs V, L=89, 233",
     "tolerance": "|F_C - F_Q| / F_Q < 5% at >= 5 points around the peak",
     "template": {"sizes": [89, 233], "V_grid": {"start": 1.9, "stop": 2.1, "num": 41},
                  "observables": ["cdw"], "measurements": ["site", "parity"]}},
    {"panel": "1b", "kind": "single_adiabatic", "what": "|<O_cdw>| vs V across sizes",
     "tolerance": "V*(L) monotone toward 2; |V*(377) - 2| < |V*(21) - 2|",
     "template": {"sizes": [21, 55, 89, 233, 377], "V_grid": {"start": 1.0, "stop": 3.0, "num": 81},
                  "observables": ["cdw"], "measurements": []}},
    {"panel": "1c", "kind": "single_adiabatic", "what": "F_cdw vs V across sizes",
     "tolerance": "peaks near V=2 growing with L",
     "template": {"sizes": [21, 55, 89, 233, 377], "V_grid": {"start": 1.5, "stop": 2.6, "num": 111},
                  "observables": ["cdw"], "measurements": []}},
    {"panel": "1d", "kind": "scaling_summary", "what": "F_Q* and F_cdw* vs L (single particle)",
     "tolerance": "F_Q* exponent 2.01 +- 0.10; F_cdw* exponent 1.54 +- 0.15",
     "template": {"sizes": [21, 55, 89, 233, 377], "filling": "single"}},
    {"panel": "2a", "kind": "interacting_ed", "what": "F_Q vs V for U in {0, 0.6, 1.2} (ED, L=13)",
     "tolerance": "V*(U) nondecreasing, F_Q* nonincreasing in U",
     "template": {"sizes": [13], "U": [0.0, 0.6, 1.2], "V_grid": {"start": 1.3, "stop": 3.0, "num": 35}}},
    {"panel": "2b", "kind": "scaling_summary", "what": "F_Q* and F_H2* vs L at half filling (U=0)",
     "tolerance": "F_Q* exponent 1.98 +- 0.10; F_H2* exponent 1.04 +- 0.10",
     "scope": "interacting diamond points (U=1.2, L up to 89): out of scope (DMRG)",
     "template": {"sizes": [21, 55, 89, 233], "filling": "half"}},
    {"panel": "3", "kind": "quench", "what": "F_Q, F_H2 after quench from the V=5 ground state into the extended phase",
     "tolerance": "F_Q/(L t^2) spread < 5% for t <= 3; F_H2 slope 3.92 +- 0.2; F_cdw slope 6.0 +- 0.2 at V_f=V* (S2a run)",
     "template": {"sizes": [55, 89, 233], "initial": {"type": "ground", "V": 5.0}, "V_f": 1.0,
                  "observables": ["h2"], "fd": {"adaptive": True},
                  "times": {"transient": [0.05, 0.8], "n_transient": 16, "t_max": 20.0, "dt": 0.25}}},
    {"panel": "S2a", "kind": "quench", "what": "F_cdw from |1010...> for V_f in {0.1, 1, V*}",
     "tolerance": "F_cdw transient exponent 6.0 +- 0.3 for each V_f",
     "template": {"sizes": [21, 55, 89], "initial": {"type": "cdw"}, "V_f": [0.1, 1.0, "vstar"],
                  "observables": ["cdw"], "fd": {"adaptive": True},
                  "times": {"transient": [0.05, 0.8], "n_transient": 16, "t_max": 5.0, "dt": 0.25}}},
    {"panel": "S2b", "kind": "quench", "what": "F_Q, F_H2 after quench from ground state at V=0.5 to V=5",
     "tolerance": "F_H2 slope 4 +- 0.3 on [0.01, 0.1]; F_Q/(L t^2) spread < 5%",
     "template": {"sizes": [55, 89, 233], "initial": {"type": "ground", "V": 0.5}, "V_f": 5.0,
                  "observables": ["h2"], "fit_window": [0.01, 0.1], "fd": {"adaptive": True},
                  "times": {"transient": [0.01, 0.1], "n_transient": 12, "t_max": 3.0, "dt": 0.25}}},
]


def list_figures() -> list[dict]:
    return [dict(f) for f in FIGURES]


def figure_config(panel: str, output_dir: str | None = None) -> dict:
    for f in FIGURES:
        if f["panel"].lower() == panel.lower():
            cfg = {"kind": f["kind"], **f["template"]}
            cfg["output_dir"] = output_dir or f"results/fig{f['panel']}"
            return cfg
    raise KeyError(panel)
