"""Command-line entry point: ``locsense run|figures|validate``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from . import __version__
from .runner import (CacheCorruption, ConfigError, ExperimentConfig, default_cache_dir, figure_config,
                     list_figures, run)


def _cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.output_dir:
        cfg.output_dir = args.output_dir
    cache_dir = None if args.no_cache else (args.cache_dir or default_cache_dir())
    rec = run(cfg, cache_dir=cache_dir, force=args.force, workers=args.workers)
    print(f"{cfg.kind}: {len(rec.tables)} table(s) in {cfg.output_dir} "
          f"[hash {rec.config_hash[:12]}, {rec.cache_hits} cached, {rec.cache_misses} computed, "
          f"{rec.wall_time:.1f}s]")
    for name, fit in rec.fits.items():
        if isinstance(fit, dict) and "exponent" in fit:
            print(f"  {name}: exponent {fit['exponent']:.4f} +- {fit['exponent_stderr']:.4f} "
                  f"(r2 {fit['r_squared']:.5f})")
        elif isinstance(fit, dict):
            for sub, f in fit.items():
                if "exponent" in f:
                    print(f"  {name} {sub}: exponent {f['exponent']:.4f} +- {f['exponent_stderr']:.4f}")
    for f in rec.failures:
        print(f"  FAILED {f['point']}: {f['error']}", file=sys.stderr)
    return 1 if rec.failures else 0


def _cmd_figures(args) -> int:
    figs = list_figures()
    if args.json:
        print(json.dumps([{k: v for k, v in f.items() if k != "template"} for f in figs], indent=2))
    else:
        for f in figs:
            print(f"{f['panel']:>4}  {f['kind']:<22} {f['what']}")
            print(f"      tolerance: {f['tolerance']}")
            if "scope" in f:
                print(f"      scope: {f['scope']}")
    if args.write_configs:
        out = Path(args.write_configs)
        out.mkdir(parents=True, exist_ok=True)
        for f in figs:
            path = out / f"fig{f['panel']}.yaml"
            path.write_text(yaml.safe_dump(figure_config(f["panel"]), sort_keys=False))
        print(f"wrote {len(figs)} config(s) to {out}")
    return 0


def _cmd_validate(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    print(f"ok: {cfg.kind}, sizes {cfg.sizes}, hash {cfg.hash()[:12]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="locsense", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="execute an experiment config")
    r.add_argument("config")
    r.add_argument("--workers", type=int, default=None)
    r.add_argument("--cache-dir", default=None, help="default: $LOCSENSE_CACHE_DIR or ~/.cache/locsense")
    r.add_argument("--no-cache", action="store_true")
    r.add_argument("--force", action="store_true", help="recompute and overwrite cached points")
    r.add_argument("--output-dir", default=None)
    r.set_defaults(func=_cmd_run)

    f = sub.add_parser("figures", help="list figure panels and their tolerances")
    f.add_argument("--json", action="store_true")
    f.add_argument("--write-configs", metavar="DIR", help="write one YAML template per panel")
    f.set_defaults(func=_cmd_figures)

    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("config")
    v.set_defaults(func=_cmd_validate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CacheCorruption, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
