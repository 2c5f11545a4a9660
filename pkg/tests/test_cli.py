import json

import numpy as np
import pytest
import yaml

from locsense import runner
from locsense.cli import main
from locsense.runner import (CacheCorruption, ConfigError, ExperimentConfig, format_float, list_figures,
                             read_table, run)


def sweep_cfg(tmp_path, **over):
    raw = {"kind": "single_adiabatic", "sizes": [21, 55], "V_grid": {"start": 1.9, "stop": 2.1, "num": 5},
           "observables": ["cdw"], "measurements": ["site"], "output_dir": str(tmp_path / "out")}
    raw.update(over)
    return ExperimentConfig.from_dict(raw)


def tables(path):
    return {p.name: p.read_bytes() for p in sorted(path.glob("*.csv"))}


class TestConfig:
    def test_hash_ignores_key_order(self, tmp_path):
        a = sweep_cfg(tmp_path)
        raw = {"output_dir": "elsewhere", "measurements": ["site"], "observables": ["cdw"],
               "V_grid": {"num": 5, "stop": 2.1, "start": 1.9}, "sizes": [55, 21], "kind": "single_adiabatic"}
        assert ExperimentConfig.from_dict(raw).hash() == a.hash()

    def test_hash_changes_with_content(self, tmp_path):
        assert sweep_cfg(tmp_path).hash() != sweep_cfg(tmp_path, sizes=[21]).hash()

    @pytest.mark.parametrize("raw,msg", [
        ({"sizes": [21]}, "kind"),
        ({"kind": "single_adiabatic"}, "sizes"),
        ({"kind": "bogus", "sizes": [21]}, "kind"),
        ({"kind": "single_adiabatic", "sizes": [21]}, "V_grid"),
        ({"kind": "scaling_summary", "sizes": [21, 34], "filling": "single"}, "odd Fibonacci"),
        ({"kind": "scaling_summary", "sizes": [21], "filling": "quarter"}, "filling"),
        ({"kind": "quench", "sizes": [21], "initial": {"type": "ground"}, "V_f": 1.0}, "needs V"),
        ({"kind": "quench", "sizes": [21], "initial": {"type": "cdw"}, "V_f": "max"}, "V_f"),
        ({"kind": "interacting_ed", "sizes": [13]}, "U"),
        ({"kind": "single_adiabatic", "sizes": [21], "V_grid": [2.0, 1.0]}, "increasing"),
        ({"kind": "single_adiabatic", "sizes": [21], "V_grid": [2.0], "fd": {"dv": 1}}, "fd"),
    ])
    def test_invalid(self, raw, msg):
        with pytest.raises(ConfigError, match=msg):
            ExperimentConfig.from_dict(raw)

    def test_load_yaml(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text(yaml.safe_dump({"kind": "scaling_summary", "sizes": [21, 55], "filling": "single",
                                     "fd": {"delta_V": 2e-4, "target_infidelity_range": [1e-9, 1e-4]}}))
        cfg = ExperimentConfig.load(p)
        assert cfg.fd_config().delta_V == 2e-4
        assert cfg.fd_config().target_infidelity_range == (1e-9, 1e-4)


class TestRun:
    def test_tables_and_rerun(self, tmp_path):
        cfg = sweep_cfg(tmp_path)
        cache = tmp_path / "cache"
        rec = run(cfg, cache_dir=cache)
        assert rec.cache_misses == 10 and rec.cache_hits == 0 and not rec.failures
        first = tables(tmp_path / "out")
        rec2 = run(cfg, cache_dir=cache)
        assert rec2.cache_misses == 0 and rec2.cache_hits == 10
        assert tables(tmp_path / "out") == first
        header, data = read_table(tmp_path / "out" / "fig1abc.csv")
        assert header[:5] == ["L", "n_f", "V", "F_Q", "F_C_site"]
        assert data.shape == (10, len(header))
        assert np.all(np.diff(data[:5, 2]) > 0)

    def test_schema_line_and_precision(self, tmp_path):
        run(sweep_cfg(tmp_path), cache_dir=None)
        lines = (tmp_path / "out" / "fig1abc.csv").read_text().splitlines()
        assert lines[0] == f"# schema={runner.SCHEMA_VERSION}"
        v = float(lines[2].split(",")[3])
        assert format_float(v) == lines[2].split(",")[3]
        assert format_float(0.1) == "0.10000000000000001"

    def test_partial_cache_deletion(self, tmp_path):
        cfg = sweep_cfg(tmp_path)
        cache = tmp_path / "cache"
        run(cfg, cache_dir=cache)
        first = tables(tmp_path / "out")
        files = sorted(cache.rglob("*.json"))
        for f in files[::3]:
            f.unlink()
        rec = run(cfg, cache_dir=cache)
        assert rec.cache_misses == len(files[::3])
        assert tables(tmp_path / "out") == first

    def test_force_recomputes(self, tmp_path):
        cfg = sweep_cfg(tmp_path, sizes=[21])
        run(cfg, cache_dir=tmp_path / "c")
        assert run(cfg, cache_dir=tmp_path / "c", force=True).cache_misses == 5

    def test_corruption_detected(self, tmp_path):
        cfg = sweep_cfg(tmp_path, sizes=[21])
        run(cfg, cache_dir=tmp_path / "c")
        victim = sorted((tmp_path / "c").rglob("*.json"))[0]
        doc = json.loads(victim.read_text())
        doc["payload"]["F_Q"] *= 2
        victim.write_text(json.dumps(doc))
        with pytest.raises(CacheCorruption):
            run(cfg, cache_dir=tmp_path / "c")

    def test_worker_failure_reported(self, tmp_path):
        cfg = sweep_cfg(tmp_path, sizes=[21], observables=["nonsense"])
        rec = run(cfg, cache_dir=None)
        assert len(rec.failures) == 5
        assert "nonsense" in rec.failures[0]["error"]

    def test_parallel_matches_serial(self, tmp_path):
        cfg = sweep_cfg(tmp_path)
        run(cfg, cache_dir=None, workers=1)
        serial = tables(tmp_path / "out")
        run(cfg, cache_dir=None, workers=3)
        assert tables(tmp_path / "out") == serial

    def test_scaling_summary(self, tmp_path):
        cfg = ExperimentConfig.from_dict({"kind": "scaling_summary", "sizes": [21, 55, 89], "filling": "single",
                                          "output_dir": str(tmp_path / "s")})
        rec = run(cfg, cache_dir=None)
        header, data = read_table(tmp_path / "s" / "fig1d.csv")
        assert header[:4] == ["L", "V_star", "F_Q_star", "F_cdw_star"]
        assert set(rec.fits) == {"F_Q_star", "F_cdw_star"}
        summary = json.loads((tmp_path / "s" / "result.json").read_text())
        assert summary["config_hash"] == cfg.hash() and summary["schema"] == runner.SCHEMA_VERSION
        assert "wall_time" in summary

    def test_quench_cdw_vstar(self, tmp_path):
        cfg = ExperimentConfig.from_dict({
            "kind": "quench", "sizes": [21, 55], "initial": {"type": "cdw"}, "V_f": "vstar",
            "observables": ["cdw"], "times": {"n_transient": 8, "t_max": 2.0, "dt": 0.5},
            "output_dir": str(tmp_path / "q")})
        rec = run(cfg, cache_dir=None)
        assert rec.tables == ["quench_L21.csv", "quench_L55.csv"]
        header, _ = read_table(tmp_path / "q" / "quench_L55.csv")
        assert {"t", "F_Q", "F_O_cdw"} <= set(header)
        assert rec.fits["L55"]["F_O:cdw"]["exponent"] == pytest.approx(6.0, abs=0.3)

    def test_quench_vf_list(self, tmp_path):
        cfg = ExperimentConfig.from_dict({
            "kind": "quench", "sizes": [21, 55], "initial": {"type": "cdw"}, "V_f": [0.5, 1.0],
            "observables": ["cdw"], "times": {"n_transient": 6, "t_max": 2.0, "dt": 0.5},
            "output_dir": str(tmp_path / "q")})
        rec = run(cfg, cache_dir=None)
        assert len(rec.tables) == 4 and "quench_L55_Vf1.0.csv" in rec.tables
        assert set(k for k in rec.outputs if k.startswith("collapse")) == {
            "collapse_spread_FQ_over_Lt2_Vf0.5", "collapse_spread_FQ_over_Lt2_Vf1.0"}

    def test_interacting(self, tmp_path):
        cfg = ExperimentConfig.from_dict({"kind": "interacting_ed", "sizes": [13], "U": [0.0, 1.2],
                                          "V_grid": [1.7, 1.8, 1.9], "output_dir": str(tmp_path / "i")})
        rec = run(cfg, cache_dir=None)
        assert not rec.failures
        header, data = read_table(tmp_path / "i" / "fig2a.csv")
        assert header[:3] == ["L", "U", "n_f"] and data.shape[0] == 6
        assert "out of scope" in rec.outputs["note"]


class TestFigures:
    def test_catalog(self):
        figs = list_figures()
        assert [f["panel"] for f in figs] == ["1a", "1b", "1c", "1d", "2a", "2b", "3", "S2a", "S2b"]
        assert all(f["tolerance"] for f in figs)
        fig2b = next(f for f in figs if f["panel"] == "2b")
        assert "out of scope (DMRG)" in fig2b["scope"]

    def test_templates_validate(self):
        for f in list_figures():
            ExperimentConfig.from_dict(runner.figure_config(f["panel"]))


class TestCommandLine:
    def test_figures(self, capsys, tmp_path):
        assert main(["figures", "--write-configs", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "out of scope (DMRG)" in out
        assert len(list(tmp_path.glob("*.yaml"))) == 9

    def test_validate(self, capsys, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text(yaml.safe_dump({"kind": "quench", "sizes": [21], "initial": {"type": "cdw"}, "V_f": 1.0}))
        assert main(["validate", str(p)]) == 0
        p.write_text(yaml.safe_dump({"kind": "quench", "sizes": [21]}))
        assert main(["validate", str(p)]) == 2
        assert "initial" in capsys.readouterr().err

    def test_run_uses_env_cache(self, monkeypatch, tmp_path, capsys):
        monkeypatch.setenv(runner.CACHE_ENV, str(tmp_path / "envcache"))
        p = tmp_path / "c.yaml"
        p.write_text(yaml.safe_dump({"kind": "single_adiabatic", "sizes": [21], "V_grid": [1.9, 2.0, 2.1],
                                     "output_dir": str(tmp_path / "o")}))
        assert main(["run", str(p), "--workers", "1"]) == 0
        assert any((tmp_path / "envcache").rglob("*.json"))
        assert main(["run", str(p), "--force"]) == 0
        assert "0 cached" in capsys.readouterr().out

    def test_missing_config(self, tmp_path):
        assert main(["run", str(tmp_path / "nope.yaml")]) == 2
