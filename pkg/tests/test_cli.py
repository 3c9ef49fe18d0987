import json
import os

import numpy as np
import pytest

from fadmm import ConfigError
from fadmm.cli import main
from fadmm.experiments import ExperimentSpec, run, spec_from_config
from fadmm.params import ModelParams, params_from_config, params_to_config


TINY = dict(n_paths=40, n_steps=40, seed=5, n_grid=41)


def tiny_spec(experiment, out_dir, **kw):
    opts = {**TINY, **kw}
    return ExperimentSpec(experiment=experiment, params=ModelParams(),
                          out_dir=str(out_dir), **opts)


def read_csv(path):
    lines = path.read_text().splitlines()
    return lines[0].split(","), [ln.split(",") for ln in lines[1:]]


class TestConfigParsing:
    def test_params_round_trip(self):
        p = ModelParams(mu=0.05, cap_lo=-2.0)
        assert params_from_config(params_to_config(p)) == p

    def test_unknown_param_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown"):
            params_from_config("sigma = 1.0\nbogus_key = 3\n")

    def test_spec_round_trip(self):
        text = (
            "experiment = table1\n"
            "n_paths = 123\n"
            "seed = 9\n"
            "mark = fundamental\n"
            "recalibrate_psi = false\n"
            "sweep_values = 0.1, 0.2\n"
            "mu = 0.05\n"
        )
        spec = spec_from_config(text)
        assert spec.experiment == "table1"
        assert spec.n_paths == 123
        assert spec.mark == "fundamental"
        assert spec.recalibrate_psi is False
        assert spec.sweep_values == (0.1, 0.2)
        assert spec.params.mu == 0.05

    def test_unknown_experiment_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown experiment key"):
            spec_from_config("experiment = table1\nwhatever = 1\n")

    def test_unknown_experiment_id_rejected(self):
        with pytest.raises(ConfigError, match="unknown experiment id"):
            spec_from_config("experiment = table99\n")

    def test_comments_and_duplicates(self):
        with pytest.raises(ConfigError, match="duplicate"):
            params_from_config("sigma = 1\nsigma = 2\n")
        p = params_from_config("# comment\nsigma = 2.0  # inline\n")
        assert p.sigma == 2.0


class TestPipelines:
    def test_table1_tiny(self, tmp_path):
        outputs = run(tiny_spec("table1", tmp_path), log=lambda *_: None)
        csv = tmp_path / "table1.csv"
        assert csv.exists()
        header, rows = read_csv(csv)
        assert header[0] == "axis"
        axes = {r[0] for r in rows}
        assert axes == {"baseline", "q_weight", "gamma", "eta", "informed_share"}
        manifest = json.loads((tmp_path / "table1_manifest.json").read_text())
        assert manifest["experiment"] == "table1"
        assert "config_hash" in manifest

    def test_single_path_blank_se(self, tmp_path):
        run(tiny_spec("fig_perf_sweep", tmp_path, n_paths=1,
                      sweep_values=(0.5,)), log=lambda *_: None)
        header, rows = read_csv(tmp_path / "fig_perf_sweep.csv")
        i_std = header.index("stdev")
        i_se = header.index("se")
        for r in rows:
            assert r[i_std] == "" and r[i_se] == ""

    def test_rerun_byte_identical(self, tmp_path):
        a_dir, b_dir = tmp_path / "a", tmp_path / "b"
        run(tiny_spec("table_norescale", a_dir), log=lambda *_: None)
        run(tiny_spec("table_norescale", b_dir), log=lambda *_: None)
        a = (a_dir / "table_norescale.csv").read_bytes()
        b = (b_dir / "table_norescale.csv").read_bytes()
        assert a == b

    def test_fig_spread_monotone(self, tmp_path):
        run(tiny_spec("fig_spread", tmp_path), log=lambda *_: None)
        header, rows = read_csv(tmp_path / "fig_spread.csv")
        i_rp = header.index("run_penalty")
        i_share = header.index("informed_share")
        i_spread = header.index("spread")
        by_rp = {}
        for r in rows:
            by_rp.setdefault(float(r[i_rp]), []).append(
                (float(r[i_share]), float(r[i_spread])))
        for rp, vals in by_rp.items():
            vals.sort()
            spreads = [s for _, s in vals]
            assert all(a < b for a, b in zip(spreads, spreads[1:])), rp
        # spread increases in the running penalty at fixed share
        shares0 = sorted(by_rp)
        s_low = dict(by_rp[shares0[0]])
        s_high = dict(by_rp[shares0[-1]])
        for share in s_low:
            assert s_low[share] < s_high[share]

    def test_fig_quotes_and_filter(self, tmp_path):
        run(tiny_spec("fig_quotes", tmp_path), log=lambda *_: None)
        header, rows = read_csv(tmp_path / "fig_quotes.csv")
        assert header == ["q_weight", "t", "q", "u", "delta_a", "delta_b"]
        assert {float(r[0]) for r in rows} == {0.3, 0.6, 0.9}
        run(tiny_spec("fig_filter", tmp_path), log=lambda *_: None)
        header, rows = read_csv(tmp_path / "fig_filter_q0.6.csv")
        assert header == ["t", "u_true", "u_hat", "p_hat"]
        assert len(rows) == TINY["n_steps"] + 1

    def test_table3_tiny(self, tmp_path):
        run(tiny_spec("table3", tmp_path, n_paths=200), log=lambda *_: None)
        header, rows = read_csv(tmp_path / "table3.csv")
        assert header[:3] == ["param", "factor", "believed_value"]
        assert len(rows) == 8  # four parameters, over- and under-estimated

    def test_fd_validation_tiny(self, tmp_path):
        spec = tiny_spec("fd_validation", tmp_path, fd_n_t=200, fd_n_u=41,
                         fd_u_max=2.0)
        run(spec, log=lambda *_: None)
        header, rows = read_csv(tmp_path / "fd_validation.csv")
        assert header == ["t", "q", "u", "v", "delta_a_fd", "delta_a_cf",
                          "delta_b_fd", "delta_b_cf"]
        manifest = json.loads((tmp_path / "fd_validation_manifest.json").read_text())
        assert "fd_sup_gap" in manifest

    def test_ctmc_demo(self, tmp_path):
        run(tiny_spec("ctmc_demo", tmp_path, n_steps=500), log=lambda *_: None)
        header, rows = read_csv(tmp_path / "ctmc_demo.csv")
        assert header[:3] == ["t", "u_true", "u_hat"]
        pis = np.array([[float(x) for x in r[3:]] for r in rows])
        assert np.allclose(pis.sum(axis=1), 1.0, atol=1e-12)


class TestCliEntry:
    def test_run_by_id(self, tmp_path, capsys):
        rc = main(["run", "fig_spread", "--out", str(tmp_path), "--seed", "3",
                   "--quiet"])
        assert rc == 0
        assert (tmp_path / "fig_spread.csv").exists()

    def test_run_spec_file_with_overrides(self, tmp_path):
        conf = tmp_path / "spec.conf"
        conf.write_text("experiment = fig_perf_sweep\n"
                        "n_paths = 30\nn_steps = 30\nn_grid = 31\n"
                        "sweep_values = 0.0, 0.6\n")
        rc = main(["run", str(conf), "--out", str(tmp_path / "o"),
                   "--n-paths", "25", "--quiet"])
        assert rc == 0
        manifest = json.loads(
            (tmp_path / "o" / "fig_perf_sweep_manifest.json").read_text())
        assert manifest["n_paths"] == 25

    def test_unknown_id_exit_2(self, capsys):
        assert main(["run", "not_an_experiment", "--quiet"]) == 2
        assert "configuration error" in capsys.readouterr().err

    def test_bad_conf_exit_2(self, tmp_path, capsys):
        conf = tmp_path / "bad.conf"
        conf.write_text("experiment = table1\nmystery = 1\n")
        assert main(["run", str(conf), "--quiet"]) == 2

    def test_unwritable_out_dir_exit_2(self, tmp_path, capsys):
        target = tmp_path / "file_not_dir"
        target.write_text("x")
        rc = main(["run", "fig_spread", "--out", str(target), "--quiet"])
        assert rc == 2
