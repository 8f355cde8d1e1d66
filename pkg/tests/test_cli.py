import hashlib
import json
import math
from pathlib import Path

import numpy as np
import pytest

from sgdphaselab import GenFuncContext, ValidationError, load_spectrum_csv, stability_report
from sgdphaselab.cli import main, parse_config
from sgdphaselab.svg import heatmap_chart, loglog_chart


def read_manifest(out: Path) -> dict:
    return json.loads((out / "manifest.json").read_text())


class TestParseConfig:
    def test_minimal_flags_fill_defaults(self):
        cfg = parse_config(
            ["simulate", "--nu", "1.5", "--kappa", "3", "--alpha", "0.5", "--beta", "0", "--batch", "10"]
        )
        assert cfg.command == "simulate"
        assert cfg.tau1 == 1.0 and cfg.tau2 == 1.0
        assert cfg.runs == 1000 and cfg.steps == 10_000

    def test_conflicting_sources(self, tmp_path):
        with pytest.raises(ValidationError, match="conflicting"):
            parse_config(["simulate", "--csv", "x.csv", "--nu", "1.5"])

    def test_beta_range_error_cites_interval(self):
        with pytest.raises(ValidationError, match=r"\(-1, 1\)"):
            parse_config(["simulate", "--nu", "1.5", "--kappa", "3", "--beta", "1.5"])

    def test_grid_spec_parsing(self):
        cfg = parse_config(["stability-map", "--nu", "1.5", "--kappa", "3",
                            "--grid-alpha", "0.1:2:5", "--grid-beta", "0:0.9:4"])
        assert cfg.grid_alpha == (0.1, 2.0, 5)
        assert cfg.grid_beta == (0.0, 0.9, 4)
        with pytest.raises(ValidationError):
            parse_config(["stability-map", "--nu", "1", "--kappa", "2", "--grid-alpha", "1:2"])

    def test_config_file_and_flag_override(self, tmp_path):
        f = tmp_path / "exp.cfg"
        f.write_text(
            "# experiment\ncommand = simulate\nnu = 1.5\nkappa = 3.0\nalpha = 0.25\nsteps = 111\nplot = false\n"
        )
        cfg = parse_config(["--config", str(f), "--alpha", "0.5"])
        assert cfg.command == "simulate"
        assert cfg.alpha == 0.5  # flag wins
        assert cfg.steps == 111

    def test_unknown_config_key_named(self, tmp_path):
        f = tmp_path / "exp.cfg"
        f.write_text("command = simulate\nwibble = 3\n")
        with pytest.raises(ValidationError, match="wibble"):
            parse_config(["--config", str(f)])

    def test_unknown_regime(self):
        with pytest.raises(ValidationError, match="regime"):
            parse_config(["simulate", "--nu", "1.5", "--kappa", "3", "--regime", "banana"])

    def test_missing_command(self):
        with pytest.raises(ValidationError, match="command"):
            parse_config(["--nu", "1.5"])


SIM_ARGS = ["simulate", "--nu", "1.5", "--kappa", "3", "--alpha", "0.4", "--batch", "10",
            "--modes", "50", "--steps", "100"]


class TestRunCommands:
    def test_simulate_emits_and_checksums(self, tmp_path):
        out = tmp_path / "run1"
        rc = main(SIM_ARGS + ["--out", str(out), "--plot"])
        assert rc == 0
        man = read_manifest(out)
        assert {f["path"] for f in man["files"]} >= {"trajectory_se.csv", "trajectory_se.meta.json"}
        for f in man["files"]:
            p = out / f["path"]
            assert hashlib.sha256(p.read_bytes()).hexdigest() == f["sha256"]
            assert p.stat().st_size == f["bytes"]

    def test_byte_identical_reruns(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(SIM_ARGS + ["--seed", "5", "--out", str(out1), "--plot"]) == 0
        assert main(SIM_ARGS + ["--seed", "5", "--out", str(out2), "--plot"]) == 0
        for name in ("trajectory_se.csv", "trajectories.svg"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_noiseless_has_empty_stderr_column_mc_does_not(self, tmp_path):
        out = tmp_path / "both"
        rc = main(["simulate", "--random-features", "8,8", "--alpha", "0.05", "--batch", "2",
                   "--steps", "20", "--runs", "64", "--regime", "noiseless,mc", "--out", str(out)])
        assert rc == 0
        clean = (out / "trajectory_noiseless.csv").read_text().splitlines()
        assert clean[1].endswith(",")  # stderr column empty
        noisy = (out / "trajectory_mc.csv").read_text().splitlines()
        assert not noisy[1].endswith(",")

    def test_spectrum_csv_source_round_trip(self, tmp_path):
        src = tmp_path / "spec.csv"
        src.write_text("k,lambda,lambda_c\n1,1.0,0.5\n2,0.5,0.25\n3,0.25,0.125\n4,0.125,0.0625\n")
        out = tmp_path / "runcsv"
        rc = main(["simulate", "--csv", str(src), "--alpha", "0.3", "--gamma", "0.2",
                   "--steps", "50", "--out", str(out)])
        assert rc == 0
        spec = load_spectrum_csv(src)
        first = float((out / "trajectory_se.csv").read_text().splitlines()[1].split(",")[1])
        assert first == spec.initial_loss

    def test_stability_map_boundary_column(self, tmp_path):
        out = tmp_path / "map"
        rc = main(["stability-map", "--nu", "1.5", "--kappa", "3", "--modes", "40",
                   "--batch", "10", "--grid-alpha", "0.2:3:6", "--grid-beta", "0:0.8:5",
                   "--steps", "200", "--out", str(out)])
        assert rc == 0
        rows = (out / "stability_map.csv").read_text().splitlines()[1:]
        spec = None
        from sgdphaselab import PowerLawSpec, build_power_law, gamma_for_batch

        spec = build_power_law(PowerLawSpec(1.0, 1.5, 1.0, 3.0, 40))
        gamma = gamma_for_batch(math.inf, 10)
        rng = np.random.default_rng(0)
        for row in rng.choice(rows, size=10, replace=False):
            alpha, beta, _, _, boundary = row.split(",")
            rep = stability_report(GenFuncContext(spec, float(alpha), float(beta), gamma, 1.0))
            assert float(boundary) == rep.alpha_eff_critical * (1.0 - float(beta))

    def test_divergence_command(self, tmp_path):
        out = tmp_path / "div"
        rc = main(["divergence", "--nu", "0.75", "--kappa", "0.375", "--modes", "2000",
                   "--alpha", "0.1", "--gamma", "1", "--steps", "2000",
                   "--tail-start", "200", "--out", str(out), "--plot"])
        assert rc == 0
        rep = json.loads((out / "divergence_report.json").read_text())
        assert 0 < rep["r_L"] < 1
        assert rep["blowup"]["t_blowup"] > 0

    def test_asymptotics_command_reports_empirical_slope(self, tmp_path):
        out = tmp_path / "asym"
        rc = main(["asymptotics", "--nu", "1.5", "--kappa", "3", "--modes", "400",
                   "--alpha", "0.2", "--gamma", "1", "--steps", "3000", "--out", str(out)])
        assert rc == 0
        rep = json.loads((out / "asymptote_report.json").read_text())
        assert rep["phase"] == "noise_dominated"
        assert abs(rep["empirical"]["slope"] - rep["exponent"]) < 0.4

    def test_fit_command(self, tmp_path):
        out = tmp_path / "fit"
        rc = main(["fit", "--nu", "1.5", "--kappa", "3", "--modes", "64", "--out", str(out), "--plot"])
        assert rc == 0
        rep = json.loads((out / "power_law_fit.json").read_text())
        assert rep["nu"] == pytest.approx(1.5, abs=1e-9)

    def test_se_error_command(self, tmp_path):
        out = tmp_path / "se"
        rc = main(["se-error", "--torus", "24", "--out", str(out)])
        assert rc == 0
        rep = json.loads((out / "se_error.json").read_text())
        assert rep["E2"] >= 0

    def test_finite_dataset_gamma(self, tmp_path):
        out = tmp_path / "finite"
        rc = main(["simulate", "--nu", "1.5", "--kappa", "3", "--modes", "30", "--alpha", "0.3",
                   "--batch", "10", "--dataset-size", "100", "--steps", "40", "--out", str(out)])
        assert rc == 0
        meta = json.loads((out / "trajectory_se.meta.json").read_text())
        assert meta["parameters"]["gamma"] == pytest.approx(90 / 990)

    def test_batch_list_sweep(self, tmp_path):
        out = tmp_path / "budget"
        rc = main(["simulate", "--nu", "1.5", "--kappa", "0.375", "--modes", "100",
                   "--alpha", "0.05", "--beta", "0.9", "--batch-list", "8,16",
                   "--steps", "400", "--out", str(out), "--plot"])
        assert rc == 0
        assert (out / "trajectory_se_b8.csv").exists()
        assert (out / "trajectory_se_b16.csv").exists()
        assert (out / "budget_scaling.svg").exists()

    def test_phase_diagram_grid(self, tmp_path):
        out = tmp_path / "phase"
        rc = main(["phase-diagram", "--alpha", "0.2", "--gamma", "0.1", "--modes", "32",
                   "--out", str(out)])
        assert rc == 0
        rows = (out / "phase_diagram.csv").read_text().splitlines()
        assert rows[0] == "nu,zeta,phase,exponent,constant"
        labels = {r.split(",")[2] for r in rows[1:]}
        assert {"signal_dominated", "noise_dominated", "eventual_divergence",
                "immediate_divergence"} <= labels


class TestExitCodes:
    def test_validation_errors_exit_2(self, tmp_path):
        bad_inputs = [
            ["simulate", "--nu", "1.5"],  # missing kappa
            ["simulate", "--nu", "1.5", "--kappa", "3", "--beta", "2"],
            ["simulate", "--csv", str(tmp_path / "missing.csv")],
            ["simulate", "--nu", "1.5", "--kappa", "3", "--regime", "nope"],
            ["fit", "--nu", "1.5", "--kappa", "3", "--modes", "10", "--tail-start", "9"],
        ]
        for argv in bad_inputs:
            assert main(argv + ["--out", str(tmp_path / "x")]) == 2

    def test_domain_errors_exit_3(self, tmp_path):
        rc = main(["divergence", "--nu", "1.5", "--kappa", "3", "--modes", "50",
                   "--alpha", "0.01", "--gamma", "0.01", "--out", str(tmp_path / "y")])
        assert rc == 3

    def test_partial_outputs_removed_on_failure(self, tmp_path):
        out = tmp_path / "z"
        rc = main(["divergence", "--nu", "1.5", "--kappa", "3", "--modes", "50",
                   "--alpha", "0.01", "--gamma", "0.01", "--out", str(out)])
        assert rc == 3
        assert not (out / "manifest.json").exists()
        assert list(out.glob("*.csv")) == []

    def test_fuzzed_config_keys_exit_2(self, tmp_path):
        rng = np.random.default_rng(77)
        alphabet = "abcdefghijklmnopqrstuvwxyz_"
        for trial in range(8):
            key = "".join(rng.choice(list(alphabet), size=rng.integers(3, 12)))
            if key in {"nu", "kappa", "alpha", "beta", "gamma", "batch", "steps",
                       "runs", "seed", "out", "plot", "csv", "torus", "modes",
                       "regime", "command", "tau1", "tau2", "dataset_size",
                       "kernel_scale", "full_scale", "tail_start", "batch_list",
                       "grid_alpha", "grid_beta", "random_features", "c0_mode",
                       "Lambda", "K"}:
                continue
            f = tmp_path / f"fuzz{trial}.cfg"
            f.write_text(f"command = simulate\nnu = 1.5\nkappa = 3.0\n{key} = 1\n")
            assert main(["--config", str(f)]) == 2


class TestThreadCap:
    def test_thread_env_does_not_change_results(self, tmp_path, monkeypatch):
        args = ["stability-map", "--nu", "1.5", "--kappa", "3", "--modes", "30",
                "--batch", "10", "--grid-alpha", "0.2:3:6", "--grid-beta", "0:0.8:4",
                "--steps", "150"]
        out1, out2 = tmp_path / "t1", tmp_path / "t2"
        monkeypatch.setenv("SGDPHASELAB_THREADS", "1")
        assert main(args + ["--out", str(out1)]) == 0
        monkeypatch.setenv("SGDPHASELAB_THREADS", "7")
        assert main(args + ["--out", str(out2)]) == 0
        assert (out1 / "stability_map.csv").read_bytes() == (out2 / "stability_map.csv").read_bytes()

    def test_bad_thread_env_rejected(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SGDPHASELAB_THREADS", "lots")
        rc = main(["stability-map", "--nu", "1.5", "--kappa", "3", "--modes", "20",
                   "--batch", "10", "--grid-alpha", "0.2:1:3", "--grid-beta", "0:0.5:2",
                   "--steps", "50", "--out", str(tmp_path / "x")])
        assert rc == 2


class TestSvg:
    def test_deterministic_bytes(self):
        t = np.arange(1, 50, dtype=float)
        series = [("a", t, t**-0.5), ("b", t, 2 * t**-1.0)]
        one = loglog_chart(series, guides=[(-0.5, 1.0, 1.0, "slope -1/2")], title="x")
        two = loglog_chart(series, guides=[(-0.5, 1.0, 1.0, "slope -1/2")], title="x")
        assert one == two
        assert one.startswith("<svg") and one.rstrip().endswith("</svg>")

    def test_power_law_series_parallel_to_guide(self):
        # a pure power law renders parallel to the matching slope guide
        t = np.geomspace(1, 1e4, 100)
        chart = loglog_chart([("s", t, t**-0.25)], guides=[(-0.25, 1.0, 0.5, "slope -0.25")])
        lines = chart.splitlines()
        poly = next(ln for ln in lines if ln.startswith("<polyline"))
        pts = [tuple(map(float, p.split(","))) for p in poly.split('points="')[1].split('"')[0].split()]
        series_slope = (pts[-1][1] - pts[0][1]) / (pts[-1][0] - pts[0][0])
        guide = next(ln for ln in lines if "stroke-dasharray" in ln)
        x1 = float(guide.split('x1="')[1].split('"')[0])
        y1 = float(guide.split('y1="')[1].split('"')[0])
        x2 = float(guide.split('x2="')[1].split('"')[0])
        y2 = float(guide.split('y2="')[1].split('"')[0])
        guide_slope = (y2 - y1) / (x2 - x1)
        assert series_slope == pytest.approx(guide_slope, rel=1e-9)

    def test_empty_series_rejected(self):
        with pytest.raises(ValidationError):
            loglog_chart([])

    def test_non_positive_rejected(self):
        t = np.arange(1, 5, dtype=float)
        with pytest.raises(ValidationError):
            loglog_chart([("s", t, np.array([1.0, 0.0, 2.0, 3.0]))])

    def test_heatmap_shapes(self):
        cells = np.array([[1.0, 2.0], [3.0, math.nan], [0.5, 4.0]])
        out = heatmap_chart([0.1, 0.2, 0.3], [0.0, 0.5], cells, boundary=[(0.15, 0.0), (0.25, 0.5)])
        assert out.count("<rect") >= 7
        with pytest.raises(ValidationError):
            heatmap_chart([0.1], [0.0], np.array([[1.0, 2.0]]))
